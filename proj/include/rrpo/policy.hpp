#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrpo/corpus.hpp"
#include "rrpo/optimizer.hpp"
#include "rrpo/regularization.hpp"
#include "rrpo/reward_model.hpp"

namespace rrpo {

constexpr double kCodebookBound = 10.0;  // decoder rows stay within this magnitude

struct PolicyDims {
    std::int64_t vocab = 32;
    std::int64_t d_e = 32;
    std::int64_t k = 5;
    std::int64_t d_feat = 16;
};

// Autoregressive token policy: embedded previous soft token plus a class
// conditioning row drive a tanh recurrent core; a linear head emits token
// logits; the codebook decodes token distributions into feature frames.
struct PolicyParams {
    PolicyDims dims;
    Array emb;       // vocab x d_e
    Array cond;      // k x d_e
    Array w_x, w_h;  // d_e x d_e
    Array b_h;       // 1 x d_e
    Array w_out;     // d_e x vocab
    Array b_out;     // 1 x vocab
    Array codebook;  // vocab x d_feat

    std::vector<Array*> arrays() { return {&emb, &cond, &w_x, &w_h, &b_h, &w_out, &b_out, &codebook}; }
    std::vector<const Array*> arrays() const { return {&emb, &cond, &w_x, &w_h, &b_h, &w_out, &b_out, &codebook}; }
    static std::vector<std::string> array_names() {
        return {"emb", "cond", "w_x", "w_h", "b_h", "w_out", "b_out", "codebook"};
    }
};

inline void clamp_codebook(PolicyParams& p) {
    for (double& x : p.codebook.v) x = std::clamp(x, -kCodebookBound, kCodebookBound);
}

inline PolicyParams policy_init(std::uint64_t seed, const PolicyDims& dims) {
    if (dims.vocab <= 0 || dims.d_e <= 0 || dims.k <= 0 || dims.d_feat <= 0)
        throw std::invalid_argument("policy_init: dims must be positive");
    PolicyParams p;
    p.dims = dims;
    Rng base(seed);
    int idx = 0;
    auto w = [&](std::int64_t r, std::int64_t c) {
        Rng stream = base.substream(streams::kParamInit + static_cast<std::uint64_t>(idx++));
        return detail::glorot_uniform(Shape::mat(r, c), stream);
    };
    p.emb = w(dims.vocab, dims.d_e);
    p.cond = w(dims.k, dims.d_e);
    p.w_x = w(dims.d_e, dims.d_e);
    p.w_h = w(dims.d_e, dims.d_e);
    p.b_h = Array(Shape::mat(1, dims.d_e));
    ++idx;
    p.w_out = w(dims.d_e, dims.vocab);
    p.b_out = Array(Shape::mat(1, dims.vocab));
    ++idx;
    p.codebook = w(dims.vocab, dims.d_feat);
    clamp_codebook(p);
    return p;
}

// Seeds the codebook with k-means centroids over corpus frames so nearest-row
// tokenization and decoding start out corpus-shaped.
inline void policy_fit_codebook(PolicyParams& p, const std::vector<FeatureSequence>& corpus, int iters,
                                std::uint64_t seed) {
    std::vector<const double*> frames;
    for (const auto& f : corpus)
        for (std::int64_t t = 0; t < f.length(); ++t) frames.push_back(f.frames.v.data() + t * f.dims());
    if (frames.empty()) throw std::invalid_argument("policy_fit_codebook: empty corpus");
    const std::int64_t v = p.dims.vocab, d = p.dims.d_feat;
    Rng rng(seed, streams::kParamInit);
    for (std::int64_t c = 0; c < v; ++c) {
        const double* f = frames[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - 1))];
        for (std::int64_t j = 0; j < d; ++j) p.codebook.at(c, j) = f[j];
    }
    std::vector<std::int64_t> assign(frames.size());
    for (int it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < frames.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::int64_t c = 0; c < v; ++c) {
                double dist = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    const double diff = frames[i][j] - p.codebook.at(c, j);
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    assign[i] = c;
                }
            }
        }
        Array sums(Shape::mat(v, d));
        std::vector<std::int64_t> counts(static_cast<std::size_t>(v), 0);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            ++counts[static_cast<std::size_t>(assign[i])];
            for (std::int64_t j = 0; j < d; ++j) sums.at(assign[i], j) += frames[i][j];
        }
        for (std::int64_t c = 0; c < v; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                for (std::int64_t j = 0; j < d; ++j)
                    p.codebook.at(c, j) = sums.at(c, j) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    clamp_codebook(p);
}

struct PolicyNodes {
    PolicyDims dims;
    Ref emb, cond, w_x, w_h, b_h, w_out, b_out, codebook;
};

inline PolicyNodes policy_load(Tape& t, const PolicyParams& p, bool requires_grad = true) {
    PolicyNodes n;
    n.dims = p.dims;
    Ref* dst[] = {&n.emb, &n.cond, &n.w_x, &n.w_h, &n.b_h, &n.w_out, &n.b_out, &n.codebook};
    auto src = p.arrays();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = leaf(t, *src[i], requires_grad);
    return n;
}

// Relaxed one-hot sample: softmax((logits + Gumbel) / temp). In
// straight-through mode the forward value is the exact argmax one-hot while
// the gradient flows through the soft sample.
inline Ref gumbel_softmax(Tape& t, Ref logits, double temp, Rng& rng, bool st = false) {
    if (temp <= 0.0) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
    Array noise(logits.shape());
    for (double& x : noise.v) x = rng.gumbel();
    auto z = scale(add(logits, constant(t, std::move(noise))), 1.0 / temp);
    auto y = softmax(z);
    return st ? straight_through(y) : y;
}

struct RolloutResult {
    Ref soft_tokens;  // traj_len x vocab
    int condition = 0;
    double temperature = 1.0;
};

// Autoregressive rollout, fully on-tape so d(tokens)/d(params) exists.
inline RolloutResult rollout(Tape& t, const PolicyNodes& p, int condition, std::int64_t traj_len, double temp,
                             Rng& rng, bool st = false) {
    if (traj_len < 1) throw std::invalid_argument("rollout: traj_len must be >= 1");
    if (condition < 0 || condition >= p.dims.k) throw std::invalid_argument("rollout: condition out of range");
    auto cond_row = slice(p.cond, 0, condition, condition + 1);
    Ref prev = constant(t, Array(Shape::mat(1, p.dims.vocab), 0.0));
    Ref state = constant(t, Array(Shape::mat(1, p.dims.d_e), 0.0));
    std::vector<Ref> tokens;
    tokens.reserve(static_cast<std::size_t>(traj_len));
    for (std::int64_t step = 0; step < traj_len; ++step) {
        auto x = add(matmul(prev, p.emb), cond_row);
        state = tanh(add(add(matmul(x, p.w_x), matmul(state, p.w_h)), p.b_h));
        auto logits = add(matmul(state, p.w_out), p.b_out);
        prev = gumbel_softmax(t, logits, temp, rng, st);
        tokens.push_back(prev);
    }
    RolloutResult r;
    r.soft_tokens = tokens.size() == 1 ? tokens[0] : concat(tokens, 0);
    r.condition = condition;
    r.temperature = temp;
    return r;
}

// Token distributions -> feature frames: soft_tokens (T x V) * codebook (V x D).
inline Ref decode(Ref soft_tokens, Ref codebook) { return matmul(soft_tokens, codebook); }

// Nearest codebook row per frame.
inline std::vector<int> tokenize(const Array& frames, const Array& codebook) {
    const std::int64_t l = frames.shape.dim[0], d = frames.shape.dim[1];
    const std::int64_t v = codebook.shape.dim[0];
    if (codebook.shape.dim[1] != d)
        throw std::invalid_argument("tokenize: frame dims " + frames.shape.str() + " vs codebook " + codebook.shape.str());
    std::vector<int> out(static_cast<std::size_t>(l));
    for (std::int64_t t = 0; t < l; ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < v; ++c) {
            double dist = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double diff = frames.at(t, j) - codebook.at(c, j);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                out[static_cast<std::size_t>(t)] = static_cast<int>(c);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

struct RewardSpec {
    enum class Mode { kPlainLs, kLiteralEq5 };
    Mode mode = Mode::kPlainLs;
    int target = 0;
    double eps_ls = 0.1;
    EamConfig eam;
    AdvConfig adv;
};

// Plain-LS reward for one decoded sequence: R = -LS(rm(frames), smoothed target).
inline Ref reward(Tape& t, const RmNodes& frozen_rm, Ref frames, const RewardSpec& spec) {
    auto logits = rm_forward(t, frozen_rm, frames);
    return scale(ls_loss(logits, smooth_class(spec.target, frozen_rm.dims.k, spec.eps_ls)), -1.0);
}

// Batch reward; literal-eq5 mode scores the batch with the full hybrid
// objective (R = -L_ser) and therefore needs B >= 2 and an rng for the
// mixup draw.
inline Ref reward_batch(Tape& t, const RmNodes& frozen_rm, const std::vector<Ref>& frames,
                        const std::vector<int>& targets, const RewardSpec& spec, Rng* rng) {
    if (frames.empty() || frames.size() != targets.size())
        throw std::invalid_argument("reward_batch: batch/targets size mismatch");
    if (spec.mode == RewardSpec::Mode::kLiteralEq5) {
        if (frames.size() < 2) throw std::invalid_argument("reward_batch: literal-eq5 needs batch size >= 2");
        if (!rng) throw std::invalid_argument("reward_batch: literal-eq5 needs an rng");
        SerOptions opt;
        opt.eps_ls = spec.eps_ls;
        opt.eam = spec.eam;
        opt.adv = spec.adv;
        return scale(ser_loss_refs(t, frozen_rm, frames, targets, opt, *rng), -1.0);
    }
    Ref acc;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        RewardSpec one = spec;
        one.target = targets[i];
        auto r = reward(t, frozen_rm, frames[i], one);
        acc = i == 0 ? r : add(acc, r);
    }
    return scale(acc, 1.0 / static_cast<double>(frames.size()));
}

// ---------------------------------------------------------------------------
// Optimization steps
// ---------------------------------------------------------------------------

struct PolicyHyper {
    double lr = 1e-3;
    std::int64_t rollout_batch = 8;
    std::int64_t traj_len = 24;
    double temp = 1.0;
    bool straight_through = false;
};

struct StepReport {
    double mean_reward = 0.0;
    double grad_norm = 0.0;
    double frozen_rm_grad_norm = 0.0;
    bool skipped = false;
};

// One differentiable policy-optimization step: rollout batch -> decode ->
// reward -> backward -> Adam update on the policy parameters only. Targets
// are drawn uniformly per rollout and condition the policy.
inline StepReport rrpo_step(PolicyParams& policy, const RmParams& frozen_rm, const RewardSpec& spec, Adam& opt,
                            const PolicyHyper& hyper, Rng& rng) {
    Tape t;
    PolicyNodes pn = policy_load(t, policy);
    RmNodes rm = rm_load(t, frozen_rm, false);
    std::vector<Ref> frames;
    std::vector<int> targets;
    for (std::int64_t b = 0; b < hyper.rollout_batch; ++b) {
        const int target = static_cast<int>(rng.uniform_int(0, policy.dims.k - 1));
        auto roll = rollout(t, pn, target, hyper.traj_len, hyper.temp, rng, hyper.straight_through);
        frames.push_back(decode(roll.soft_tokens, pn.codebook));
        targets.push_back(target);
    }
    auto r = reward_batch(t, rm, frames, targets, spec, &rng);
    auto loss = scale(r, -1.0);
    t.backward(loss.id);

    StepReport report;
    report.mean_reward = r.value().v[0];
    std::vector<Array> grads;
    Ref prefs[] = {pn.emb, pn.cond, pn.w_x, pn.w_h, pn.b_h, pn.w_out, pn.b_out, pn.codebook};
    double norm_sq = 0.0;
    bool finite = std::isfinite(report.mean_reward);
    for (const Ref& pr : prefs) {
        grads.push_back(pr.grad());
        if (!grads.back().all_finite()) finite = false;
        for (double g : grads.back().v) norm_sq += g * g;
    }
    report.grad_norm = std::sqrt(norm_sq);
    double rm_norm_sq = 0.0;
    for (const Ref& rr : rm.refs())
        for (double g : rr.grad().v) rm_norm_sq += g * g;
    report.frozen_rm_grad_norm = std::sqrt(rm_norm_sq);

    if (!finite) {
        report.skipped = true;
        return report;
    }
    opt.step(policy.arrays(), grads);
    clamp_codebook(policy);
    return report;
}

// Teacher-forced next-token cross-entropy on nearest-codebook tokens; the
// pre-RL initialization mirroring an SFT warm start.
inline double sft_step(PolicyParams& policy, const std::vector<FeatureSequence>& batch,
                       const std::vector<int>& labels, Adam& opt, const PolicyHyper& hyper) {
    if (batch.empty() || batch.size() != labels.size())
        throw std::invalid_argument("sft_step: batch/labels size mismatch");
    Tape t;
    PolicyNodes pn = policy_load(t, policy);
    Ref total;
    std::int64_t terms = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const std::vector<int> tokens = tokenize(batch[s].frames, policy.codebook);
        const std::int64_t steps = std::min<std::int64_t>(static_cast<std::int64_t>(tokens.size()), hyper.traj_len);
        auto cond_row = slice(pn.cond, 0, labels[s], labels[s] + 1);
        Ref prev = constant(t, Array(Shape::mat(1, policy.dims.vocab), 0.0));
        Ref state = constant(t, Array(Shape::mat(1, policy.dims.d_e), 0.0));
        for (std::int64_t step = 0; step < steps; ++step) {
            auto x = add(matmul(prev, pn.emb), cond_row);
            state = tanh(add(add(matmul(x, pn.w_x), matmul(state, pn.w_h)), pn.b_h));
            auto logits = add(matmul(state, pn.w_out), pn.b_out);
            auto ce = ls_loss(reshape(logits, Shape::vec(policy.dims.vocab)),
                              smooth_class(tokens[static_cast<std::size_t>(step)], policy.dims.vocab, 0.0));
            total = terms == 0 ? ce : add(total, ce);
            ++terms;
            Array hard(Shape::mat(1, policy.dims.vocab), 0.0);
            hard.at(0, tokens[static_cast<std::size_t>(step)]) = 1.0;
            prev = constant(t, std::move(hard));
        }
    }
    auto loss = scale(total, 1.0 / static_cast<double>(terms));
    t.backward(loss.id);
    std::vector<Array> grads;
    Ref prefs[] = {pn.emb, pn.cond, pn.w_x, pn.w_h, pn.b_h, pn.w_out, pn.b_out, pn.codebook};
    for (const Ref& pr : prefs) grads.push_back(pr.grad());
    opt.step(policy.arrays(), grads);
    clamp_codebook(policy);
    return loss.value().v[0];
}

// ---------------------------------------------------------------------------
// Checkpointing (same binary container as the reward model)
// ---------------------------------------------------------------------------

inline void policy_save(const std::filesystem::path& path, const PolicyParams& p) {
    save_checkpoint(path,
                    {static_cast<std::uint32_t>(p.dims.vocab), static_cast<std::uint32_t>(p.dims.d_e),
                     static_cast<std::uint32_t>(p.dims.k)},
                    p.arrays());
}

inline PolicyParams policy_from_checkpoint(const std::filesystem::path& path) {
    const CheckpointData data = load_checkpoint(path);
    if (data.arrays.size() != 8)
        throw std::runtime_error("checkpoint: expected 8 policy arrays, found " + std::to_string(data.arrays.size()) +
                                 " in " + path.string());
    PolicyDims dims;
    dims.vocab = data.dims[0];
    dims.d_e = data.dims[1];
    dims.k = data.dims[2];
    dims.d_feat = data.arrays.back().shape.dim[1];
    PolicyParams p = policy_init(0, dims);
    auto dst = p.arrays();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (data.arrays[i].shape != dst[i]->shape)
            throw std::runtime_error("checkpoint: array " + PolicyParams::array_names()[i] + " has shape " +
                                     data.arrays[i].shape.str() + ", expected " + dst[i]->shape.str());
        *dst[i] = data.arrays[i];
    }
    return p;
}

}  // namespace rrpo
