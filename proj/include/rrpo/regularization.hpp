#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrpo/features.hpp"
#include "rrpo/reward_model.hpp"
#include "rrpo/rng.hpp"
#include "rrpo/tape.hpp"

namespace rrpo {

// ---------------------------------------------------------------------------
// Label smoothing
// ---------------------------------------------------------------------------

// Probability vector on the K-simplex.
struct SoftLabel {
    std::vector<double> probs;
    std::int64_t size() const { return static_cast<std::int64_t>(probs.size()); }
};

// y'_k = (1 - eps) * y_k + eps / K. Input must be exactly one-hot.
inline SoftLabel smooth_label(const std::vector<double>& one_hot, double eps) {
    if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("smooth_label: eps must be in [0, 1)");
    const std::size_t k = one_hot.size();
    if (k == 0) throw std::invalid_argument("smooth_label: empty label");
    int ones = 0;
    for (double x : one_hot) {
        if (x == 1.0)
            ++ones;
        else if (x != 0.0)
            throw std::invalid_argument("smooth_label: input is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument("smooth_label: input is not one-hot");
    SoftLabel out;
    out.probs.resize(k);
    for (std::size_t i = 0; i < k; ++i)
        out.probs[i] = (1.0 - eps) * one_hot[i] + eps / static_cast<double>(k);
    return out;
}

inline std::vector<double> one_hot(int cls, std::int64_t k) {
    if (cls < 0 || cls >= k) throw std::invalid_argument("one_hot: class out of range");
    std::vector<double> y(static_cast<std::size_t>(k), 0.0);
    y[static_cast<std::size_t>(cls)] = 1.0;
    return y;
}

inline SoftLabel smooth_class(int cls, std::int64_t k, double eps) { return smooth_label(one_hot(cls, k), eps); }

// Soft-target cross-entropy: -sum_k target_k * log softmax(logits)_k.
inline Ref ls_loss(Ref logits, const SoftLabel& target) {
    if (logits.shape().rank != 1 || logits.shape().dim[0] != target.size())
        throw std::invalid_argument("ls_loss: logits shape " + logits.shape().str() + " does not match target size " +
                                    std::to_string(target.size()));
    Tape& t = *logits.tape;
    auto log_p = log(softmax(logits));
    auto tgt = constant(t, Array::from(Shape::vec(target.size()), target.probs));
    return scale(sum_all(mul(tgt, log_p)), -1.0);
}

// ---------------------------------------------------------------------------
// Energy-Adaptive Mixup
// ---------------------------------------------------------------------------

struct EamConfig {
    double r_min_db = 0.0;
    double r_max_db = 10.0;
    double energy_floor = 1e-10;  // segments at or below this mean energy are skipped
};

// One sample's sampled mixing decision; energies are not part of the draw.
struct EamDraw {
    int j = 0;
    std::int64_t l_mix = 1;
    std::int64_t b_i = 0;
    std::int64_t b_j = 0;
    double r_db = 0.0;
};

// Samples the full plan for a batch in a fixed draw order: one Fisher-Yates
// permutation, then per sample l_mix, b_i, b_j, r. Draws are consumed for
// every sample, so replaying the rng replays the plan exactly.
inline std::vector<EamDraw> draw_eam_plan(const std::vector<std::int64_t>& lengths, const EamConfig& cfg, Rng& rng) {
    const int b = static_cast<int>(lengths.size());
    if (b < 2) throw std::invalid_argument("eam: batch size must be >= 2, got " + std::to_string(b));
    if (cfg.r_min_db > cfg.r_max_db) throw std::invalid_argument("eam: r_min_db > r_max_db");
    for (std::int64_t l : lengths)
        if (l < 2) throw std::invalid_argument("eam: every sequence needs length >= 2");

    std::vector<int> perm(static_cast<std::size_t>(b));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = b - 1; i >= 1; --i)
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);

    std::vector<EamDraw> plan(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        EamDraw& d = plan[static_cast<std::size_t>(i)];
        d.j = perm[static_cast<std::size_t>(i)];
        if (d.j == i) d.j = (i + 1) % b;
        const std::int64_t li = lengths[static_cast<std::size_t>(i)];
        const std::int64_t lj = lengths[static_cast<std::size_t>(d.j)];
        const double half = static_cast<double>(li) / 2.0;
        d.l_mix = half <= 1.0 ? 1 : static_cast<std::int64_t>(std::floor(rng.uniform(1.0, half)));
        if (half > 1.0 && d.l_mix < 1) d.l_mix = 1;
        if (d.l_mix > lj) d.l_mix = lj;
        d.b_i = rng.uniform_int(0, li - d.l_mix);
        d.b_j = rng.uniform_int(0, lj - d.l_mix);
        d.r_db = rng.uniform(cfg.r_min_db, cfg.r_max_db);
    }
    return plan;
}

struct MixAudit {
    int j = 0;
    std::int64_t l_mix = 0, b_i = 0, b_j = 0;
    double e_i = 0.0, e_j = 0.0, e_j_target = 0.0, r_db = 0.0;
    bool skipped = false;
};

struct MixBatch {
    std::vector<FeatureSequence> mixed;
    std::vector<SoftLabel> paired_labels;
    std::vector<double> lambdas;
    std::vector<MixAudit> audit;
};

namespace detail {

inline double segment_mean_energy(const Array& frames, std::int64_t begin, std::int64_t len) {
    const std::int64_t d = frames.shape.dim[1];
    double s = 0.0;
    for (std::int64_t t = begin; t < begin + len; ++t)
        for (std::int64_t c = 0; c < d; ++c) {
            const double x = frames.at(t, c);
            s += x * x;
        }
    return s / static_cast<double>(len * d);
}

}  // namespace detail

// Applies an already-sampled plan. Exposed so tests can pin the internals
// (e.g. replay with a different r to probe lambda's monotonicity).
inline MixBatch eam_mix_with_plan(const std::vector<FeatureSequence>& batch, const std::vector<int>& labels,
                                  std::int64_t k, const std::vector<EamDraw>& plan, const EamConfig& cfg,
                                  double eps_ls) {
    const std::size_t b = batch.size();
    if (labels.size() != b || plan.size() != b) throw std::invalid_argument("eam_mix: batch/labels/plan size mismatch");
    MixBatch out;
    out.mixed.reserve(b);
    out.paired_labels.reserve(b);
    out.lambdas.reserve(b);
    out.audit.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        const EamDraw& d = plan[i];
        const Array& fi = batch[i].frames;
        const Array& fj = batch[static_cast<std::size_t>(d.j)].frames;
        MixAudit a;
        a.j = d.j;
        a.l_mix = d.l_mix;
        a.b_i = d.b_i;
        a.b_j = d.b_j;
        a.r_db = d.r_db;
        a.e_i = detail::segment_mean_energy(fi, d.b_i, d.l_mix);
        a.e_j = detail::segment_mean_energy(fj, d.b_j, d.l_mix);
        if (a.e_i <= cfg.energy_floor || a.e_j <= cfg.energy_floor) {
            a.skipped = true;
            out.mixed.push_back(batch[i]);
            out.paired_labels.push_back(smooth_class(labels[i], k, eps_ls));
            out.lambdas.push_back(0.0);
            out.audit.push_back(a);
            continue;
        }
        a.e_j_target = a.e_i / std::pow(10.0, d.r_db / 10.0);
        const double seg_scale = std::sqrt(a.e_j_target / a.e_j);
        Array mixed = fi;
        const std::int64_t dims = fi.shape.dim[1];
        for (std::int64_t t = 0; t < d.l_mix; ++t)
            for (std::int64_t c = 0; c < dims; ++c) mixed.at(d.b_i + t, c) += seg_scale * fj.at(d.b_j + t, c);
        const double lambda = (static_cast<double>(d.l_mix) / static_cast<double>(fi.shape.dim[0])) *
                              (a.e_j_target / (a.e_i + a.e_j_target));
        out.mixed.push_back(FeatureSequence(std::move(mixed)));
        out.paired_labels.push_back(smooth_class(labels[static_cast<std::size_t>(d.j)], k, eps_ls));
        out.lambdas.push_back(lambda);
        out.audit.push_back(a);
    }
    return out;
}

// Energy-adaptive mixup over a batch: segment-level overlap-add at a sampled
// SNR, with mixing coefficient lambda = (l_mix / L_i) * (E'_j / (E_i + E'_j)).
inline MixBatch eam_mix(const std::vector<FeatureSequence>& batch, const std::vector<int>& labels, std::int64_t k,
                        const EamConfig& cfg, double eps_ls, Rng& rng) {
    std::vector<std::int64_t> lengths;
    lengths.reserve(batch.size());
    for (const auto& f : batch) lengths.push_back(f.length());
    return eam_mix_with_plan(batch, labels, k, draw_eam_plan(lengths, cfg, rng), cfg, eps_ls);
}

// ---------------------------------------------------------------------------
// Mixed loss (clean pass)
// ---------------------------------------------------------------------------

// L_emo = (1/B) sum_i [(1 - lambda_i) * LS(y_hat_i, y'_i) + lambda_i * LS(y_hat_i, y'_j)].
inline Ref emo_loss(const std::vector<Ref>& logits_batch, const std::vector<SoftLabel>& own_labels,
                    const MixBatch& mix) {
    const std::size_t b = logits_batch.size();
    if (own_labels.size() != b || mix.lambdas.size() != b || mix.paired_labels.size() != b)
        throw std::invalid_argument("emo_loss: batch length mismatch");
    if (b == 0) throw std::invalid_argument("emo_loss: empty batch");
    Ref acc;
    for (std::size_t i = 0; i < b; ++i) {
        const double lam = mix.lambdas[i];
        auto own = scale(ls_loss(logits_batch[i], own_labels[i]), 1.0 - lam);
        auto term = lam == 0.0 ? own : add(own, scale(ls_loss(logits_batch[i], mix.paired_labels[i]), lam));
        acc = i == 0 ? term : add(acc, term);
    }
    return scale(acc, 1.0 / static_cast<double>(b));
}

// ---------------------------------------------------------------------------
// FGM adversarial perturbation
// ---------------------------------------------------------------------------

struct AdvConfig {
    double eps_adv = 0.5;
    double alpha = 0.5;
};

// delta = eps_adv * g / ||g||_2 per sample, norm over the whole embedding
// sequence; gradients below the norm floor give delta = 0. The perturbation
// enters as a constant, so only h' carries gradient into the adversarial pass.
inline std::vector<Ref> fgm_perturb(const std::vector<Ref>& h_batch, const std::vector<Array>& loss_grads,
                                    double eps_adv) {
    if (eps_adv < 0.0) throw std::invalid_argument("fgm_perturb: eps_adv must be >= 0");
    if (h_batch.size() != loss_grads.size()) throw std::invalid_argument("fgm_perturb: batch size mismatch");
    std::vector<Ref> out;
    out.reserve(h_batch.size());
    for (std::size_t i = 0; i < h_batch.size(); ++i) {
        if (loss_grads[i].shape != h_batch[i].shape())
            throw std::invalid_argument("fgm_perturb: grad shape " + loss_grads[i].shape.str() +
                                        " does not match embedding " + h_batch[i].shape().str());
        Array delta(loss_grads[i].shape);
        const double norm = l2_norm(loss_grads[i]);
        if (norm >= kNormFloor) {
            const double s = eps_adv / norm;
            for (std::size_t e = 0; e < delta.v.size(); ++e) delta.v[e] = s * loss_grads[i].v[e];
        }
        out.push_back(add(h_batch[i], constant(*h_batch[i].tape, std::move(delta))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Combined SER objective
// ---------------------------------------------------------------------------

struct SerOptions {
    double eps_ls = 0.1;
    EamConfig eam;
    AdvConfig adv;
    bool enable_ls = true;
    bool enable_eam = true;
    bool enable_adv = true;
};

struct SerDiagnostics {
    double l_emo = 0.0;
    double l_adv = 0.0;
    double mean_lambda = 0.0;
    std::vector<double> lambdas;
    std::vector<MixAudit> audit;
    std::vector<Array> deltas;  // per-sample FGM perturbation actually applied
};

// L_ser = L_emo + alpha * L_adv over a batch of feature nodes, entirely on
// one tape: EAM mixing, encoder, head, the inner gradient for the FGM step
// and the head-only adversarial pass. Mixing coefficients are tape nodes, so
// gradients flow into non-frozen feature inputs through both the overlap-add
// and the energies. `pinned_deltas`, when given, replaces the inner-gradient
// perturbation; finite-difference checks need that, since the training
// objective treats delta as a constant.
inline Ref ser_loss_refs(Tape& t, const RmNodes& rm, const std::vector<Ref>& feats, const std::vector<int>& labels,
                         const SerOptions& opt, Rng& rng, SerDiagnostics* diag = nullptr,
                         const std::vector<Array>* pinned_deltas = nullptr) {
    const std::size_t b = feats.size();
    if (labels.size() != b) throw std::invalid_argument("ser_loss: batch/labels size mismatch");
    if (b == 0) throw std::invalid_argument("ser_loss: empty batch");
    if (opt.enable_eam && b < 2) throw std::invalid_argument("ser_loss: EAM needs batch size >= 2");
    const double eps = opt.enable_ls ? opt.eps_ls : 0.0;
    const std::int64_t k = rm.dims.k;

    // Mixing plan + per-sample mixed feature nodes and lambda nodes.
    std::vector<Ref> mixed(b);
    std::vector<Ref> lambda_nodes(b);
    std::vector<SoftLabel> own(b), paired(b);
    std::vector<MixAudit> audit(b);
    for (std::size_t i = 0; i < b; ++i) own[i] = smooth_class(labels[i], k, eps);

    if (opt.enable_eam) {
        std::vector<std::int64_t> lengths;
        for (const Ref& f : feats) lengths.push_back(f.shape().dim[0]);
        const std::vector<EamDraw> plan = draw_eam_plan(lengths, opt.eam, rng);
        for (std::size_t i = 0; i < b; ++i) {
            const EamDraw& d = plan[i];
            const Ref fi = feats[i];
            const Ref fj = feats[static_cast<std::size_t>(d.j)];
            MixAudit& a = audit[i];
            a.j = d.j;
            a.l_mix = d.l_mix;
            a.b_i = d.b_i;
            a.b_j = d.b_j;
            a.r_db = d.r_db;
            a.e_i = detail::segment_mean_energy(fi.value(), d.b_i, d.l_mix);
            a.e_j = detail::segment_mean_energy(fj.value(), d.b_j, d.l_mix);
            if (a.e_i <= opt.eam.energy_floor || a.e_j <= opt.eam.energy_floor) {
                a.skipped = true;
                mixed[i] = fi;
                lambda_nodes[i] = constant(t, Array::scalar(0.0));
                paired[i] = own[i];
                continue;
            }
            const std::int64_t li = fi.shape().dim[0];
            auto seg_i = slice(fi, 0, d.b_i, d.b_i + d.l_mix);
            auto seg_j = slice(fj, 0, d.b_j, d.b_j + d.l_mix);
            auto e_i = mean_all(mul(seg_i, seg_i));
            auto e_j = mean_all(mul(seg_j, seg_j));
            auto e_target = scale(e_i, std::pow(10.0, -d.r_db / 10.0));
            a.e_j_target = e_target.value().v[0];
            auto seg_scaled = mul_scalar_node(seg_j, sqrt(div(e_target, e_j)));
            auto window = add(seg_i, seg_scaled);
            std::vector<Ref> parts;
            if (d.b_i > 0) parts.push_back(slice(fi, 0, 0, d.b_i));
            parts.push_back(window);
            if (d.b_i + d.l_mix < li) parts.push_back(slice(fi, 0, d.b_i + d.l_mix, li));
            mixed[i] = parts.size() == 1 ? parts[0] : concat(parts, 0);
            lambda_nodes[i] = scale(div(e_target, add(e_i, e_target)),
                                    static_cast<double>(d.l_mix) / static_cast<double>(li));
            paired[i] = smooth_class(labels[static_cast<std::size_t>(d.j)], k, eps);
        }
    } else {
        for (std::size_t i = 0; i < b; ++i) {
            mixed[i] = feats[i];
            lambda_nodes[i] = constant(t, Array::scalar(0.0));
            paired[i] = own[i];
        }
    }

    // Clean pass: encode once, keep h' for the adversarial step.
    std::vector<Ref> h_batch(b), logits(b);
    for (std::size_t i = 0; i < b; ++i) {
        h_batch[i] = rm_encode(t, rm, mixed[i]);
        logits[i] = rm_classify(t, rm, h_batch[i]);
    }
    auto mix_term = [&](Ref lg, std::size_t i) {
        auto one = constant(t, Array::scalar(1.0));
        auto own_term = mul(sub(one, lambda_nodes[i]), ls_loss(lg, own[i]));
        auto pair_term = mul(lambda_nodes[i], ls_loss(lg, paired[i]));
        return add(own_term, pair_term);
    };
    Ref l_emo;
    for (std::size_t i = 0; i < b; ++i) {
        auto term = mix_term(logits[i], i);
        l_emo = i == 0 ? term : add(l_emo, term);
    }
    l_emo = scale(l_emo, 1.0 / static_cast<double>(b));

    Ref l_ser = l_emo;
    double l_adv_value = 0.0;
    std::vector<Array> deltas;
    if (opt.enable_adv) {
        if (pinned_deltas) {
            if (pinned_deltas->size() != b) throw std::invalid_argument("ser_loss: pinned delta count mismatch");
            deltas = *pinned_deltas;
        } else {
            const std::vector<Array> adj = t.adjoints(l_emo.id);
            deltas.reserve(b);
            for (std::size_t i = 0; i < b; ++i) {
                const Array& g = adj[static_cast<std::size_t>(h_batch[i].id)];
                Array delta(h_batch[i].shape());
                if (!g.empty()) {
                    const double norm = l2_norm(g);
                    if (norm >= kNormFloor) {
                        const double s = opt.adv.eps_adv / norm;
                        for (std::size_t e = 0; e < delta.v.size(); ++e) delta.v[e] = s * g.v[e];
                    }
                }
                deltas.push_back(std::move(delta));
            }
        }
        Ref l_adv;
        for (std::size_t i = 0; i < b; ++i) {
            auto h_adv = add(h_batch[i], constant(t, deltas[i]));
            auto logits_adv = rm_classify(t, rm, h_adv);
            auto term = mix_term(logits_adv, i);
            l_adv = i == 0 ? term : add(l_adv, term);
        }
        l_adv = scale(l_adv, 1.0 / static_cast<double>(b));
        l_adv_value = l_adv.value().v[0];
        l_ser = add(l_emo, scale(l_adv, opt.adv.alpha));
    }

    if (diag) {
        diag->l_emo = l_emo.value().v[0];
        diag->l_adv = l_adv_value;
        diag->lambdas.clear();
        double lam_sum = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            diag->lambdas.push_back(lambda_nodes[i].value().v[0]);
            lam_sum += diag->lambdas.back();
        }
        diag->mean_lambda = lam_sum / static_cast<double>(b);
        diag->audit = audit;
        diag->deltas = deltas;
    }
    return l_ser;
}

inline Ref ser_loss(Tape& t, const RmNodes& rm, const std::vector<FeatureSequence>& batch,
                    const std::vector<int>& labels, const SerOptions& opt, Rng& rng, SerDiagnostics* diag = nullptr,
                    const std::vector<Array>* pinned_deltas = nullptr) {
    std::vector<Ref> feats;
    feats.reserve(batch.size());
    for (const auto& f : batch) feats.push_back(constant(t, f.frames));
    return ser_loss_refs(t, rm, feats, labels, opt, rng, diag, pinned_deltas);
}

}  // namespace rrpo
