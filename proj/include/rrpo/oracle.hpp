#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rrpo/corpus.hpp"
#include "rrpo/policy.hpp"
#include "rrpo/train.hpp"

namespace rrpo {

// Independent judge standing in for human perception: an RM-shaped
// classifier that never sees the shortcut channel, plus the clean-corpus
// artifact-energy reference band.
struct OracleJudge {
    RmParams params;        // d_in = D - 1: genuine dims only
    double natural_band = 0.0;  // mean artifact energy of the clean corpus
};

// Drops the shortcut channel (dim D-1). The oracle consumes only this view,
// which makes its blindness exact rather than approximate.
inline FeatureSequence strip_shortcut(const FeatureSequence& feats) {
    const Array& f = feats.frames;
    const std::int64_t l = f.shape.dim[0], d = f.shape.dim[1];
    Array out(Shape::mat(l, d - 1));
    for (std::int64_t t = 0; t < l; ++t)
        for (std::int64_t c = 0; c + 1 < d; ++c) out.at(t, c) = f.at(t, c);
    return FeatureSequence(std::move(out));
}

inline Corpus strip_shortcut(const Corpus& c) {
    Corpus out;
    out.d = c.d - 1;
    out.labels = c.labels;
    out.feats.reserve(c.feats.size());
    for (const auto& f : c.feats) out.feats.push_back(strip_shortcut(f));
    return out;
}

inline Array oracle_logits(const OracleJudge& oracle, const FeatureSequence& feats) {
    Tape t;
    RmNodes nodes = rm_load(t, oracle.params, false);
    return rm_forward(t, nodes, strip_shortcut(feats)).value();
}

inline int oracle_predict(const OracleJudge& oracle, const FeatureSequence& feats) {
    const Array logits = oracle_logits(oracle, feats);
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < logits.shape.dim[0]; ++i)
        if (logits.v[static_cast<std::size_t>(i)] > logits.v[static_cast<std::size_t>(best)]) best = i;
    return static_cast<int>(best);
}

struct OracleTrainOptions {
    std::int64_t max_steps = 2000;       // desk-scale calibration budget
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    double target_accuracy = 0.9;
    std::int64_t check_every = 100;
    double holdout_frac = 0.15;
    std::uint64_t seed = 97;
    std::int64_t d_h = 32;
    std::int64_t k = 5;
};

struct OracleTrainReport {
    bool reached = false;
    double holdout_acc = 0.0;
    std::int64_t steps_used = 0;
};

// Trains the judge on genuine channels of clean data with plain
// cross-entropy until held-out accuracy reaches the target. Failing the
// budget is a calibration failure the caller must surface.
inline OracleTrainReport train_oracle(OracleJudge& oracle, const Corpus& clean, const OracleTrainOptions& opt = {}) {
    const Corpus stripped = strip_shortcut(clean);
    oracle.params = rm_init(opt.seed, RmDims{stripped.d, opt.d_h, opt.k});
    double band = 0.0;
    for (const auto& f : clean.feats) band += artifact_energy(f);
    oracle.natural_band = band / static_cast<double>(clean.size());

    const CorpusSlice holdout = holdout_split(stripped, opt.holdout_frac);
    OracleTrainReport report;
    RmTrainOptions train_opt;
    train_opt.batch_size = opt.batch_size;
    train_opt.lr = opt.lr;
    train_opt.eval_every = opt.check_every;
    train_opt.holdout_frac = opt.holdout_frac;
    train_opt.seed = opt.seed;
    train_opt.ser.enable_ls = false;
    train_opt.ser.enable_eam = false;
    train_opt.ser.enable_adv = false;
    for (std::int64_t used = 0; used < opt.max_steps; used += opt.check_every) {
        train_opt.steps = opt.check_every;
        train_opt.seed = opt.seed + static_cast<std::uint64_t>(used);  // fresh batch streams per chunk
        train_rm(oracle.params, stripped, train_opt);
        report.steps_used = used + opt.check_every;
        report.holdout_acc = eval_rm_accuracy(oracle.params, holdout);
        if (report.holdout_acc >= opt.target_accuracy) {
            report.reached = true;
            break;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Hacking gap
// ---------------------------------------------------------------------------

struct HackingReport {
    double mean_rm_reward = 0.0;
    double oracle_accuracy = 0.0;
    double mean_artifact_energy = 0.0;
    double natural_band = 0.0;
    std::int64_t n_rollouts = 0;
};

// Rolls the policy out (hard tokens), scores each sequence with the frozen
// RM reward, the oracle's class judgment, and the artifact-energy meter. The
// hacking signature is high reward with low oracle accuracy and elevated
// artifact energy.
inline HackingReport hacking_gap(const PolicyParams& policy, const RmParams& frozen_rm, const OracleJudge& oracle,
                                 std::int64_t n_rollouts, const RewardSpec& spec, std::int64_t traj_len, double temp,
                                 Rng& rng) {
    HackingReport report;
    report.natural_band = oracle.natural_band;
    report.n_rollouts = n_rollouts;
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < n_rollouts; ++i) {
        const int condition = static_cast<int>(i % policy.dims.k);
        Tape t;
        PolicyNodes pn = policy_load(t, policy, false);
        RmNodes rm = rm_load(t, frozen_rm, false);
        auto roll = rollout(t, pn, condition, traj_len, temp, rng, /*st=*/true);
        auto frames = decode(roll.soft_tokens, pn.codebook);
        RewardSpec one = spec;
        one.mode = RewardSpec::Mode::kPlainLs;
        one.target = condition;
        report.mean_rm_reward += reward(t, rm, frames, one).value().v[0];
        const FeatureSequence decoded{frames.value()};
        if (oracle_predict(oracle, decoded) == condition) ++hits;
        report.mean_artifact_energy += artifact_energy(decoded);
    }
    report.mean_rm_reward /= static_cast<double>(n_rollouts);
    report.mean_artifact_energy /= static_cast<double>(n_rollouts);
    report.oracle_accuracy = static_cast<double>(hits) / static_cast<double>(n_rollouts);
    return report;
}

}  // namespace rrpo
