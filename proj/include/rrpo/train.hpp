#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rrpo/corpus.hpp"
#include "rrpo/errors.hpp"
#include "rrpo/optimizer.hpp"
#include "rrpo/regularization.hpp"
#include "rrpo/reward_model.hpp"

namespace rrpo {

// Index range [begin, end) into a corpus; file order is already shuffled.
struct CorpusSlice {
    const Corpus* corpus = nullptr;
    std::int64_t begin = 0;
    std::int64_t end = 0;

    std::int64_t size() const { return end - begin; }
    const FeatureSequence& feats(std::int64_t i) const { return corpus->feats[static_cast<std::size_t>(begin + i)]; }
    int label(std::int64_t i) const { return corpus->labels[static_cast<std::size_t>(begin + i)]; }
};

inline CorpusSlice train_split(const Corpus& c, double holdout_frac) {
    const auto holdout = static_cast<std::int64_t>(std::floor(static_cast<double>(c.size()) * holdout_frac));
    return CorpusSlice{&c, 0, c.size() - holdout};
}

inline CorpusSlice holdout_split(const Corpus& c, double holdout_frac) {
    const auto holdout = static_cast<std::int64_t>(std::floor(static_cast<double>(c.size()) * holdout_frac));
    return CorpusSlice{&c, c.size() - holdout, c.size()};
}

inline int rm_predict(const RmParams& params, const FeatureSequence& feats) {
    Tape t;
    RmNodes nodes = rm_load(t, params, false);
    const Array logits = rm_forward(t, nodes, feats).value();
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < logits.shape.dim[0]; ++i)
        if (logits.v[static_cast<std::size_t>(i)] > logits.v[static_cast<std::size_t>(best)]) best = i;
    return static_cast<int>(best);
}

inline double eval_rm_accuracy(const RmParams& params, const CorpusSlice& slice) {
    if (slice.size() == 0) throw std::invalid_argument("eval_rm_accuracy: empty slice");
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < slice.size(); ++i)
        if (rm_predict(params, slice.feats(i)) == slice.label(i)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(slice.size());
}

struct RmTrainOptions {
    std::int64_t steps = 800;
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    SerOptions ser;  // all regularizers off = plain cross-entropy
    std::int64_t eval_every = 100;
    double holdout_frac = 0.1;
    std::uint64_t seed = 1;
};

struct RmStepMetrics {
    std::int64_t step = 0;
    double loss = 0.0;
    double l_emo = 0.0;
    double l_adv = 0.0;
    double mean_lambda = 0.0;
    double holdout_acc = -1.0;  // < 0 when this step carried no evaluation
};

using RmTrainCallback = std::function<void(const RmStepMetrics&)>;

// Minimizes the configured objective on the train split with Adam. Throws
// NumericAbort on a non-finite loss. Returns final held-out accuracy.
inline double train_rm(RmParams& params, const Corpus& corpus, const RmTrainOptions& opt,
                       const RmTrainCallback& callback = {}) {
    const CorpusSlice train = train_split(corpus, opt.holdout_frac);
    const CorpusSlice holdout = holdout_split(corpus, opt.holdout_frac);
    if (train.size() < opt.batch_size) throw std::invalid_argument("train_rm: corpus smaller than one batch");
    Adam adam(AdamConfig{.lr = opt.lr});
    Rng base(opt.seed);
    for (std::int64_t step = 0; step < opt.steps; ++step) {
        Rng pick = base.substream(streams::kTrainStep + static_cast<std::uint64_t>(step));
        std::vector<FeatureSequence> batch;
        std::vector<int> labels;
        for (std::int64_t b = 0; b < opt.batch_size; ++b) {
            const std::int64_t i = pick.uniform_int(0, train.size() - 1);
            batch.push_back(train.feats(i));
            labels.push_back(train.label(i));
        }
        Tape t;
        RmNodes nodes = rm_load(t, params);
        Rng eam_rng = base.substream(streams::kEamStep + static_cast<std::uint64_t>(step));
        SerDiagnostics diag;
        auto loss = ser_loss(t, nodes, batch, labels, opt.ser, eam_rng, &diag);
        const double loss_value = loss.value().v[0];
        if (!std::isfinite(loss_value)) throw NumericAbort("train_rm: non-finite loss at step " + std::to_string(step));
        t.backward(loss.id);
        std::vector<Array> grads;
        for (const Ref& r : nodes.refs()) {
            grads.push_back(r.grad());
            if (!grads.back().all_finite())
                throw NumericAbort("train_rm: non-finite gradient at step " + std::to_string(step));
        }
        adam.step(params.arrays(), grads);

        if (callback) {
            RmStepMetrics m;
            m.step = step;
            m.loss = loss_value;
            m.l_emo = diag.l_emo;
            m.l_adv = diag.l_adv;
            m.mean_lambda = diag.mean_lambda;
            if (holdout.size() > 0 && (step + 1) % opt.eval_every == 0) m.holdout_acc = eval_rm_accuracy(params, holdout);
            callback(m);
        }
    }
    return holdout.size() > 0 ? eval_rm_accuracy(params, holdout) : -1.0;
}

}  // namespace rrpo
