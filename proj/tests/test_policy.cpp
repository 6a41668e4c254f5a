#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "rrpo/corpus.hpp"
#include "rrpo/finite_diff.hpp"
#include "rrpo/policy.hpp"

using namespace rrpo;

namespace {

const PolicyDims kToyDims{4, 6, 3, 5};

PolicyParams toy_policy(std::uint64_t seed = 11) { return policy_init(seed, kToyDims); }

// A reward model that ignores its input and predicts `target` with logit
// margin `confidence` via the head bias.
RmParams biased_rm(std::int64_t d_in, std::int64_t k, int target, double confidence) {
    RmParams p = rm_init(1, RmDims{d_in, 8, k});
    for (Array* a : p.arrays())
        for (double& x : a->v) x = 0.0;
    p.b_head.at(0, target) = confidence;
    return p;
}

}  // namespace

TEST_CASE("gumbel_softmax: determinism, simplex rows, low-temperature limit") {
    Tape t;
    auto logits = constant(t, Array::from(Shape::mat(1, 4), {0.3, -0.2, 1.1, 0.0}));

    Rng a(5, streams::kGumbelStep);
    Rng b(5, streams::kGumbelStep);
    auto ya = gumbel_softmax(t, logits, 1.0, a);
    auto yb = gumbel_softmax(t, logits, 1.0, b);
    REQUIRE(max_abs_diff(ya.value(), yb.value()) == 0.0);
    double sum = 0.0;
    for (double p : ya.value().v) sum += p;
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));

    // temp -> 0+ with the same noise concentrates on argmax(logits + g).
    Rng c(5, streams::kGumbelStep);
    Array noise(Shape::mat(1, 4));
    for (double& x : noise.v) x = c.gumbel();
    std::int64_t expect = 0;
    for (std::int64_t i = 1; i < 4; ++i)
        if (logits.value().v[static_cast<std::size_t>(i)] + noise.v[static_cast<std::size_t>(i)] >
            logits.value().v[static_cast<std::size_t>(expect)] + noise.v[static_cast<std::size_t>(expect)])
            expect = i;
    Rng d(5, streams::kGumbelStep);
    auto cold = gumbel_softmax(t, logits, 1e-4, d);
    REQUIRE(cold.value().v[static_cast<std::size_t>(expect)] > 0.999);

    REQUIRE_THROWS_AS(gumbel_softmax(t, logits, 0.0, a), std::invalid_argument);
}

TEST_CASE("Gumbel-max law: argmax frequencies match softmax probabilities") {
    Tape t;
    auto logits = constant(t, Array::vec({1.0, 0.0, 0.0}));
    auto probs = softmax(logits).value();
    Rng rng(77);
    std::vector<double> counts(3, 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double best = -1e300;
        int arg = 0;
        for (int k = 0; k < 3; ++k) {
            const double z = logits.value().v[static_cast<std::size_t>(k)] + rng.gumbel();
            if (z > best) {
                best = z;
                arg = k;
            }
        }
        counts[static_cast<std::size_t>(arg)] += 1.0;
    }
    for (int k = 0; k < 3; ++k)
        REQUIRE_THAT(counts[static_cast<std::size_t>(k)] / n, Catch::Matchers::WithinAbs(probs.v[static_cast<std::size_t>(k)], 0.02));
}

TEST_CASE("rollout shape contract and soft rows on the simplex") {
    PolicyParams p = policy_init(3, PolicyDims{32, 32, 5, 16});
    Tape t;
    PolicyNodes pn = policy_load(t, p, false);
    Rng rng(9);
    auto roll = rollout(t, pn, 2, 24, 1.0, rng);
    REQUIRE(roll.soft_tokens.shape() == Shape::mat(24, 32));
    for (std::int64_t r = 0; r < 24; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 32; ++c) sum += roll.soft_tokens.value().at(r, c);
        REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("same seed, different condition: same noise, different trajectory") {
    PolicyParams p = toy_policy();
    Tape t;
    PolicyNodes pn = policy_load(t, p, false);
    Rng r1(21), r2(21);
    auto a = rollout(t, pn, 0, 6, 1.0, r1);
    auto b = rollout(t, pn, 2, 6, 1.0, r2);
    REQUIRE(r1.index() == r2.index());  // identical draw pattern
    REQUIRE(max_abs_diff(a.soft_tokens.value(), b.soft_tokens.value()) > 1e-9);
}

TEST_CASE("straight-through rows are exact one-hots with nonzero gradients") {
    PolicyParams p = toy_policy();
    Tape t;
    PolicyNodes pn = policy_load(t, p);
    Rng rng(31);
    auto roll = rollout(t, pn, 1, 5, 1.0, rng, /*st=*/true);
    for (std::int64_t r = 0; r < 5; ++r) {
        int ones = 0;
        for (std::int64_t c = 0; c < kToyDims.vocab; ++c) {
            const double x = roll.soft_tokens.value().at(r, c);
            REQUIRE((x == 0.0 || x == 1.0));
            if (x == 1.0) ++ones;
        }
        REQUIRE(ones == 1);
    }
    auto frames = decode(roll.soft_tokens, pn.codebook);
    t.backward(mean_all(mul(frames, frames)).id);
    REQUIRE(l2_norm(pn.w_out.grad()) > 0.0);
}

TEST_CASE("decode: one-hot rows select codebook rows verbatim, uniform rows average them") {
    PolicyParams p = toy_policy();
    Tape t;
    auto cb = constant(t, p.codebook);

    Array hard(Shape::mat(2, 4), 0.0);
    hard.at(0, 2) = 1.0;
    hard.at(1, 0) = 1.0;
    auto picked = decode(constant(t, hard), cb);
    for (std::int64_t j = 0; j < kToyDims.d_feat; ++j) {
        REQUIRE(picked.value().at(0, j) == p.codebook.at(2, j));
        REQUIRE(picked.value().at(1, j) == p.codebook.at(0, j));
    }

    Array uniform(Shape::mat(1, 4), 0.25);
    auto avg = decode(constant(t, uniform), cb);
    for (std::int64_t j = 0; j < kToyDims.d_feat; ++j) {
        double mean = 0.0;
        for (std::int64_t c = 0; c < 4; ++c) mean += p.codebook.at(c, j);
        mean /= 4.0;
        REQUIRE_THAT(avg.value().at(0, j), Catch::Matchers::WithinAbs(mean, 1e-15));
    }
}

TEST_CASE("decode gradient w.r.t. soft tokens matches finite differences") {
    PolicyParams p = toy_policy();
    Array soft(Shape::mat(3, 4));
    Rng rng(41);
    for (double& x : soft.v) x = rng.uniform(0.0, 1.0);
    GraphBuilder f = [&](Tape& t, const std::vector<Tape::Id>& ids) {
        auto frames = decode(make_ref(t, ids[0]), constant(t, p.codebook));
        return sum_all(mul(frames, frames)).id;
    };
    auto report = finite_diff_check(f, {soft}, {"soft_tokens"}, 1e-5, 1e-4);
    REQUIRE(report.pass);
}

TEST_CASE("reward closed forms: confident RM near zero, uniform RM at -ln K") {
    Tape t;
    RmParams confident = biased_rm(5, 3, 1, 40.0);
    RmNodes rm = rm_load(t, confident, false);
    auto frames = constant(t, Array(Shape::mat(4, 5), 0.3));
    RewardSpec spec;
    spec.target = 1;
    spec.eps_ls = 0.0;
    auto r = reward(t, rm, frames, spec);
    REQUIRE(r.value().v[0] <= 0.0);  // -cross-entropy is bounded above by zero
    REQUIRE(r.value().v[0] > -1e-9);

    RmParams uniform = biased_rm(5, 5, 0, 0.0);
    RmNodes rmu = rm_load(t, uniform, false);
    auto frames5 = constant(t, Array(Shape::mat(4, 5), 0.3));
    RewardSpec spec5;
    spec5.target = 3;
    spec5.eps_ls = 0.0;
    auto ru = reward(t, rmu, frames5, spec5);
    REQUIRE_THAT(ru.value().v[0], Catch::Matchers::WithinAbs(-std::log(5.0), 1e-12));
}

TEST_CASE("plain-ls reward is strictly increasing in the target-class probability") {
    Tape t;
    double prev = -1e300;
    for (double margin = -2.0; margin <= 2.0; margin += 0.5) {
        auto logits = constant(t, Array::vec({margin, 0.0, 0.0, 0.0, 0.0}));
        auto r = scale(ls_loss(logits, smooth_class(0, 5, 0.1)), -1.0);
        REQUIRE(r.value().v[0] > prev);
        prev = r.value().v[0];
    }
}

TEST_CASE("reward gradient w.r.t. frames matches finite differences") {
    RmParams p = rm_init(51, RmDims{5, 8, 3});
    Array frames(Shape::mat(4, 5));
    Rng rng(52);
    for (double& x : frames.v) x = rng.uniform(-1.0, 1.0);
    GraphBuilder f = [&](Tape& t, const std::vector<Tape::Id>& ids) {
        RmNodes rm = rm_load(t, p, false);
        RewardSpec spec;
        spec.target = 2;
        return reward(t, rm, make_ref(t, ids[0]), spec).id;
    };
    auto report = finite_diff_check(f, {frames}, {"frames"}, 1e-5, 1e-4);
    INFO("max_rel_err=" << report.max_rel_err);
    REQUIRE(report.pass);
}

TEST_CASE("literal-eq5 reward rejects batches smaller than two") {
    Tape t;
    RmParams p = rm_init(61, RmDims{5, 8, 3});
    RmNodes rm = rm_load(t, p, false);
    auto frames = constant(t, Array(Shape::mat(4, 5), 0.1));
    RewardSpec spec;
    spec.mode = RewardSpec::Mode::kLiteralEq5;
    Rng rng(62);
    REQUIRE_THROWS_AS(reward_batch(t, rm, {frames}, {0}, spec, &rng), std::invalid_argument);
}

TEST_CASE("end-to-end policy gradient matches finite differences on a T=2 toy") {
    PolicyParams p = toy_policy(71);
    RmParams rm = rm_init(72, RmDims{kToyDims.d_feat, 8, kToyDims.k});
    const Rng noise_base(73);

    std::vector<Array> init;
    for (const Array* a : p.arrays()) init.push_back(*a);
    GraphBuilder f = [&](Tape& t, const std::vector<Tape::Id>& ids) {
        PolicyNodes pn;
        pn.dims = p.dims;
        Ref* refs[] = {&pn.emb, &pn.cond, &pn.w_x, &pn.w_h, &pn.b_h, &pn.w_out, &pn.b_out, &pn.codebook};
        for (std::size_t i = 0; i < ids.size(); ++i) *refs[i] = make_ref(t, ids[i]);
        RmNodes rmn = rm_load(t, rm, false);
        Rng noise = noise_base;  // pinned Gumbel draws
        auto roll = rollout(t, pn, 1, 2, 1.0, noise);
        RewardSpec spec;
        spec.target = 1;
        return reward(t, rmn, decode(roll.soft_tokens, pn.codebook), spec).id;
    };
    auto report = finite_diff_check(f, init, PolicyParams::array_names(), 1e-5, 1e-4);
    for (const auto& row : report.rows) {
        INFO(row.name << " max_rel_err=" << row.max_rel_err);
        CHECK(row.pass);
    }
    REQUIRE(report.pass);
}

TEST_CASE("T=1 rollout gradient w.r.t. the output projection passes finite differences") {
    PolicyParams p = toy_policy(81);
    RmParams rm = rm_init(82, RmDims{kToyDims.d_feat, 8, kToyDims.k});
    const Rng noise_base(83);
    GraphBuilder f = [&](Tape& t, const std::vector<Tape::Id>& ids) {
        PolicyParams q = p;
        PolicyNodes pn = policy_load(t, q, false);
        pn.w_out = make_ref(t, ids[0]);
        RmNodes rmn = rm_load(t, rm, false);
        Rng noise = noise_base;
        auto roll = rollout(t, pn, 0, 1, 1.0, noise);
        RewardSpec spec;
        spec.target = 0;
        return reward(t, rmn, decode(roll.soft_tokens, pn.codebook), spec).id;
    };
    auto report = finite_diff_check(f, {p.w_out}, {"w_out"}, 1e-5, 1e-4);
    REQUIRE(report.pass);
}

TEST_CASE("rrpo_step: frozen RM untouched, zero learning rate is a no-op") {
    PolicyParams p = toy_policy(91);
    RmParams rm = rm_init(92, RmDims{kToyDims.d_feat, 8, kToyDims.k});
    const RmParams rm_before = rm;
    RewardSpec spec;
    PolicyHyper hyper;
    hyper.rollout_batch = 3;
    hyper.traj_len = 4;

    {
        PolicyParams frozen_lr = p;
        Adam opt(AdamConfig{.lr = 0.0});
        Rng rng(93);
        StepReport report = rrpo_step(frozen_lr, rm, spec, opt, hyper, rng);
        REQUIRE_FALSE(report.skipped);
        REQUIRE(report.frozen_rm_grad_norm == 0.0);
        auto before = p.arrays(), after = frozen_lr.arrays();
        for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(max_abs_diff(*before[i], *after[i]) == 0.0);
    }
    {
        Adam opt(AdamConfig{.lr = 1e-3});
        Rng rng(94);
        PolicyParams updated = p;
        StepReport report = rrpo_step(updated, rm, spec, opt, hyper, rng);
        REQUIRE_FALSE(report.skipped);
        REQUIRE(report.grad_norm > 0.0);
        bool changed = false;
        auto before = p.arrays(), after = updated.arrays();
        for (std::size_t i = 0; i < before.size(); ++i)
            if (max_abs_diff(*before[i], *after[i]) > 0.0) changed = true;
        REQUIRE(changed);
        // The frozen reward model is bit-identical.
        auto rma = rm.arrays();
        auto rmb = rm_before.arrays();
        for (std::size_t i = 0; i < rma.size(); ++i) REQUIRE(max_abs_diff(*rma[i], *rmb[i]) == 0.0);
    }
}

TEST_CASE("sft: initial loss near ln V, and it decreases over 200 steps") {
    CorpusSpec spec = CorpusSpec::preset(Domain::kFinetune, 256, 101);
    spec.d = 5;
    spec.l_min = 8;
    spec.l_max = 16;
    Corpus corpus = gen_corpus_data(spec);

    PolicyParams p = policy_init(102, PolicyDims{8, 8, 5, 5});
    std::vector<FeatureSequence> frames(corpus.feats.begin(), corpus.feats.end());
    std::vector<int> labels(corpus.labels.begin(), corpus.labels.end());
    policy_fit_codebook(p, frames, 5, 103);

    PolicyHyper hyper;
    hyper.traj_len = 12;
    Adam opt(AdamConfig{.lr = 3e-3});
    Rng rng(104);
    double first = -1.0, last = -1.0;
    for (int step = 0; step < 200; ++step) {
        std::vector<FeatureSequence> batch;
        std::vector<int> batch_labels;
        for (int b = 0; b < 8; ++b) {
            const std::int64_t i = rng.uniform_int(0, corpus.size() - 1);
            batch.push_back(corpus.feats[static_cast<std::size_t>(i)]);
            batch_labels.push_back(corpus.labels[static_cast<std::size_t>(i)]);
        }
        const double loss = sft_step(p, batch, batch_labels, opt, hyper);
        if (step == 0) {
            first = loss;
            REQUIRE_THAT(loss, Catch::Matchers::WithinAbs(std::log(8.0), 0.3));
        }
        last = loss;
    }
    INFO("first=" << first << " last=" << last);
    REQUIRE(last < first - 0.1);
}

TEST_CASE("tokenize round trip: decoded tokens sit exactly on codebook rows") {
    PolicyParams p = toy_policy(111);
    Rng rng(112);
    Array frames(Shape::mat(6, kToyDims.d_feat));
    for (double& x : frames.v) x = rng.uniform(-1.0, 1.0);
    const std::vector<int> tokens = tokenize(frames, p.codebook);

    auto nearest_dist = [&](const double* row) {
        double best = 1e300;
        for (std::int64_t c = 0; c < kToyDims.vocab; ++c) {
            double dist = 0.0;
            for (std::int64_t j = 0; j < kToyDims.d_feat; ++j) {
                const double diff = row[j] - p.codebook.at(c, j);
                dist += diff * diff;
            }
            best = std::min(best, dist);
        }
        return best;
    };
    for (std::int64_t t = 0; t < 6; ++t) {
        const double* decoded = p.codebook.v.data() + tokens[static_cast<std::size_t>(t)] * kToyDims.d_feat;
        REQUIRE(nearest_dist(decoded) == 0.0);
        REQUIRE(nearest_dist(frames.v.data() + t * kToyDims.d_feat) >= 0.0);
    }
}

TEST_CASE("policy checkpoint round trip") {
    PolicyParams p = toy_policy(121);
    const auto path = std::filesystem::temp_directory_path() / "rrpo_test_policy.ckpt";
    policy_save(path, p);
    PolicyParams q = policy_from_checkpoint(path);
    REQUIRE(q.dims.vocab == p.dims.vocab);
    REQUIRE(q.dims.d_feat == p.dims.d_feat);
    auto pa = p.arrays(), qa = q.arrays();
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(max_abs_diff(*pa[i], *qa[i]) == 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("codebook stays within its magnitude bound after updates") {
    PolicyParams p = toy_policy(131);
    for (double& x : p.codebook.v) x = 50.0;  // force out of bounds
    clamp_codebook(p);
    for (double x : p.codebook.v) REQUIRE(std::abs(x) <= kCodebookBound);
}
