#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <vector>

#include "rrpo/finite_diff.hpp"
#include "rrpo/regularization.hpp"
#include "rrpo/reward_model.hpp"
#include "rrpo/rng.hpp"

using namespace rrpo;

namespace {

Array random_frames(std::int64_t l, std::int64_t d, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Array a(Shape::mat(l, d));
    for (double& x : a.v) x = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_CASE("rm_init is deterministic per seed and seeds differ") {
    const RmDims dims{16, 32, 5};
    RmParams a = rm_init(123, dims);
    RmParams b = rm_init(123, dims);
    RmParams c = rm_init(124, dims);
    auto pa = a.arrays(), pb = b.arrays(), pc = c.arrays();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->shape == pb[i]->shape);
        REQUIRE(max_abs_diff(*pa[i], *pb[i]) == 0.0);
        if (max_abs_diff(*pa[i], *pc[i]) > 0.0) any_diff = true;
    }
    REQUIRE(any_diff);
}

TEST_CASE("parameter count for dims (16,32,5) is frozen") {
    const RmDims dims{16, 32, 5};
    // Independently: input proj (16+4)x32 + 32, four 32x32 attention mats,
    // ff 32x64 + 64 + 64x32 + 32, head 32x5 + 5.
    const std::int64_t expected = 640 + 32 + 4 * 1024 + 2048 + 64 + 2048 + 32 + 160 + 5;
    REQUIRE(expected == 9125);
    REQUIRE(rm_param_count(dims) == expected);

    RmParams p = rm_init(7, dims);
    std::int64_t total = 0;
    for (const Array* a : p.arrays()) total += static_cast<std::int64_t>(a->size());
    REQUIRE(total == expected);
}

TEST_CASE("zero weights and zero input give a zero embedding") {
    RmDims dims{8, 8, 3};
    RmParams p = rm_init(1, dims);
    for (Array* a : p.arrays())
        for (double& x : a->v) x = 0.0;
    Tape t;
    RmNodes nodes = rm_load(t, p);
    auto h = rm_encode(t, nodes, constant(t, Array(Shape::mat(6, 8), 0.0)));
    REQUIRE(h.shape() == Shape::mat(6, 8));
    for (double x : h.value().v) REQUIRE(x == 0.0);

    auto logits = rm_classify(t, nodes, h);
    for (double x : logits.value().v) REQUIRE(x == 0.0);
    auto probs = softmax(logits);
    for (double x : probs.value().v) REQUIRE_THAT(x, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
}

TEST_CASE("encoder output shape and determinism") {
    RmDims dims{16, 32, 5};
    RmParams p = rm_init(5, dims);
    Rng rng(6);
    Array frames = random_frames(10, 16, rng);
    Tape t1, t2;
    auto h1 = rm_encode(t1, rm_load(t1, p), constant(t1, frames));
    auto h2 = rm_encode(t2, rm_load(t2, p), constant(t2, frames));
    REQUIRE(h1.shape() == Shape::mat(10, 32));
    REQUIRE(max_abs_diff(h1.value(), h2.value()) == 0.0);
}

TEST_CASE("permuting frame order changes the encoder output") {
    RmDims dims{16, 32, 5};
    RmParams p = rm_init(9, dims);
    Rng rng(10);
    Array frames = random_frames(8, 16, rng);
    Array permuted = frames;
    for (std::int64_t c = 0; c < 16; ++c) {
        std::swap(permuted.at(0, c), permuted.at(5, c));
        std::swap(permuted.at(2, c), permuted.at(7, c));
    }
    Tape t;
    RmNodes nodes = rm_load(t, p);
    auto ha = rm_encode(t, nodes, constant(t, frames));
    auto hb = rm_encode(t, nodes, constant(t, permuted));
    REQUIRE(max_abs_diff(ha.value(), hb.value()) > 1e-6);

    auto la = rm_classify(t, nodes, ha);
    auto lb = rm_classify(t, nodes, hb);
    REQUIRE(max_abs_diff(la.value(), lb.value()) > 1e-9);
}

TEST_CASE("length-0 input is rejected") {
    RmDims dims{4, 8, 3};
    RmParams p = rm_init(2, dims);
    Tape t;
    RmNodes nodes = rm_load(t, p);
    Array empty;
    empty.shape = Shape::mat(0, 4);
    REQUIRE_THROWS_AS(rm_encode(t, nodes, constant(t, empty)), std::invalid_argument);
}

TEST_CASE("head: duplicating every frame leaves the logits unchanged") {
    RmDims dims{16, 32, 5};
    RmParams p = rm_init(3, dims);
    Rng rng(4);
    Array h(Shape::mat(6, 32));
    for (double& x : h.v) x = rng.uniform(-2.0, 2.0);
    Array h2(Shape::mat(12, 32));
    for (std::int64_t i = 0; i < 12; ++i)
        for (std::int64_t j = 0; j < 32; ++j) h2.at(i, j) = h.at(i % 6, j);
    Tape t;
    RmNodes nodes = rm_load(t, p);
    auto la = rm_classify(t, nodes, constant(t, h));
    auto lb = rm_classify(t, nodes, constant(t, h2));
    REQUIRE(la.shape() == Shape::vec(5));
    REQUIRE(max_abs_diff(la.value(), lb.value()) < 1e-12);
}

TEST_CASE("head: inserting a frame equal to the current mean leaves logits unchanged") {
    RmDims dims{16, 32, 5};
    RmParams p = rm_init(13, dims);
    Rng rng(14);
    Array h(Shape::mat(7, 32));
    for (double& x : h.v) x = rng.uniform(-3.0, 3.0);
    Array extended(Shape::mat(8, 32));
    for (std::int64_t j = 0; j < 32; ++j) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < 7; ++i) {
            extended.at(i, j) = h.at(i, j);
            mean += h.at(i, j);
        }
        extended.at(7, j) = mean / 7.0;
    }
    Tape t;
    RmNodes nodes = rm_load(t, p);
    auto la = rm_classify(t, nodes, constant(t, h));
    auto lb = rm_classify(t, nodes, constant(t, extended));
    REQUIRE(max_abs_diff(la.value(), lb.value()) < 1e-9);
}

TEST_CASE("rm_forward equals classify of encode and is differentiable w.r.t. input") {
    RmDims dims{6, 8, 4};
    RmParams p = rm_init(21, dims);
    Rng rng(22);
    Array frames = random_frames(5, 6, rng);

    Tape t;
    RmNodes nodes = rm_load(t, p);
    auto composed = rm_classify(t, nodes, rm_encode(t, nodes, constant(t, frames)));
    auto direct = rm_forward(t, nodes, constant(t, frames));
    REQUIRE(max_abs_diff(composed.value(), direct.value()) == 0.0);

    const SoftLabel target = smooth_class(1, 4, 0.1);
    GraphBuilder f = [&](Tape& tape, const std::vector<Tape::Id>& ids) {
        RmNodes n = rm_load(tape, p, false);
        auto logits = rm_forward(tape, n, make_ref(tape, ids[0]));
        return ls_loss(logits, target).id;
    };
    auto report = finite_diff_check(f, {frames}, {"frames"}, 1e-5, 1e-4);
    INFO("max_rel_err=" << report.max_rel_err);
    REQUIRE(report.pass);
}

TEST_CASE("encoder output stays finite for inputs up to 1e3 in magnitude") {
    RmDims dims{16, 32, 5};
    RmParams p = rm_init(31, dims);
    Rng rng(32);
    Array frames = random_frames(20, 16, rng, -1e3, 1e3);
    Tape t;
    auto h = rm_encode(t, rm_load(t, p), constant(t, frames));
    REQUIRE(h.value().all_finite());
}

TEST_CASE("checkpoint round trip restores parameters bit-for-bit") {
    const RmDims dims{16, 32, 5};
    RmParams p = rm_init(77, dims);
    const auto path = std::filesystem::temp_directory_path() / "rrpo_test_rm.ckpt";
    rm_save(path, p);
    RmParams q = rm_from_checkpoint(path);
    REQUIRE(q.dims.d_in == dims.d_in);
    REQUIRE(q.dims.d_h == dims.d_h);
    REQUIRE(q.dims.k == dims.k);
    auto pa = p.arrays(), qa = q.arrays();
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(max_abs_diff(*pa[i], *qa[i]) == 0.0);
    std::filesystem::remove(path);
}
