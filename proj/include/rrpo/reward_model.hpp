#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrpo/checkpoint.hpp"
#include "rrpo/features.hpp"
#include "rrpo/rng.hpp"
#include "rrpo/tape.hpp"

namespace rrpo {

// Fixed architecture constants; parameter count is fully determined by
// (d_in, d_h, k).
constexpr std::int64_t kPosChannels = 4;   // position channels appended to the input
constexpr std::int64_t kFfHidden = 64;     // feed-forward hidden width
constexpr int kAttnHeads = 2;
constexpr double kNormEps = 1e-8;

struct RmDims {
    std::int64_t d_in = 16;  // acoustic feature dims
    std::int64_t d_h = 32;   // embedding width
    std::int64_t k = 5;      // emotion classes
};

// Encoder: input projection (with position channels) -> pre-norm
// self-attention (2 heads) -> pre-norm feed-forward (tanh) -> residual.
// Head: mean-pool over frames -> linear.
struct RmParams {
    RmDims dims;
    Array w_in;    // (d_in + kPosChannels) x d_h
    Array b_in;    // 1 x d_h
    Array w_q, w_k, w_v, w_o;  // d_h x d_h each
    Array w_ff1;   // d_h x kFfHidden
    Array b_ff1;   // 1 x kFfHidden
    Array w_ff2;   // kFfHidden x d_h
    Array b_ff2;   // 1 x d_h
    Array w_head;  // d_h x k
    Array b_head;  // 1 x k

    std::vector<Array*> arrays() {
        return {&w_in, &b_in, &w_q, &w_k, &w_v, &w_o, &w_ff1, &b_ff1, &w_ff2, &b_ff2, &w_head, &b_head};
    }
    std::vector<const Array*> arrays() const {
        return {&w_in, &b_in, &w_q, &w_k, &w_v, &w_o, &w_ff1, &b_ff1, &w_ff2, &b_ff2, &w_head, &b_head};
    }
    static std::vector<std::string> array_names() {
        return {"w_in", "b_in", "w_q", "w_k", "w_v", "w_o", "w_ff1", "b_ff1", "w_ff2", "b_ff2", "w_head", "b_head"};
    }
};

inline std::int64_t rm_param_count(const RmDims& d) {
    return (d.d_in + kPosChannels) * d.d_h + d.d_h + 4 * d.d_h * d.d_h + d.d_h * kFfHidden + kFfHidden +
           kFfHidden * d.d_h + d.d_h + d.d_h * d.k + d.k;
}

namespace detail {

inline Array glorot_uniform(Shape s, Rng& rng) {
    Array a(s);
    const double bound = std::sqrt(6.0 / static_cast<double>(s.dim[0] + s.dim[1]));
    for (double& x : a.v) x = rng.uniform(-bound, bound);
    return a;
}

}  // namespace detail

// Scaled uniform init, one rng stream per weight array; biases start at zero.
inline RmParams rm_init(std::uint64_t seed, const RmDims& dims) {
    if (dims.d_in <= 0 || dims.d_h <= 0 || dims.k <= 0) throw std::invalid_argument("rm_init: dims must be positive");
    if (dims.d_h % kAttnHeads != 0) throw std::invalid_argument("rm_init: d_h must be divisible by the head count");
    RmParams p;
    p.dims = dims;
    Rng base(seed);
    int idx = 0;
    auto w = [&](std::int64_t r, std::int64_t c) {
        Rng stream = base.substream(streams::kParamInit + static_cast<std::uint64_t>(idx++));
        return detail::glorot_uniform(Shape::mat(r, c), stream);
    };
    auto b = [&](std::int64_t c) {
        ++idx;
        return Array(Shape::mat(1, c));
    };
    p.w_in = w(dims.d_in + kPosChannels, dims.d_h);
    p.b_in = b(dims.d_h);
    p.w_q = w(dims.d_h, dims.d_h);
    p.w_k = w(dims.d_h, dims.d_h);
    p.w_v = w(dims.d_h, dims.d_h);
    p.w_o = w(dims.d_h, dims.d_h);
    p.w_ff1 = w(dims.d_h, kFfHidden);
    p.b_ff1 = b(kFfHidden);
    p.w_ff2 = w(kFfHidden, dims.d_h);
    p.b_ff2 = b(dims.d_h);
    p.w_head = w(dims.d_h, dims.k);
    p.b_head = b(dims.k);
    return p;
}

// Parameter leaves of one model instance on a tape.
struct RmNodes {
    RmDims dims;
    Ref w_in, b_in, w_q, w_k, w_v, w_o, w_ff1, b_ff1, w_ff2, b_ff2, w_head, b_head;

    std::vector<Ref> refs() const {
        return {w_in, b_in, w_q, w_k, w_v, w_o, w_ff1, b_ff1, w_ff2, b_ff2, w_head, b_head};
    }
};

inline RmNodes rm_load(Tape& t, const RmParams& p, bool requires_grad = true) {
    RmNodes n;
    n.dims = p.dims;
    Ref* dst[] = {&n.w_in, &n.b_in, &n.w_q, &n.w_k, &n.w_v, &n.w_o, &n.w_ff1, &n.b_ff1, &n.w_ff2, &n.b_ff2, &n.w_head, &n.b_head};
    auto src = p.arrays();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = leaf(t, *src[i], requires_grad);
    return n;
}

namespace detail {

inline Array position_channels(std::int64_t l) {
    Array a(Shape::mat(l, kPosChannels));
    for (std::int64_t t = 0; t < l; ++t) {
        a.at(t, 0) = std::sin(0.7 * static_cast<double>(t));
        a.at(t, 1) = std::cos(0.7 * static_cast<double>(t));
        a.at(t, 2) = std::sin(0.11 * static_cast<double>(t));
        a.at(t, 3) = std::cos(0.11 * static_cast<double>(t));
    }
    return a;
}

// Row-wise RMS normalization built from primitives; maps zero rows to zero.
inline Ref rms_norm(Ref x) {
    Tape& t = *x.tape;
    const std::int64_t d = x.shape().dim[1];
    auto sq = mul(x, x);
    auto row_mean = scale(matmul(sq, constant(t, Array(Shape::mat(d, 1), 1.0))), 1.0 / static_cast<double>(d));
    auto rms = sqrt(add_scalar(row_mean, kNormEps));
    auto tiled = matmul(rms, constant(t, Array(Shape::mat(1, d), 1.0)));
    return div(x, tiled);
}

inline Ref tile_rows(Ref row, std::int64_t l) {
    return matmul(constant(*row.tape, Array(Shape::mat(l, 1), 1.0)), row);
}

}  // namespace detail

// Frame-level encoder: L x d_in features -> L x d_h embedding h'.
inline Ref rm_encode(Tape& t, const RmNodes& p, Ref feats) {
    const Shape& s = feats.shape();
    if (s.rank != 2 || s.dim[1] != p.dims.d_in)
        throw std::invalid_argument("rm_encode: expected Lx" + std::to_string(p.dims.d_in) + " features, got " + s.str());
    const std::int64_t l = s.dim[0];
    if (l < 1) throw std::invalid_argument("rm_encode: empty input");

    auto x = concat(std::vector<Ref>{feats, constant(t, detail::position_channels(l))}, 1);
    auto x1 = add(matmul(x, p.w_in), detail::tile_rows(p.b_in, l));

    auto n1 = detail::rms_norm(x1);
    auto q = matmul(n1, p.w_q);
    auto k = matmul(n1, p.w_k);
    auto v = matmul(n1, p.w_v);
    const std::int64_t hd = p.dims.d_h / kAttnHeads;
    std::vector<Ref> heads;
    for (int h = 0; h < kAttnHeads; ++h) {
        auto qh = slice(q, 1, h * hd, (h + 1) * hd);
        auto kh = slice(k, 1, h * hd, (h + 1) * hd);
        auto vh = slice(v, 1, h * hd, (h + 1) * hd);
        auto scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
        heads.push_back(matmul(softmax(scores), vh));
    }
    auto attn = matmul(concat(heads, 1), p.w_o);
    auto x2 = add(x1, attn);

    auto n2 = detail::rms_norm(x2);
    auto z = tanh(add(matmul(n2, p.w_ff1), detail::tile_rows(p.b_ff1, l)));
    auto ff = add(matmul(z, p.w_ff2), detail::tile_rows(p.b_ff2, l));
    return add(x2, ff);
}

// Head: mean-pool over frames, then linear. Returns a k-vector of logits.
inline Ref rm_classify(Tape& t, const RmNodes& p, Ref h) {
    const Shape& s = h.shape();
    if (s.rank != 2 || s.dim[1] != p.dims.d_h)
        throw std::invalid_argument("rm_classify: expected Lx" + std::to_string(p.dims.d_h) + " embedding, got " + s.str());
    const std::int64_t l = s.dim[0];
    auto pooled = matmul(constant(t, Array(Shape::mat(1, l), 1.0 / static_cast<double>(l))), h);
    auto z = add(matmul(pooled, p.w_head), p.b_head);
    return reshape(z, Shape::vec(p.dims.k));
}

inline Ref rm_forward(Tape& t, const RmNodes& p, Ref feats) { return rm_classify(t, p, rm_encode(t, p, feats)); }

inline Ref rm_forward(Tape& t, const RmNodes& p, const FeatureSequence& feats) {
    return rm_forward(t, p, constant(t, feats.frames));
}

inline void rm_save(const std::filesystem::path& path, const RmParams& p) {
    save_checkpoint(path,
                    {static_cast<std::uint32_t>(p.dims.d_in), static_cast<std::uint32_t>(p.dims.d_h),
                     static_cast<std::uint32_t>(p.dims.k)},
                    p.arrays());
}

inline RmParams rm_from_checkpoint(const std::filesystem::path& path) {
    const CheckpointData data = load_checkpoint(path);
    RmDims dims{static_cast<std::int64_t>(data.dims[0]), static_cast<std::int64_t>(data.dims[1]),
                static_cast<std::int64_t>(data.dims[2])};
    RmParams p = rm_init(0, dims);
    auto dst = p.arrays();
    if (data.arrays.size() != dst.size())
        throw std::runtime_error("checkpoint: expected " + std::to_string(dst.size()) + " arrays, found " +
                                 std::to_string(data.arrays.size()) + " in " + path.string());
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (data.arrays[i].shape != dst[i]->shape)
            throw std::runtime_error("checkpoint: array " + RmParams::array_names()[i] + " has shape " +
                                     data.arrays[i].shape.str() + ", expected " + dst[i]->shape.str());
        *dst[i] = data.arrays[i];
    }
    return p;
}

}  // namespace rrpo
