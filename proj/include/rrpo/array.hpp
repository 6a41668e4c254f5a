#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rrpo {

// Shape of a dense array, rank <= 3. Rank 0 is a scalar (one element).
struct Shape {
    std::array<std::int64_t, 3> dim{1, 1, 1};
    int rank = 0;

    static Shape scalar() { return Shape{}; }
    static Shape vec(std::int64_t n) { return Shape{{n, 1, 1}, 1}; }
    static Shape mat(std::int64_t r, std::int64_t c) { return Shape{{r, c, 1}, 2}; }
    static Shape cube(std::int64_t a, std::int64_t b, std::int64_t c) { return Shape{{a, b, c}, 3}; }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= dim[i];
        return n;
    }
    std::int64_t rows() const { return rank >= 1 ? dim[0] : 1; }
    std::int64_t cols() const { return rank >= 2 ? dim[1] : 1; }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (dim[i] != o.dim[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        if (rank == 0) return "scalar";
        std::string s;
        for (int i = 0; i < rank; ++i) {
            if (i) s += "x";
            s += std::to_string(dim[i]);
        }
        return s;
    }
};

// Dense array of 64-bit reals with explicit shape. Row-major storage.
struct Array {
    Shape shape;
    std::vector<double> v;

    Array() = default;
    explicit Array(const Shape& s, double fill = 0.0) : shape(s), v(static_cast<std::size_t>(s.numel()), fill) {}

    static Array scalar(double x) {
        Array a(Shape::scalar());
        a.v[0] = x;
        return a;
    }
    static Array vec(std::initializer_list<double> xs) {
        Array a(Shape::vec(static_cast<std::int64_t>(xs.size())));
        std::size_t i = 0;
        for (double x : xs) a.v[i++] = x;
        return a;
    }
    static Array from(const Shape& s, std::vector<double> data) {
        if (static_cast<std::int64_t>(data.size()) != s.numel())
            throw std::invalid_argument("Array::from: data size " + std::to_string(data.size()) +
                                        " does not match shape " + s.str());
        Array a;
        a.shape = s;
        a.v = std::move(data);
        return a;
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    double& at(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * shape.dim[1] + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * shape.dim[1] + j)]; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double sum_of(const Array& a) {
    double s = 0.0;
    for (double x : a.v) s += x;
    return s;
}

inline double mean_sq(const Array& a) {
    if (a.v.empty()) return 0.0;
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return s / static_cast<double>(a.v.size());
}

inline double l2_norm(const Array& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

inline double max_abs_diff(const Array& a, const Array& b) {
    if (a.shape != b.shape) throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace rrpo
