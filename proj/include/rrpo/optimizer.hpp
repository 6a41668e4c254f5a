#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rrpo/array.hpp"

namespace rrpo {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment state for one list of parameter arrays.
class Adam {
public:
    Adam() = default;
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    // Applies one update; params and grads must line up in order and shape.
    void step(const std::vector<Array*>& params, const std::vector<Array>& grads) {
        if (params.size() != grads.size()) throw std::invalid_argument("adam: params/grads size mismatch");
        if (m_.empty()) {
            for (const Array* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Array& p = *params[i];
            const Array& g = grads[i];
            if (p.shape != g.shape) throw std::invalid_argument("adam: grad shape mismatch for param " + std::to_string(i));
            for (std::size_t e = 0; e < p.v.size(); ++e) {
                double& m = m_[i].v[e];
                double& v = v_[i].v[e];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g.v[e];
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.v[e] * g.v[e];
                p.v[e] -= cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<Array> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace rrpo
