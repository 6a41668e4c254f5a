#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rrpo/tape.hpp"

namespace rrpo {

// Builds a scalar loss on the given tape from the supplied parameter leaves.
// Must be deterministic: any randomness has to be replayed from a value-copied Rng.
using GraphBuilder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

struct FiniteDiffRow {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
    bool nonfinite = false;
};

struct FiniteDiffReport {
    std::vector<FiniteDiffRow> rows;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central-difference gradient check: reverse-mode gradients vs
// (f(p+h) - f(p-h)) / 2h per parameter element. Non-finite evaluations are
// reported as failures rather than thrown. Relative error uses a small
// denominator floor so that near-zero gradient pairs compare sanely.
inline FiniteDiffReport finite_diff_check(const GraphBuilder& f, std::vector<Array> params,
                                          const std::vector<std::string>& names, double h, double tol) {
    FiniteDiffReport report;
    report.rows.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k)
        report.rows[k].name = k < names.size() ? names[k] : "param" + std::to_string(k);

    auto eval = [&](const std::vector<Array>& p) -> double {
        Tape t;
        std::vector<Tape::Id> ids;
        ids.reserve(p.size());
        for (const Array& a : p) ids.push_back(t.leaf(a));
        const Tape::Id root = f(t, ids);
        return t.value(root).v[0];
    };

    // Reverse-mode gradients at the base point.
    std::vector<Array> ad_grads;
    bool ad_finite = true;
    {
        Tape t;
        std::vector<Tape::Id> ids;
        for (const Array& a : params) ids.push_back(t.leaf(a));
        const Tape::Id root = f(t, ids);
        if (t.value(root).shape.rank != 0)
            throw std::invalid_argument("finite_diff_check: builder must return a scalar node");
        if (!std::isfinite(t.value(root).v[0])) ad_finite = false;
        t.backward(root);
        for (Tape::Id id : ids) {
            ad_grads.push_back(t.grad_of(id));
            if (!ad_grads.back().all_finite()) ad_finite = false;
        }
    }

    bool all_pass = true;
    for (std::size_t k = 0; k < params.size(); ++k) {
        FiniteDiffRow& row = report.rows[k];
        if (!ad_finite) row.nonfinite = true;
        for (std::size_t e = 0; e < params[k].v.size(); ++e) {
            const double orig = params[k].v[e];
            params[k].v[e] = orig + h;
            const double lp = eval(params);
            params[k].v[e] = orig - h;
            const double lm = eval(params);
            params[k].v[e] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                row.nonfinite = true;
                continue;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double ad = ad_grads[k].v[e];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-6});
            row.max_rel_err = std::max(row.max_rel_err, std::abs(ad - fd) / denom);
        }
        row.pass = !row.nonfinite && row.max_rel_err < tol;
        report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
        all_pass = all_pass && row.pass;
    }
    report.pass = all_pass;
    return report;
}

}  // namespace rrpo
