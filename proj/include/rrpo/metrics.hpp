#pragma once

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "rrpo/config.hpp"

namespace rrpo {

// Append-only long-format step metrics. The header block carries the full
// resolved config; wall_ms is the only non-deterministic column and is kept
// last so reruns can be compared by stripping it.
class MetricsWriter {
public:
    MetricsWriter(const std::filesystem::path& path, const RunConfig& cfg, std::string run_id)
        : os_(path), run_id_(std::move(run_id)), start_(std::chrono::steady_clock::now()) {
        if (!os_) throw std::runtime_error("metrics: cannot open " + path.string() + " for writing");
        os_ << cfg.echo("# ");
        os_ << "run_id,phase,step,metric,value,wall_ms\n";
    }

    void row(const std::string& phase, std::int64_t step, const std::string& metric, double value) {
        char value_buf[40];
        std::snprintf(value_buf, sizeof(value_buf), "%.17g", value);
        const double wall =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        char wall_buf[32];
        std::snprintf(wall_buf, sizeof(wall_buf), "%.3f", wall);
        os_ << run_id_ << ',' << phase << ',' << step << ',' << metric << ',' << value_buf << ',' << wall_buf << '\n';
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
    std::string run_id_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace rrpo
