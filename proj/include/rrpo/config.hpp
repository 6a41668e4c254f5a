#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rrpo/errors.hpp"
#include "rrpo/version.hpp"

namespace rrpo {

// Flat key = value run configuration. Every key has a documented default;
// unknown keys are rejected; the resolved set is echoed into every output.
// Defaults follow the reported hyperparameter settings where one exists
// (eps_ls = 0.1, eps_adv = 0.5, alpha = 0.5); empty path values are derived
// from out_dir/data_dir conventions at command time.
class RunConfig {
public:
    static const std::vector<std::pair<std::string, std::string>>& default_entries() {
        static const std::vector<std::pair<std::string, std::string>> defaults = {
            // general
            {"seed", "1"},
            {"jobs", "1"},
            {"out_dir", "runs"},
            {"data_dir", "data"},
            // corpus generation
            {"data_seed", "42"},
            {"pretrain_n", "2000"},
            {"finetune_n", "600"},
            {"evalshift_n", "1000"},
            {"num_classes", "5"},
            {"feat_dim", "16"},
            {"l_min", "16"},
            {"l_max", "48"},
            {"noise_scale", "0.5"},
            {"pretrain_shortcut_corr", "0.95"},
            // reward model + regularizers
            {"rm_dh", "32"},
            {"eps_ls", "0.1"},
            {"r_min_db", "0"},
            {"r_max_db", "10"},
            {"energy_floor", "1e-10"},
            {"eps_adv", "0.5"},
            {"alpha", "0.5"},
            // reward-model training
            {"pretrain_steps", "800"},
            {"pretrain_lr", "1e-3"},
            {"finetune_steps", "1500"},
            {"finetune_lr", "1e-3"},
            {"batch_size", "16"},
            {"eval_every", "100"},
            {"holdout_frac", "0.1"},
            // oracle judge
            {"oracle_steps", "2000"},
            {"oracle_lr", "1e-3"},
            // policy
            {"vocab", "32"},
            {"policy_de", "32"},
            {"traj_len", "24"},
            {"gumbel_temp", "1.0"},
            {"gumbel_temp_end", "1.0"},
            {"sft_steps", "200"},
            {"sft_lr", "1e-3"},
            {"sft_batch", "8"},
            {"rl_steps", "500"},
            {"rl_lr", "1e-3"},
            {"rollout_batch", "8"},
            {"reward_mode", "plain-ls"},
            {"log_every", "25"},
            {"probe_rollouts", "20"},
            // evaluation + ablation
            {"eval_rollouts", "100"},
            {"ablate_seeds", "5"},
            // paths ("" = derived from out_dir / data_dir)
            {"pretrain_corpus", ""},
            {"finetune_corpus", ""},
            {"evalshift_corpus", ""},
            {"rm_checkpoint", ""},
            {"policy_out", ""},
            {"oracle_checkpoint", ""},
            {"eval_rm_vanilla", ""},
            {"eval_rm_robust", ""},
            {"eval_policy_sft", ""},
            {"eval_policy_vanilla", ""},
            {"eval_policy_robust", ""},
        };
        return defaults;
    }

    static RunConfig defaults() {
        RunConfig cfg;
        for (const auto& [k, v] : default_entries()) cfg.values_[k] = v;
        return cfg;
    }

    void load_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto strip = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            const std::string stripped = strip(line);
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
            set(strip(stripped.substr(0, eq)), strip(stripped.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second = value;
    }

    const std::string& gets(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    std::int64_t geti(const std::string& key) const {
        const std::string& s = gets(key);
        std::int64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
            throw ConfigError("config key '" + key + "' is not an integer: '" + s + "'");
        return v;
    }

    double getd(const std::string& key) const {
        const std::string& s = gets(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: '" + s + "'");
        }
    }

    // Fills an empty path key from the given derived location and returns it.
    std::string resolve_path(const std::string& key, const std::filesystem::path& derived) {
        if (gets(key).empty()) set(key, derived.string());
        return gets(key);
    }

    std::vector<std::pair<std::string, std::string>> entries() const {
        return {values_.begin(), values_.end()};  // std::map keeps keys sorted
    }

    // Provenance block embedded in every text output.
    std::string echo(const std::string& prefix = "# ") const {
        std::ostringstream os;
        os << prefix << "version: " << kVersionString << "\n";
        for (const auto& [k, v] : values_) os << prefix << k << " = " << v << "\n";
        return os.str();
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rrpo
