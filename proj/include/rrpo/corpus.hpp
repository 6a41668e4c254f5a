#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rrpo/checkpoint.hpp"
#include "rrpo/features.hpp"
#include "rrpo/rng.hpp"

namespace rrpo {

constexpr char kCorpusMagic[10] = {'R', 'R', 'P', 'O', '-', 'C', 'O', 'R', 'P', '\0'};
constexpr std::uint16_t kCorpusVersion = 1;
constexpr std::int64_t kShortcutBlock = 16;  // spikes are laid out per full 16-frame block

enum class Domain { kPretrain, kFinetune, kEvalShifted };

inline const char* domain_name(Domain d) {
    switch (d) {
        case Domain::kPretrain: return "pretrain";
        case Domain::kFinetune: return "finetune";
        case Domain::kEvalShifted: return "eval-shifted";
    }
    return "?";
}

struct CorpusSpec {
    std::int64_t n_samples = 1000;
    int k = 5;
    std::int64_t l_min = 16, l_max = 48;
    std::int64_t d = 16;
    Domain domain = Domain::kPretrain;
    double shortcut_correlation = 0.95;  // probability the spike count encodes the true class
    double noise_scale = 0.5;
    bool scale_jitter = false;  // per-sample per-dim gain on the genuine dims
    std::uint64_t seed = 42;

    // Domain presets: pretrain carries the trap, finetune is the clean
    // "human-annotated" analog, eval-shifted doubles the noise and jitters
    // per-dim gains to stand in for cross-corpus shift.
    static CorpusSpec preset(Domain domain, std::int64_t n, std::uint64_t seed) {
        CorpusSpec s;
        s.domain = domain;
        s.n_samples = n;
        s.seed = seed;
        switch (domain) {
            case Domain::kPretrain:
                s.shortcut_correlation = 0.95;
                break;
            case Domain::kFinetune:
                s.shortcut_correlation = 0.0;
                break;
            case Domain::kEvalShifted:
                s.shortcut_correlation = 0.0;
                s.noise_scale = 1.0;
                s.scale_jitter = true;
                break;
        }
        return s;
    }
};

namespace detail {

// Class-keyed sinusoid over the genuine dims: temporal frequency, spatial
// frequency across dims, and phase all distinct per class.
inline double genuine_pattern(int cls, std::int64_t t, std::int64_t dim, std::int64_t genuine_dims) {
    const double w = 2.0 * M_PI * static_cast<double>(cls + 1) / 20.0;
    const double s = 2.0 * M_PI * static_cast<double>(cls + 1) / static_cast<double>(genuine_dims);
    const double phi = 2.0 * M_PI * static_cast<double>(cls) / 5.0;
    return std::sin(w * static_cast<double>(t) + phi + s * static_cast<double>(dim));
}

}  // namespace detail

// One synthetic utterance, deterministic per (spec.seed, index). The genuine
// dims 0..D-2 carry the class pattern plus Gaussian noise; dim D-1 carries
// sparse unit spikes whose per-block count encodes a class id (the true one
// with probability shortcut_correlation, a random one otherwise).
inline std::pair<FeatureSequence, int> gen_utterance(int cls, const CorpusSpec& spec, std::int64_t index) {
    if (cls < 0 || cls >= spec.k) throw std::invalid_argument("gen_utterance: class out of range");
    if (index < 0 || index >= spec.n_samples) throw std::invalid_argument("gen_utterance: index out of range");
    Rng rng(spec.seed, streams::kCorpusSample + static_cast<std::uint64_t>(index));

    const std::int64_t l = rng.uniform_int(spec.l_min, spec.l_max);
    const std::int64_t genuine = spec.d - 1;
    Array frames(Shape::mat(l, spec.d));

    int effective = cls;
    if (rng.uniform() >= spec.shortcut_correlation) effective = static_cast<int>(rng.uniform_int(0, spec.k - 1));

    std::vector<double> gain(static_cast<std::size_t>(genuine), 1.0);
    if (spec.scale_jitter)
        for (double& g : gain) g = rng.uniform(0.7, 1.3);

    for (std::int64_t t = 0; t < l; ++t)
        for (std::int64_t dim = 0; dim < genuine; ++dim)
            frames.at(t, dim) = gain[static_cast<std::size_t>(dim)] *
                                (detail::genuine_pattern(cls, t, dim, genuine) + spec.noise_scale * rng.gaussian());

    // Shortcut channel: (effective + 1) unit spikes per complete block.
    const std::int64_t blocks = l / kShortcutBlock;
    std::vector<int> positions(static_cast<std::size_t>(kShortcutBlock));
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        std::iota(positions.begin(), positions.end(), 0);
        for (int i = static_cast<int>(kShortcutBlock) - 1; i >= 1; --i)
            std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        for (int s = 0; s < effective + 1; ++s)
            frames.at(blk * kShortcutBlock + positions[static_cast<std::size_t>(s)], spec.d - 1) = 1.0;
    }
    return {FeatureSequence(std::move(frames)), cls};
}

struct Corpus {
    std::int64_t d = 0;
    std::vector<FeatureSequence> feats;
    std::vector<std::uint8_t> labels;

    std::int64_t size() const { return static_cast<std::int64_t>(feats.size()); }
};

// Class-balanced deterministic generation: sample i gets class i mod K, then
// the record order is shuffled with a dedicated stream.
inline Corpus gen_corpus_data(const CorpusSpec& spec) {
    Corpus c;
    c.d = spec.d;
    c.feats.reserve(static_cast<std::size_t>(spec.n_samples));
    c.labels.reserve(static_cast<std::size_t>(spec.n_samples));
    for (std::int64_t i = 0; i < spec.n_samples; ++i) {
        auto [feats, label] = gen_utterance(static_cast<int>(i % spec.k), spec, i);
        c.feats.push_back(std::move(feats));
        c.labels.push_back(static_cast<std::uint8_t>(label));
    }
    std::vector<std::int64_t> order(static_cast<std::size_t>(spec.n_samples));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(spec.seed, streams::kCorpusShuffle);
    for (std::int64_t i = spec.n_samples - 1; i >= 1; --i)
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(shuffle.uniform_int(0, i))]);
    Corpus shuffled;
    shuffled.d = c.d;
    for (std::int64_t i : order) {
        shuffled.feats.push_back(std::move(c.feats[static_cast<std::size_t>(i)]));
        shuffled.labels.push_back(c.labels[static_cast<std::size_t>(i)]);
    }
    return shuffled;
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("corpus: cannot open " + path.string() + " for writing");
    os.write(kCorpusMagic, sizeof(kCorpusMagic));
    detail::write_le<std::uint16_t>(os, kCorpusVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.d));
    for (std::int64_t i = 0; i < c.size(); ++i) {
        const Array& f = c.feats[static_cast<std::size_t>(i)].frames;
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.shape.dim[0]));
        os.put(static_cast<char>(c.labels[static_cast<std::size_t>(i)]));
        for (double x : f.v) detail::write_le<double>(os, x);
    }
    if (!os) throw std::runtime_error("corpus: write failed on " + path.string());
}

inline void gen_corpus(const CorpusSpec& spec, const std::filesystem::path& path) {
    save_corpus(path, gen_corpus_data(spec));
}

inline Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("corpus: cannot open " + path.string());
    char magic[sizeof(kCorpusMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCorpusMagic, sizeof(magic)) != 0)
        throw std::runtime_error("corpus: bad magic in " + path.string());
    const auto version = detail::read_le<std::uint16_t>(is);
    if (version != kCorpusVersion) throw std::runtime_error("corpus: unsupported version " + std::to_string(version));
    const auto count = detail::read_le<std::uint32_t>(is);
    const auto d = detail::read_le<std::uint32_t>(is);
    Corpus c;
    c.d = d;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto l = detail::read_le<std::uint32_t>(is);
        const int label = is.get();
        if (label < 0) throw std::runtime_error("corpus: truncated record in " + path.string());
        Array frames(Shape::mat(l, d));
        for (double& x : frames.v) x = detail::read_le<double>(is);
        c.feats.push_back(FeatureSequence(std::move(frames)));
        c.labels.push_back(static_cast<std::uint8_t>(label));
    }
    return c;
}

// Naturalness proxy: mean squared value of the shortcut channel.
inline double artifact_energy(const FeatureSequence& feats) {
    const Array& f = feats.frames;
    const std::int64_t l = f.shape.dim[0], d = f.shape.dim[1];
    double s = 0.0;
    for (std::int64_t t = 0; t < l; ++t) {
        const double x = f.at(t, d - 1);
        s += x * x;
    }
    return s / static_cast<double>(l);
}

// The one-feature shortcut classifier: estimated class from the per-block
// spike count. Only meaningful on corpus-like unit spikes.
inline int shortcut_class_estimate(const FeatureSequence& feats) {
    const Array& f = feats.frames;
    const std::int64_t l = f.shape.dim[0], d = f.shape.dim[1];
    const std::int64_t blocks = l / kShortcutBlock;
    if (blocks == 0) return 0;
    double total = 0.0;
    for (std::int64_t t = 0; t < blocks * kShortcutBlock; ++t) total += f.at(t, d - 1);
    const int est = static_cast<int>(std::lround(total / static_cast<double>(blocks))) - 1;
    return std::clamp(est, 0, 4);
}

}  // namespace rrpo
