#pragma once

#include <stdexcept>

#include "rrpo/array.hpp"

namespace rrpo {

// One utterance analog: L frames of D acoustic-feature dims. The last dim
// (index D-1) is the designated shortcut channel of the synthetic corpus.
struct FeatureSequence {
    Array frames;  // L x D

    FeatureSequence() = default;
    explicit FeatureSequence(Array f) : frames(std::move(f)) {
        if (frames.shape.rank != 2) throw std::invalid_argument("FeatureSequence: frames must be rank 2, got " + frames.shape.str());
        if (frames.shape.dim[0] < 2) throw std::invalid_argument("FeatureSequence: need L >= 2 frames");
    }

    std::int64_t length() const { return frames.shape.dim[0]; }
    std::int64_t dims() const { return frames.shape.dim[1]; }
};

}  // namespace rrpo
