#pragma once

#include <cstdint>
#include <vector>

#include "obf/dataset.hpp"

namespace obf::obfuscate {

// O(T): additive IID Gaussian noise on features, labels untouched.
struct ObfuscationSpec {
    double sigma = 0.0;  // noise std in normalized feature units
    double r = 1.0;      // proportion of samples obfuscated
    bool clip = false;   // clamp outputs to [0,1]
    std::uint64_t seed = 0;

    void validate() const;  // throws RangeError
};

// A uniformly chosen floor(R*n)-subset of samples gets fresh delta ~ N(0,
// sigma^2) added to every feature; the rest are copied verbatim.  sigma=0 or
// R=0 returns a byte-exact copy.  Subset choice uses the "sample"-tagged
// stream, noise the "noise"-tagged stream, both derived from spec.seed.
data::Dataset apply(const data::Dataset& dataset, const ObfuscationSpec& spec);

struct Reconstruction {
    data::Dataset estimate;  // element-wise mean across disclosures
    double mse = 0.0;        // vs the reference features
};

// Multi-disclosure averaging attack: estimate = mean of the disclosed
// feature arrays; mse measures privacy decline against the raw reference.
Reconstruction reconstruct_by_averaging(
    const std::vector<data::Dataset>& disclosures,
    const data::Dataset& reference);

}  // namespace obf::obfuscate
