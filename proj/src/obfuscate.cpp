#include "obf/obfuscate.hpp"

#include <algorithm>
#include <cmath>

#include "obf/errors.hpp"
#include "obf/rng.hpp"
#include "obf/sampler.hpp"

namespace obf::obfuscate {

void ObfuscationSpec::validate() const {
    if (!(sigma >= 0.0)) throw RangeError("obfuscation spec: sigma must be >= 0");
    if (!(r >= 0.0 && r <= 1.0)) throw RangeError("obfuscation spec: R must lie in [0, 1]");
}

data::Dataset apply(const data::Dataset& dataset, const ObfuscationSpec& spec) {
    spec.validate();
    data::Dataset out = dataset;
    if (spec.sigma == 0.0 || spec.r == 0.0) return out;

    const std::size_t n = dataset.size();
    const std::size_t d = dataset.dim();
    const long m = sampler::floor_count(spec.r * double(n));
    if (m == 0) return out;

    auto pick = rng::derive_stream(spec.seed, "sample");
    auto order = rng::permutation(pick, n);
    std::vector<std::size_t> chosen(order.begin(), order.begin() + m);
    std::sort(chosen.begin(), chosen.end());

    auto noise = rng::derive_stream(spec.seed, "noise");
    for (std::size_t i : chosen) {
        double* row = out.features.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            row[j] += noise.gaussian(spec.sigma);
            if (spec.clip) row[j] = std::clamp(row[j], 0.0, 1.0);
        }
    }
    return out;
}

Reconstruction reconstruct_by_averaging(
    const std::vector<data::Dataset>& disclosures,
    const data::Dataset& reference) {
    if (disclosures.empty())
        throw RangeError("reconstruct_by_averaging: need at least one disclosure");

    const auto& first = disclosures.front();
    const std::size_t n = first.size();
    const std::size_t d = first.dim();
    for (const auto& disc : disclosures) {
        if (disc.size() != n || disc.dim() != d || disc.labels != first.labels)
            throw ShapeMismatch("disclosures disagree on sample count, dimension, or labels");
    }
    if (reference.size() != n || reference.dim() != d)
        throw ShapeMismatch("reference shape does not match the disclosures");

    Reconstruction rec;
    rec.estimate = first;
    rec.estimate.name = "avg";
    const double inv = 1.0 / double(disclosures.size());
    for (std::size_t i = 0; i < n * d; ++i) {
        double sum = 0.0;
        for (const auto& disc : disclosures) sum += disc.features[i];
        rec.estimate.features[i] = sum * inv;
    }

    double err = 0.0;
    for (std::size_t i = 0; i < n * d; ++i) {
        const double diff = rec.estimate.features[i] - reference.features[i];
        err += diff * diff;
    }
    rec.mse = n * d == 0 ? 0.0 : err / double(n * d);
    return rec;
}

}  // namespace obf::obfuscate
