#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "obf/dataset.hpp"
#include "obf/rng.hpp"

namespace obf::sampler {

// S-X-Y-Z draw specification: X = label degree (fraction of the C labels
// covered), Y = label overlapping ratio against a counterpart set, Z =
// per-label sampling ratio.  anchor_labels pins the covered label set
// explicitly instead of drawing it.
struct SamplingSpec {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;
    std::uint64_t seed = 0;
    std::optional<std::vector<int>> anchor_labels;

    void validate() const;                       // throws RangeError
    std::string to_string() const;               // "S-X-Y-Z"
    static SamplingSpec parse(const std::string& text);
};

// floor with a tiny symmetric snap so products like 10 * 0.3 land on the
// mathematically intended integer despite binary rounding.
long floor_count(double value);

// Uniformly chosen subset of size floor(C*X) from {0..C-1}, sorted ascending.
// Throws DegenerateSpec when the size floors to zero.
std::vector<int> label_set(int num_classes, double x, rng::RngStream& stream);

// A label set of the same size sharing exactly floor(C*X*Y) members with
// `anchor`; shared members drawn uniformly from the anchor, the rest from its
// complement.  Throws InfeasibleOverlap when the complement is too small.
std::vector<int> counterpart_labels(const std::vector<int>& anchor,
                                    int num_classes, double x, double y,
                                    rng::RngStream& stream);

// For each covered label l, uniformly samples floor(Z * n_l) of the pool's
// n_l entries without replacement.  Output rows in ascending pool order;
// result keeps the pool's num_classes.  Throws EmptyResult when every
// per-label count floors to zero.
data::Dataset sample(const data::Dataset& pool, const std::vector<int>& labels,
                     double z, rng::RngStream& stream);

// Full spec draw: covered labels from anchor_labels (or a random label_set),
// then per-label sampling, all from the spec's "sample"-tagged stream.
data::Dataset draw(const data::Dataset& pool, const SamplingSpec& spec);

}  // namespace obf::sampler
