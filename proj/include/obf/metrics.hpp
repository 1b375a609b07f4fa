#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obf/nn.hpp"

namespace obf::metrics {

// F-norm model distance D(Wi, Wj) = sqrt(sum_k |w_ik - w_jk|^2) over all
// tensors (biases included), accumulated in tensor order.  Throws
// ArchMismatch when the two weight sets differ in structure.
double fnorm(const nn::ModelWeights& a, const nn::ModelWeights& b);

// Distinguishability gap: |D(ref, same) - D(ref, other)|.
double distinguishability(const nn::ModelWeights& w_ref,
                          const nn::ModelWeights& w_obf_same,
                          const nn::ModelWeights& w_obf_other);

// Elementwise fnorm over two equal-length checkpoint sequences.  Throws
// LengthMismatch / ArchMismatch.
std::vector<double> trace_compare(const std::vector<nn::ModelWeights>& ckpts_a,
                                  const std::vector<nn::ModelWeights>& ckpts_b);

struct PUDReport {
    double sigma = 0.0;
    double recon_mse = 0.0;  // privacy proxy: averaging-attack reconstruction error
    double utility = 0.0;    // test accuracy
    double delta = 0.0;      // distinguishability
    nlohmann::json metadata;

    nlohmann::json to_json() const;
};

// Assembles and validates a report.  Throws RangeError on out-of-range
// fields.
PUDReport pud_report(double sigma, double recon_mse, double utility,
                     double delta, nlohmann::json metadata = {});

}  // namespace obf::metrics
