#include "obf/metrics.hpp"

#include <cmath>

#include "obf/errors.hpp"

namespace obf::metrics {

double fnorm(const nn::ModelWeights& a, const nn::ModelWeights& b) {
    if (a.arch_fingerprint != b.arch_fingerprint)
        throw ArchMismatch("fnorm: weight sets come from different archs");
    if (a.tensors.size() != b.tensors.size())
        throw ArchMismatch("fnorm: tensor counts differ");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.tensors.size(); ++k) {
        const auto& ta = a.tensors[k];
        const auto& tb = b.tensors[k];
        if (ta.name != tb.name || ta.shape != tb.shape)
            throw ArchMismatch("fnorm: tensor " + ta.name + " does not line up with " + tb.name);
        for (std::size_t j = 0; j < ta.values.size(); ++j) {
            const double diff = ta.values[j] - tb.values[j];
            sum += diff * diff;
        }
    }
    return std::sqrt(sum);
}

double distinguishability(const nn::ModelWeights& w_ref,
                          const nn::ModelWeights& w_obf_same,
                          const nn::ModelWeights& w_obf_other) {
    return std::abs(fnorm(w_ref, w_obf_same) - fnorm(w_ref, w_obf_other));
}

std::vector<double> trace_compare(const std::vector<nn::ModelWeights>& ckpts_a,
                                  const std::vector<nn::ModelWeights>& ckpts_b) {
    if (ckpts_a.size() != ckpts_b.size())
        throw LengthMismatch("trace_compare: sequences have lengths " +
                             std::to_string(ckpts_a.size()) + " and " +
                             std::to_string(ckpts_b.size()));
    std::vector<double> series;
    series.reserve(ckpts_a.size());
    for (std::size_t i = 0; i < ckpts_a.size(); ++i)
        series.push_back(fnorm(ckpts_a[i], ckpts_b[i]));
    return series;
}

nlohmann::json PUDReport::to_json() const {
    return nlohmann::json{{"sigma", sigma},
                          {"recon_mse", recon_mse},
                          {"utility", utility},
                          {"delta", delta},
                          {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata}};
}

PUDReport pud_report(double sigma, double recon_mse, double utility,
                     double delta, nlohmann::json metadata) {
    if (!(sigma >= 0.0)) throw RangeError("pud_report: sigma must be >= 0");
    if (!(recon_mse >= 0.0)) throw RangeError("pud_report: recon_mse must be >= 0");
    if (!(utility >= 0.0 && utility <= 1.0))
        throw RangeError("pud_report: utility must lie in [0, 1]");
    if (!(delta >= 0.0)) throw RangeError("pud_report: delta must be >= 0");
    PUDReport r;
    r.sigma = sigma;
    r.recon_mse = recon_mse;
    r.utility = utility;
    r.delta = delta;
    r.metadata = std::move(metadata);
    return r;
}

}  // namespace obf::metrics
