#include "obf/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "obf/errors.hpp"

namespace obf::sampler {

namespace {

std::string format_shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v,
                                   std::chars_format::fixed);
    return std::string(buf, res.ptr);
}

}  // namespace

long floor_count(double value) {
    const double nearest = std::nearbyint(value);
    if (std::abs(value - nearest) < 1e-9) return long(nearest);
    return long(std::floor(value));
}

void SamplingSpec::validate() const {
    if (!(x > 0.0 && x <= 1.0)) throw RangeError("sampling spec: X must lie in (0, 1]");
    if (!(y >= 0.0 && y <= 1.0)) throw RangeError("sampling spec: Y must lie in [0, 1]");
    if (!(z > 0.0 && z <= 1.0)) throw RangeError("sampling spec: Z must lie in (0, 1]");
}

std::string SamplingSpec::to_string() const {
    return "S-" + format_shortest(x) + "-" + format_shortest(y) + "-" +
           format_shortest(z);
}

SamplingSpec SamplingSpec::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dash = text.find('-', start);
        parts.push_back(text.substr(start, dash - start));
        if (dash == std::string::npos) break;
        start = dash + 1;
    }
    if (parts.size() != 4 || parts[0] != "S")
        throw ConfigError("sampling spec string must look like S-X-Y-Z, got \"" + text + "\"");

    auto field = [&](const std::string& s, const char* which) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError(std::string("sampling spec: cannot parse ") + which +
                              " from \"" + s + "\"");
        return v;
    };
    SamplingSpec spec;
    spec.x = field(parts[1], "X");
    spec.y = field(parts[2], "Y");
    spec.z = field(parts[3], "Z");
    spec.validate();
    return spec;
}

std::vector<int> label_set(int num_classes, double x, rng::RngStream& stream) {
    if (!(x > 0.0 && x <= 1.0)) throw RangeError("label_set: X must lie in (0, 1]");
    const long k = floor_count(double(num_classes) * x);
    if (k == 0)
        throw DegenerateSpec("label degree X=" + format_shortest(x) + " covers zero of " +
                             std::to_string(num_classes) + " labels");
    const auto order = rng::permutation(stream, std::size_t(num_classes));
    std::vector<int> out(order.begin(), order.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> counterpart_labels(const std::vector<int>& anchor,
                                    int num_classes, double x, double y,
                                    rng::RngStream& stream) {
    const long k = floor_count(double(num_classes) * x);
    if (long(anchor.size()) != k)
        throw RangeError("counterpart_labels: anchor size " + std::to_string(anchor.size()) +
                         " does not equal floor(C*X) = " + std::to_string(k));
    const long shared = floor_count(double(num_classes) * x * y);
    const long fresh = k - shared;

    std::vector<bool> in_anchor(std::size_t(num_classes), false);
    for (int l : anchor) in_anchor[std::size_t(l)] = true;
    std::vector<int> complement;
    for (int l = 0; l < num_classes; ++l)
        if (!in_anchor[std::size_t(l)]) complement.push_back(l);

    if (long(complement.size()) < fresh)
        throw InfeasibleOverlap("need " + std::to_string(fresh) +
                                " labels outside the anchor, only " +
                                std::to_string(complement.size()) + " exist");

    std::vector<int> out;
    out.reserve(std::size_t(k));
    {
        const auto order = rng::permutation(stream, anchor.size());
        for (long i = 0; i < shared; ++i) out.push_back(anchor[order[std::size_t(i)]]);
    }
    {
        const auto order = rng::permutation(stream, complement.size());
        for (long i = 0; i < fresh; ++i) out.push_back(complement[order[std::size_t(i)]]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

data::Dataset sample(const data::Dataset& pool, const std::vector<int>& labels,
                     double z, rng::RngStream& stream) {
    if (!(z > 0.0 && z <= 1.0)) throw RangeError("sample: Z must lie in (0, 1]");
    if (labels.empty()) throw RangeError("sample: covered label set is empty");
    for (int l : labels)
        if (l < 0 || l >= pool.num_classes)
            throw RangeError("sample: label " + std::to_string(l) +
                             " outside pool range [0, " +
                             std::to_string(pool.num_classes) + ")");

    std::vector<int> covered = labels;
    std::sort(covered.begin(), covered.end());

    std::vector<std::size_t> chosen;
    for (int l : covered) {
        std::vector<std::size_t> pool_idx;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (pool.labels[i] == l) pool_idx.push_back(i);
        const long take = floor_count(z * double(pool_idx.size()));
        if (take == 0) continue;
        const auto order = rng::permutation(stream, pool_idx.size());
        for (long i = 0; i < take; ++i)
            chosen.push_back(pool_idx[order[std::size_t(i)]]);
    }
    if (chosen.empty())
        throw EmptyResult("sample: every per-label count floors to zero");
    std::sort(chosen.begin(), chosen.end());

    data::Dataset out;
    out.num_classes = pool.num_classes;
    out.height = pool.height;
    out.width = pool.width;
    out.channels = pool.channels;
    out.name = pool.name + "/sample";
    const std::size_t d = pool.dim();
    out.labels.reserve(chosen.size());
    out.features.reserve(chosen.size() * d);
    for (std::size_t i : chosen) {
        out.labels.push_back(pool.labels[i]);
        const auto r = pool.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
    }
    return out;
}

data::Dataset draw(const data::Dataset& pool, const SamplingSpec& spec) {
    spec.validate();
    auto stream = rng::derive_stream(spec.seed, "sample");
    std::vector<int> labels;
    if (spec.anchor_labels) {
        labels = *spec.anchor_labels;
        const long k = floor_count(double(pool.num_classes) * spec.x);
        if (long(labels.size()) != k)
            throw RangeError("anchor label list size " + std::to_string(labels.size()) +
                             " does not equal floor(C*X) = " + std::to_string(k));
    } else {
        labels = label_set(pool.num_classes, spec.x, stream);
    }
    return sample(pool, labels, spec.z, stream);
}

}  // namespace obf::sampler
