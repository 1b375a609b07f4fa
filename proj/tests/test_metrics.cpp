#include <doctest.h>

#include <cmath>
#include <vector>

#include "obf/errors.hpp"
#include "obf/metrics.hpp"
#include "obf/nn.hpp"
#include "obf/rng.hpp"

using namespace obf;

namespace {

nn::ModelWeights make_weights(std::vector<std::vector<double>> tensors) {
    nn::ModelWeights w;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        nn::Tensor t;
        t.name = "L" + std::to_string(k) + ".weight";
        t.shape = {int(tensors[k].size())};
        t.values = std::move(tensors[k]);
        w.tensors.push_back(std::move(t));
    }
    return w;  // default (equal) fingerprints
}

}  // namespace

TEST_CASE("fnorm matches hand-computed distances") {
    auto a = make_weights({{1.0, 2.0, 3.0, 4.0}});
    auto z = make_weights({{0.0, 0.0, 0.0, 0.0}});
    CHECK(metrics::fnorm(a, z) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-15));

    // accumulates across tensor boundaries, biases included
    auto two = make_weights({{1.0, 2.0}, {2.0}});
    auto zz = make_weights({{0.0, 0.0}, {0.0}});
    CHECK(metrics::fnorm(two, zz) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("fnorm is a metric-like distance") {
    auto a = make_weights({{0.5, -1.25, 2.0}, {0.1}});
    auto b = make_weights({{-0.5, 0.75, 1.0}, {0.4}});

    CHECK(metrics::fnorm(a, a) == 0.0);
    CHECK(metrics::fnorm(a, b) == metrics::fnorm(b, a));
    CHECK(metrics::fnorm(a, b) > 0.0);

    // scaling every coordinate difference by c scales the distance by |c|
    auto scaled_a = a, scaled_b = b;
    for (std::size_t k = 0; k < a.tensors.size(); ++k)
        for (std::size_t j = 0; j < a.tensors[k].values.size(); ++j) {
            scaled_a.tensors[k].values[j] *= -3.0;
            scaled_b.tensors[k].values[j] *= -3.0;
        }
    CHECK(metrics::fnorm(scaled_a, scaled_b) ==
          doctest::Approx(3.0 * metrics::fnorm(a, b)).epsilon(1e-14));
}

TEST_CASE("fnorm refuses structurally different weight sets") {
    auto a = make_weights({{1.0, 2.0}});
    auto b = make_weights({{1.0, 2.0}});

    auto fp_changed = b;
    fp_changed.arch_fingerprint[0] ^= 0x01;
    CHECK_THROWS_AS(metrics::fnorm(a, fp_changed), ArchMismatch);

    auto extra_tensor = b;
    extra_tensor.tensors.push_back(b.tensors[0]);
    CHECK_THROWS_AS(metrics::fnorm(a, extra_tensor), ArchMismatch);

    auto renamed = b;
    renamed.tensors[0].name = "L9.weight";
    CHECK_THROWS_AS(metrics::fnorm(a, renamed), ArchMismatch);

    auto reshaped = b;
    reshaped.tensors[0].shape = {2, 1};
    CHECK_THROWS_AS(metrics::fnorm(a, reshaped), ArchMismatch);
}

TEST_CASE("distinguishability is the absolute divergence gap") {
    auto ref = make_weights({{0.0, 0.0}});
    auto near = make_weights({{3.0, 4.0}});   // D = 5
    auto far = make_weights({{6.0, 8.0}});    // D = 10
    CHECK(metrics::distinguishability(ref, near, far) ==
          doctest::Approx(5.0).epsilon(1e-15));
    CHECK(metrics::distinguishability(ref, far, near) ==
          doctest::Approx(5.0).epsilon(1e-15));
    CHECK(metrics::distinguishability(ref, near, near) == 0.0);
}

TEST_CASE("trace_compare walks checkpoint sequences elementwise") {
    auto a0 = make_weights({{0.0}});
    auto a1 = make_weights({{1.0}});
    auto b0 = make_weights({{3.0}});
    auto b1 = make_weights({{1.0}});

    auto series = metrics::trace_compare({a0, a1}, {b0, b1});
    REQUIRE(series.size() == 2);
    CHECK(series[0] == doctest::Approx(3.0));
    CHECK(series[1] == 0.0);

    CHECK_THROWS_AS(metrics::trace_compare({a0, a1}, {b0}), LengthMismatch);
    CHECK(metrics::trace_compare({}, {}).empty());
}

TEST_CASE("pud report serializes with fixed keys") {
    auto report = metrics::pud_report(0.5, 0.0156, 0.91, 1.25,
                                      nlohmann::json{{"note", "exp1"}});
    auto j = report.to_json();
    CHECK(j["sigma"] == 0.5);
    CHECK(j["recon_mse"] == 0.0156);
    CHECK(j["utility"] == 0.91);
    CHECK(j["delta"] == 1.25);
    CHECK(j["metadata"]["note"] == "exp1");

    auto bare = metrics::pud_report(0.0, 0.0, 1.0, 0.0);
    CHECK(bare.to_json()["metadata"].is_object());
    CHECK(bare.to_json()["metadata"].empty());
}

TEST_CASE("pud report bounds its fields") {
    CHECK_THROWS_AS(metrics::pud_report(-0.1, 0.0, 0.5, 0.0), RangeError);
    CHECK_THROWS_AS(metrics::pud_report(0.1, -1.0, 0.5, 0.0), RangeError);
    CHECK_THROWS_AS(metrics::pud_report(0.1, 0.0, 1.5, 0.0), RangeError);
    CHECK_THROWS_AS(metrics::pud_report(0.1, 0.0, 0.5, -2.0), RangeError);
    const double nan = std::nan("");
    CHECK_THROWS_AS(metrics::pud_report(nan, 0.0, 0.5, 0.0), RangeError);
}
