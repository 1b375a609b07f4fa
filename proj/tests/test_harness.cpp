// Experiment harness: config parsing/validation, runners on tiny synthetic
// pools, canonical output ordering, and the CSV/sidecar emit contract.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "obf/errors.hpp"
#include "obf/harness.hpp"
#include "obf/rng.hpp"
#include "obf/sampler.hpp"

#include "test_util.hpp"

using namespace obf;
using harness::ExperimentConfig;
using harness::Kind;
using harness::ResultRow;
using harness::ResultTable;

namespace {

// Small blob-pool config that trains in milliseconds; callers override the
// kind-specific parts.
ExperimentConfig tiny_base() {
    ExperimentConfig c;
    c.id = "tiny";
    c.dataset = "blobs";
    c.pool_per_class = 12;
    c.blob_dim = 8;
    c.blob_spread = 0.05;
    c.train_fraction = 0.8;
    c.max_train = 48;
    c.max_test = 24;
    c.preset = "desk-mlp";
    c.epochs = 1;
    c.learning_rate = 1e-3;
    c.batch_size = 16;
    c.sigma_grid = {0.0, 0.5};
    c.seeds = {1};
    return c;
}

harness::RoleSpec role(const std::string& name, const std::string& spec) {
    return {name, sampler::SamplingSpec::parse(spec)};
}

bool canonically_sorted(const std::vector<ResultRow>& rows) {
    auto key = [](const ResultRow& r) {
        return std::make_tuple(r.experiment, r.spec, r.sigma, r.seed, r.metric,
                               r.epoch.value_or(-1));
    };
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (key(rows[i]) < key(rows[i - 1])) return false;
    return true;
}

std::vector<const ResultRow*> rows_with_metric(const ResultTable& t,
                                               const std::string& metric) {
    std::vector<const ResultRow*> out;
    for (const auto& r : t.rows)
        if (r.metric == metric) out.push_back(&r);
    return out;
}

bool same_bits(double a, double b) {
    std::uint64_t ba, bb;
    std::memcpy(&ba, &a, 8);
    std::memcpy(&bb, &b, 8);
    return ba == bb;
}

}  // namespace

TEST_CASE("kind names round-trip and unknown kinds are rejected") {
    const Kind kinds[] = {Kind::accuracy_sweep, Kind::divergence_sweep,
                          Kind::dynamics, Kind::pol_spoof, Kind::averaging_attack};
    for (Kind k : kinds)
        CHECK(harness::parse_kind(harness::kind_name(k)) == k);
    CHECK(harness::kind_name(Kind::pol_spoof) == "pol-spoof");
    CHECK_THROWS_AS(harness::parse_kind("frobnicate"), ConfigError);
    CHECK_THROWS_AS(harness::parse_kind(""), ConfigError);
    CHECK_THROWS_AS(harness::parse_kind("Accuracy-Sweep"), ConfigError);
}

TEST_CASE("config_from_json applies defaults and reads explicit fields") {
    const nlohmann::json minimal{
        {"kind", "accuracy-sweep"},
        {"sigma_grid", {0.0, 0.4}},
        {"seeds", {7, 9}},
        {"roles", {{{"role", "holder"}, {"spec", "S-1-1-0.5"}}}},
    };
    const auto c = harness::config_from_json(minimal);
    CHECK(c.kind == Kind::accuracy_sweep);
    CHECK(c.id == "experiment");
    CHECK(c.dataset == "glyphs");
    CHECK(c.pool_per_class == 1200);
    CHECK(c.train_fraction == 0.9);
    CHECK(c.preset == "desk-mlp");
    CHECK(c.epochs == 15);
    CHECK(c.learning_rate == 1e-3);
    CHECK(c.batch_size == 64);
    CHECK(c.optimizer == "adam");
    CHECK(c.r == 1.0);
    CHECK(c.clip == false);
    CHECK(c.sigma_grid == std::vector<double>{0.0, 0.4});
    CHECK(c.seeds == std::vector<std::uint64_t>{7, 9});
    CHECK(c.init_seed_set == false);
    CHECK(c.roles.size() == 1);
    CHECK(c.roles[0].role == "holder");
    CHECK(c.roles[0].spec.to_string() == "S-1-1-0.5");
    CHECK(c.output == std::filesystem::path("results.csv"));

    nlohmann::json full = minimal;
    full["id"] = "exp9";
    full["dataset"] = "blobs";
    full["blob_dim"] = 4;
    full["blob_spread"] = 0.1;
    full["pool_per_class"] = 30;
    full["train_fraction"] = 0.75;
    full["max_train"] = 100;
    full["max_test"] = 50;
    full["preset"] = "desk-cnn";
    full["epochs"] = 3;
    full["learning_rate"] = 0.01;
    full["batch_size"] = 8;
    full["optimizer"] = "sgd";
    full["r"] = 0.5;
    full["clip"] = true;
    full["init_seed"] = 123;
    full["deviations"] = {"note-a"};
    full["output"] = "out/run.csv";
    full["roles"] = {{{"role", "holder"},
                      {"spec", "S-0.8-1-0.5"},
                      {"anchor_labels", {0, 1, 2, 3, 4, 5, 6, 7}}}};
    const auto f = harness::config_from_json(full);
    CHECK(f.id == "exp9");
    CHECK(f.dataset == "blobs");
    CHECK(f.blob_dim == 4);
    CHECK(f.blob_spread == 0.1);
    CHECK(f.pool_per_class == 30);
    CHECK(f.train_fraction == 0.75);
    CHECK(f.max_train == 100);
    CHECK(f.max_test == 50);
    CHECK(f.preset == "desk-cnn");
    CHECK(f.epochs == 3);
    CHECK(f.learning_rate == 0.01);
    CHECK(f.batch_size == 8);
    CHECK(f.optimizer == "sgd");
    CHECK(f.r == 0.5);
    CHECK(f.clip == true);
    CHECK(f.init_seed == 123);
    CHECK(f.init_seed_set == true);
    CHECK(f.deviations == std::vector<std::string>{"note-a"});
    CHECK(f.output == std::filesystem::path("out/run.csv"));
    REQUIRE(f.roles[0].spec.anchor_labels.has_value());
    CHECK(f.roles[0].spec.anchor_labels->size() == 8);
}

TEST_CASE("config_from_json surfaces malformed documents as ConfigError") {
    CHECK_THROWS_AS(harness::config_from_json(nlohmann::json::object()),
                    ConfigError);  // no kind
    CHECK_THROWS_AS(harness::config_from_json({{"kind", 42}}), ConfigError);
    CHECK_THROWS_AS(
        harness::config_from_json(
            {{"kind", "accuracy-sweep"}, {"sigma_grid", "not-a-list"}}),
        ConfigError);
    CHECK_THROWS_AS(
        harness::config_from_json({{"kind", "accuracy-sweep"},
                                   {"sigma_grid", {0.0}},
                                   {"seeds", {1}},
                                   {"roles", {{{"role", "holder"}}}}}),
        ConfigError);  // role without spec
    CHECK_THROWS_AS(
        harness::config_from_json({{"kind", "accuracy-sweep"},
                                   {"sigma_grid", {0.0}},
                                   {"seeds", {1}},
                                   {"roles", {{{"role", "holder"},
                                               {"spec", "T-1-1-1"}}}}}),
        ConfigError);  // spec string must parse
}

TEST_CASE("validate rejects each out-of-contract field") {
    auto base = tiny_base();
    base.roles = {role("holder", "S-1-1-0.5")};
    base.validate();  // the baseline itself must be fine

    auto expect_bad = [&](auto mutate) {
        auto c = base;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };

    expect_bad([](ExperimentConfig& c) { c.id = ""; });
    expect_bad([](ExperimentConfig& c) { c.sigma_grid = {}; });
    expect_bad([](ExperimentConfig& c) { c.sigma_grid = {0.4, 0.2}; });
    expect_bad([](ExperimentConfig& c) { c.sigma_grid = {0.2, 0.2}; });
    expect_bad([](ExperimentConfig& c) { c.sigma_grid = {-0.1}; });
    expect_bad([](ExperimentConfig& c) { c.seeds = {}; });
    expect_bad([](ExperimentConfig& c) { c.dataset = "imagenet"; });
    expect_bad([](ExperimentConfig& c) { c.dataset = "idx"; });  // no paths
    expect_bad([](ExperimentConfig& c) { c.dataset = "cifar10"; });
    expect_bad([](ExperimentConfig& c) { c.pool_per_class = 0; });
    expect_bad([](ExperimentConfig& c) { c.blob_dim = 0; });
    expect_bad([](ExperimentConfig& c) { c.blob_spread = -1.0; });
    expect_bad([](ExperimentConfig& c) { c.train_fraction = 0.0; });
    expect_bad([](ExperimentConfig& c) { c.train_fraction = 1.0; });
    expect_bad([](ExperimentConfig& c) { c.max_train = 0; });
    expect_bad([](ExperimentConfig& c) { c.max_test = 0; });
    expect_bad([](ExperimentConfig& c) { c.optimizer = "rmsprop"; });
    expect_bad([](ExperimentConfig& c) { c.epochs = -1; });
    expect_bad([](ExperimentConfig& c) { c.batch_size = 0; });
    expect_bad([](ExperimentConfig& c) { c.learning_rate = 0.0; });
    expect_bad([](ExperimentConfig& c) { c.r = -0.1; });
    expect_bad([](ExperimentConfig& c) { c.r = 1.1; });
    expect_bad([](ExperimentConfig& c) { c.roles[0].role = ""; });

    // Bad sampling parameters surface as the sampler's own range error.
    {
        auto c = base;
        c.roles[0].spec.x = 2.0;
        CHECK_THROWS_AS(c.validate(), RangeError);
    }

    SUBCASE("kind-specific role requirements") {
        expect_bad([](ExperimentConfig& c) { c.roles.clear(); });

        auto div = base;
        div.kind = Kind::divergence_sweep;
        CHECK_THROWS_AS(div.validate(), ConfigError);  // no "reference"
        div.roles = {role("reference", "S-1-1-0.5")};
        CHECK_THROWS_AS(div.validate(), ConfigError);  // no target
        div.roles.push_back(role("same", "S-1-1-0.5"));
        div.validate();
        div.kind = Kind::dynamics;
        div.validate();

        auto pol = base;
        pol.kind = Kind::pol_spoof;
        pol.roles = {role("reference", "S-1-1-0.5")};
        CHECK_THROWS_AS(pol.validate(), ConfigError);  // no "spoof"
        pol.roles.push_back(role("spoof", "S-1-1-0.5"));
        pol.validate();
        pol.checkpoint_interval = 0;
        CHECK_THROWS_AS(pol.validate(), ConfigError);
        pol.checkpoint_interval = 4;
        pol.threshold = -1e-9;
        CHECK_THROWS_AS(pol.validate(), ConfigError);

        auto avg = base;
        avg.kind = Kind::averaging_attack;
        avg.roles.clear();  // averaging runs fine without roles
        CHECK_THROWS_AS(avg.validate(), ConfigError);  // no disclosure_counts
        avg.disclosure_counts = {1, 4};
        avg.validate();
        avg.disclosure_counts = {4, 0};
        CHECK_THROWS_AS(avg.validate(), ConfigError);
    }
}

TEST_CASE("config round-trips through JSON") {
    auto c = tiny_base();
    c.kind = Kind::pol_spoof;
    c.roles = {role("reference", "S-0.8-1-0.5"), role("spoof", "S-0.8-0.1-0.5")};
    c.roles[0].spec.anchor_labels = std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7};
    c.deviations = {"shrunk to desk scale"};
    c.disclosure_counts = {2, 8};
    c.checkpoint_interval = 5;
    c.threshold = 1e-4;
    c.init_seed = 77;
    c.init_seed_set = true;

    const auto j1 = harness::config_to_json(c);
    const auto back = harness::config_from_json(j1);
    const auto j2 = harness::config_to_json(back);
    CHECK(j1 == j2);
    CHECK(back.roles[0].spec.anchor_labels == c.roles[0].spec.anchor_labels);
    CHECK(back.checkpoint_interval == 5);
    CHECK(back.threshold == 1e-4);

    SUBCASE("init_seed defaults to the first seed when unset") {
        auto d = tiny_base();
        d.roles = {role("holder", "S-1-1-0.5")};
        d.seeds = {41, 42};
        CHECK(harness::config_to_json(d).at("init_seed").get<std::uint64_t>() == 41);
        d.init_seed = 99;
        d.init_seed_set = true;
        CHECK(harness::config_to_json(d).at("init_seed").get<std::uint64_t>() == 99);
    }
}

TEST_CASE("load_config reads files and classifies failure modes") {
    const auto dir = testutil::make_temp_dir("harness-cfg");
    const auto good = dir / "good.json";
    const nlohmann::json j{
        {"kind", "accuracy-sweep"},
        {"sigma_grid", {0.0}},
        {"seeds", {5}},
        {"roles", {{{"role", "holder"}, {"spec", "S-1-1-1"}}}},
    };
    testutil::write_text(good, j.dump());
    const auto c = harness::load_config(good);
    CHECK(c.seeds == std::vector<std::uint64_t>{5});

    CHECK_THROWS_AS(harness::load_config(dir / "absent.json"), IoError);

    const auto broken = dir / "broken.json";
    testutil::write_text(broken, "{ not json");
    CHECK_THROWS_AS(harness::load_config(broken), ConfigError);

    const auto invalid = dir / "invalid.json";
    testutil::write_text(invalid, "{\"kind\": \"accuracy-sweep\"}");
    CHECK_THROWS_AS(harness::load_config(invalid), ConfigError);
}

TEST_CASE("every shipped experiment config loads and validates") {
    const std::filesystem::path dir = OBF_CONFIG_DIR;
    std::size_t found = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        ++found;
        CAPTURE(entry.path().string());
        const auto c = harness::load_config(entry.path());  // validates
        CHECK(!c.output.empty());
        const auto echo = harness::config_to_json(c);
        CHECK(harness::config_to_json(harness::config_from_json(echo)) == echo);
    }
    CHECK(found == 7);
}

TEST_CASE("accuracy sweep emits one sorted row per (role, sigma, seed)") {
    auto c = tiny_base();
    c.kind = Kind::accuracy_sweep;
    c.roles = {role("holder", "S-1-1-0.5")};
    c.seeds = {1, 2};

    const auto t = harness::run(c);
    REQUIRE(t.rows.size() == 4);  // 1 role x 2 sigmas x 2 seeds
    CHECK(canonically_sorted(t.rows));
    for (const auto& r : t.rows) {
        CHECK(r.experiment == "tiny");
        CHECK(r.spec == "S-1-1-0.5");
        CHECK(r.metric == "accuracy");
        CHECK(!r.epoch.has_value());
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
    }
    CHECK(t.metadata.at("kind") == "accuracy-sweep");
    CHECK(t.metadata.at("id") == "tiny");
    CHECK(t.metadata.at("config").at("dataset") == "blobs");

    SUBCASE("re-running the same config reproduces every value bitwise") {
        const auto t2 = harness::run(c);
        REQUIRE(t2.rows.size() == t.rows.size());
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            CHECK(t2.rows[i].metric == t.rows[i].metric);
            CHECK(same_bits(t2.rows[i].value, t.rows[i].value));
        }
        CHECK(harness::to_csv(t2) == harness::to_csv(t));
    }
}

TEST_CASE("divergence sweep measures weight distance against the reference") {
    auto c = tiny_base();
    c.kind = Kind::divergence_sweep;
    c.sigma_grid = {0.0, 0.3};
    c.seeds = {7};
    c.roles = {role("reference", "S-1-1-0.5"), role("same", "S-1-1-0.5"),
               role("counterpart", "S-0.8-1-0.5")};

    const auto t = harness::run(c);
    CHECK(canonically_sorted(t.rows));
    const auto same_rows = rows_with_metric(t, "fnorm:same");
    const auto counter_rows = rows_with_metric(t, "fnorm:counterpart");
    const auto delta_rows = rows_with_metric(t, "delta:same:counterpart");
    REQUIRE(same_rows.size() == 2);
    REQUIRE(counter_rows.size() == 2);
    REQUIRE(delta_rows.size() == 2);
    CHECK(t.rows.size() == 6);

    std::map<double, double> d_same, d_counter;
    for (const auto* r : same_rows) d_same[r->sigma] = r->value;
    for (const auto* r : counter_rows) d_counter[r->sigma] = r->value;

    // Same spec, same draw seed, sigma 0: the target trains on a byte-equal
    // dataset, so the weight distance is exactly zero.
    CHECK(d_same.at(0.0) == 0.0);
    CHECK(d_same.at(0.3) > 0.0);
    CHECK(d_counter.at(0.0) > 0.0);  // different label subset, real gap

    for (const auto* r : delta_rows) {
        CHECK(r->spec == "S-0.8-1-0.5");
        CHECK(r->value ==
              doctest::Approx(std::abs(d_same.at(r->sigma) - d_counter.at(r->sigma)))
                  .epsilon(1e-15));
    }
}

TEST_CASE("dynamics emits per-epoch curves plus a checkpoint distance series") {
    auto c = tiny_base();
    c.kind = Kind::dynamics;
    c.epochs = 2;
    c.sigma_grid = {0.2};
    c.seeds = {3};
    c.roles = {role("reference", "S-1-1-0.5"), role("peer", "S-1-1-0.5")};

    const auto t = harness::run(c);
    CHECK(canonically_sorted(t.rows));
    CHECK(rows_with_metric(t, "accuracy:reference").size() == 2);
    CHECK(rows_with_metric(t, "train_loss:reference").size() == 2);
    CHECK(rows_with_metric(t, "accuracy:peer").size() == 2);
    CHECK(rows_with_metric(t, "train_loss:peer").size() == 2);
    CHECK(rows_with_metric(t, "fnorm:peer").size() == 2);
    CHECK(t.rows.size() == 10);

    for (const auto* r : rows_with_metric(t, "accuracy:reference")) {
        CHECK(r->sigma == 0.0);  // the reference never sees noise
        CHECK(r->epoch.has_value());
        CHECK(r->value >= 0.0);
        CHECK(r->value <= 1.0);
    }
    for (const auto* r : rows_with_metric(t, "fnorm:peer")) {
        CHECK(r->sigma == 0.2);
        CHECK(r->epoch.has_value());
        CHECK(r->value > 0.0);  // noisy peer diverges from the clean run
    }
    for (const auto* r : rows_with_metric(t, "train_loss:peer"))
        CHECK(std::isfinite(r->value));
}

TEST_CASE("pol-spoof run accepts the honest transcript and rejects the spoof") {
    auto c = tiny_base();
    c.kind = Kind::pol_spoof;
    c.sigma_grid = {0.5};
    c.seeds = {11};
    c.checkpoint_interval = 2;
    c.roles = {role("reference", "S-1-1-0.5"), role("spoof", "S-1-1-0.5")};

    const auto t = harness::run(c);
    CHECK(canonically_sorted(t.rows));
    const auto metric_value = [&](const std::string& m) {
        const auto rows = rows_with_metric(t, m);
        REQUIRE(rows.size() == 1);
        return rows.front()->value;
    };
    CHECK(metric_value("honest_accept") == 1.0);
    CHECK(metric_value("honest_d_max") == 0.0);
    CHECK(metric_value("spoof_accept") == 0.0);
    CHECK(metric_value("spoof_d_min") > 0.0);
    CHECK(metric_value("spoof_d_median") >= metric_value("spoof_d_min"));
    CHECK(t.rows.size() == 5);
}

TEST_CASE("averaging attack rows track the sigma^2/N reconstruction law") {
    auto c = tiny_base();
    c.kind = Kind::averaging_attack;
    c.blob_dim = 16;
    c.pool_per_class = 12;
    c.max_train = 256;
    c.sigma_grid = {0.8};
    c.seeds = {11};
    c.roles.clear();  // attack the whole training pool
    c.disclosure_counts = {1, 4};

    const auto t = harness::run(c);
    CHECK(canonically_sorted(t.rows));
    REQUIRE(t.rows.size() == 2);
    std::map<std::string, double> mse;
    for (const auto& r : t.rows) {
        CHECK(r.spec == "S-1-1-1");
        mse[r.metric] = r.value;
    }
    const double s2 = 0.8 * 0.8;
    CHECK(mse.at("recon_mse[N=1]") == doctest::Approx(s2).epsilon(0.20));
    CHECK(mse.at("recon_mse[N=4]") == doctest::Approx(s2 / 4).epsilon(0.20));
}

TEST_CASE("format_g17 round-trips doubles through text exactly") {
    const double cases[] = {0.1,
                            1.0 / 3.0,
                            1e-300,
                            -0.0,
                            12345.678,
                            4.9406564584124654e-324,  // min denormal
                            1.7976931348623157e308};
    for (double v : cases) {
        const std::string s = harness::format_g17(v);
        const double back = std::strtod(s.c_str(), nullptr);
        CAPTURE(s);
        CHECK(same_bits(back, v));
    }
    CHECK(harness::format_g17(-0.0)[0] == '-');
    CHECK(harness::format_g17(2.0) == "2");
}

TEST_CASE("to_csv quotes per RFC 4180 and leaves the epoch blank when absent") {
    ResultTable t;
    t.rows.push_back({"plain", "S-1-1-1", 0.5, 3, "accuracy", std::nullopt, 0.25});
    t.rows.push_back(
        {"has,comma", "S-1-1-1", 0.0, 4, "say \"hi\"\nthere", long(2), 1.0});
    const std::string csv = harness::to_csv(t);
    const std::string expected =
        "experiment,spec,sigma,seed,metric,epoch,value\n"
        "plain,S-1-1-1,0.5,3,accuracy,,0.25\n"
        "\"has,comma\",S-1-1-1,0,4,\"say \"\"hi\"\"\nthere\",2,1\n";
    CHECK(csv == expected);
}

TEST_CASE("emit writes the CSV plus a fingerprinted sidecar") {
    const auto dir = testutil::make_temp_dir("harness-emit");

    auto c = tiny_base();
    c.kind = Kind::averaging_attack;
    c.sigma_grid = {1.0};
    c.seeds = {2};
    c.roles.clear();
    c.disclosure_counts = {2};
    c.max_train = 32;
    const auto t = harness::run(c);

    const auto out = dir / "rows.csv";
    harness::emit(t, out);

    const auto csv_bytes = testutil::read_text(out);
    CHECK(csv_bytes == harness::to_csv(t));

    const auto meta =
        nlohmann::json::parse(testutil::read_text(out.string() + ".meta.json"));
    CHECK(meta.at("rows").get<std::size_t>() == t.rows.size());
    CHECK(meta.at("id") == "tiny");
    CHECK(meta.at("kind") == "averaging-attack");
    CHECK(meta.at("columns").size() == 7);
    CHECK(meta.at("csv_fingerprint").get<std::string>() ==
          rng::hex(rng::digest(csv_bytes.data(), csv_bytes.size())));
    CHECK(meta.at("config").at("disclosure_counts") ==
          nlohmann::json::array({2}));

    SUBCASE("rows that violate the contract are rejected before writing") {
        ResultTable bad;
        bad.rows.push_back({"x", "S-1-1-1", 0.0, 1, "m", std::nullopt,
                            std::numeric_limits<double>::infinity()});
        CHECK_THROWS_AS(harness::emit(bad, dir / "bad.csv"), RangeError);

        ResultTable unparsable;
        unparsable.rows.push_back({"x", "not-a-spec", 0.0, 1, "m", std::nullopt, 1.0});
        CHECK_THROWS_AS(harness::emit(unparsable, dir / "bad2.csv"), Error);
    }
}
