#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obf/dataset.hpp"
#include "obf/sampler.hpp"

namespace obf::harness {

enum class Kind {
    accuracy_sweep,
    divergence_sweep,
    dynamics,
    pol_spoof,
    averaging_attack,
};

Kind parse_kind(const std::string& text);       // throws ConfigError
std::string kind_name(Kind kind);

struct RoleSpec {
    std::string role;
    sampler::SamplingSpec spec;
};

struct ExperimentConfig {
    Kind kind = Kind::accuracy_sweep;
    std::string id = "experiment";

    // dataset source: "glyphs" | "blobs" | "idx" | "cifar10"
    std::string dataset = "glyphs";
    std::filesystem::path idx_images;
    std::filesystem::path idx_labels;
    std::vector<std::filesystem::path> cifar_batches;
    int pool_per_class = 1200;   // glyphs/blobs pool size
    int blob_dim = 16;
    double blob_spread = 0.05;

    double train_fraction = 0.9;
    std::size_t max_train = 5000;  // desk-scale caps
    std::size_t max_test = 1000;

    std::string preset = "desk-mlp";
    int epochs = 15;
    double learning_rate = 1e-3;
    int batch_size = 64;
    std::string optimizer = "adam";  // "adam" | "sgd"

    double r = 1.0;      // obfuscated proportion
    bool clip = false;
    std::vector<double> sigma_grid;
    std::vector<RoleSpec> roles;
    std::vector<std::uint64_t> seeds;
    std::uint64_t init_seed = 0;   // shared initial model; defaults to seeds[0]
    bool init_seed_set = false;

    std::vector<int> disclosure_counts;  // averaging attack N grid
    long checkpoint_interval = 20;       // pol-spoof k
    double threshold = 1e-6;             // pol-spoof accept threshold

    std::vector<std::string> deviations;  // echoed into output metadata
    std::filesystem::path output = "results.csv";

    void validate() const;  // throws ConfigError
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ResultRow {
    std::string experiment;
    std::string spec;    // parses back via SamplingSpec::parse
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::string metric;
    std::optional<long> epoch;
    double value = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    nlohmann::json metadata;
};

// Runs the configured experiment; rows come back canonically sorted by
// (experiment, spec, sigma, seed, metric, epoch).
ResultTable run(const ExperimentConfig& config);

// 17-significant-digit float formatting (round-trip exact), shared with the
// CLI's stdout contract.
std::string format_g17(double v);

// Deterministic CSV bytes: header row, RFC-4180 quoting, LF endings.
std::string to_csv(const ResultTable& table);

// Writes the CSV plus a sidecar "<path>.meta.json" carrying the config echo,
// deviations, and a digest fingerprint of the CSV bytes.
void emit(const ResultTable& table, const std::filesystem::path& path);

}  // namespace obf::harness
