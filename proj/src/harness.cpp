#include "obf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "obf/errors.hpp"
#include "obf/metrics.hpp"
#include "obf/nn.hpp"
#include "obf/obfuscate.hpp"
#include "obf/pol.hpp"
#include "obf/rng.hpp"

namespace obf::harness {

Kind parse_kind(const std::string& text) {
    if (text == "accuracy-sweep") return Kind::accuracy_sweep;
    if (text == "divergence-sweep") return Kind::divergence_sweep;
    if (text == "dynamics") return Kind::dynamics;
    if (text == "pol-spoof") return Kind::pol_spoof;
    if (text == "averaging-attack") return Kind::averaging_attack;
    throw ConfigError("unknown experiment kind \"" + text + "\"");
}

std::string kind_name(Kind kind) {
    switch (kind) {
        case Kind::accuracy_sweep: return "accuracy-sweep";
        case Kind::divergence_sweep: return "divergence-sweep";
        case Kind::dynamics: return "dynamics";
        case Kind::pol_spoof: return "pol-spoof";
        case Kind::averaging_attack: return "averaging-attack";
    }
    throw ConfigError("unknown experiment kind value");
}

namespace {

std::uint64_t resolved_init_seed(const ExperimentConfig& c) {
    if (c.init_seed_set) return c.init_seed;
    if (c.seeds.empty()) throw ConfigError("config has no seeds");
    return c.seeds.front();
}

const RoleSpec* find_role(const ExperimentConfig& c, const std::string& role) {
    const RoleSpec* found = nullptr;
    for (const auto& r : c.roles) {
        if (r.role == role) {
            if (found) throw ConfigError("duplicate role \"" + role + "\"");
            found = &r;
        }
    }
    return found;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (id.empty()) throw ConfigError("experiment id must be nonempty");
    if (sigma_grid.empty()) throw ConfigError("sigma_grid must be nonempty");
    for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
        if (!(sigma_grid[i] >= 0.0)) throw ConfigError("sigma_grid values must be >= 0");
        if (i > 0 && !(sigma_grid[i] > sigma_grid[i - 1]))
            throw ConfigError("sigma_grid must be sorted strictly ascending");
    }
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");

    if (dataset != "glyphs" && dataset != "blobs" && dataset != "idx" &&
        dataset != "cifar10")
        throw ConfigError("unknown dataset source \"" + dataset + "\"");
    if (dataset == "idx" && (idx_images.empty() || idx_labels.empty()))
        throw ConfigError("idx dataset needs idx_images and idx_labels paths");
    if (dataset == "cifar10" && cifar_batches.empty())
        throw ConfigError("cifar10 dataset needs batch paths");
    if (pool_per_class < 1) throw ConfigError("pool_per_class must be >= 1");
    if (blob_dim < 1) throw ConfigError("blob_dim must be >= 1");
    if (!(blob_spread >= 0.0)) throw ConfigError("blob_spread must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0, 1)");
    if (max_train < 1 || max_test < 1)
        throw ConfigError("max_train and max_test must be >= 1");

    if (optimizer != "adam" && optimizer != "sgd")
        throw ConfigError("optimizer must be \"adam\" or \"sgd\"");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("r must lie in [0, 1]");

    for (const auto& role : roles) {
        if (role.role.empty()) throw ConfigError("role labels must be nonempty");
        role.spec.validate();
    }

    switch (kind) {
        case Kind::accuracy_sweep:
            if (roles.empty()) throw ConfigError("accuracy-sweep needs at least one role");
            break;
        case Kind::divergence_sweep:
        case Kind::dynamics:
            if (!find_role(*this, "reference"))
                throw ConfigError(kind_name(kind) + " needs a role named \"reference\"");
            if (roles.size() < 2)
                throw ConfigError(kind_name(kind) + " needs at least one target role");
            break;
        case Kind::pol_spoof:
            if (!find_role(*this, "reference") || !find_role(*this, "spoof"))
                throw ConfigError("pol-spoof needs roles \"reference\" and \"spoof\"");
            if (checkpoint_interval < 1)
                throw ConfigError("checkpoint_interval must be >= 1");
            if (!(threshold >= 0.0)) throw ConfigError("threshold must be >= 0");
            break;
        case Kind::averaging_attack:
            if (disclosure_counts.empty())
                throw ConfigError("averaging-attack needs disclosure_counts");
            for (int n : disclosure_counts)
                if (n < 1) throw ConfigError("disclosure_counts entries must be >= 1");
            break;
    }
}

// ------------------------------------------------------------- config ----

namespace {

ExperimentConfig config_from_json_impl(const nlohmann::json& j) {
    ExperimentConfig c;
    c.kind = parse_kind(j.at("kind").get<std::string>());
    c.id = j.value("id", c.id);
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("idx_images")) c.idx_images = j.at("idx_images").get<std::string>();
    if (j.contains("idx_labels")) c.idx_labels = j.at("idx_labels").get<std::string>();
    if (j.contains("cifar_batches"))
        for (const auto& p : j.at("cifar_batches"))
            c.cifar_batches.emplace_back(p.get<std::string>());
    c.pool_per_class = j.value("pool_per_class", c.pool_per_class);
    c.blob_dim = j.value("blob_dim", c.blob_dim);
    c.blob_spread = j.value("blob_spread", c.blob_spread);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.max_train = j.value("max_train", c.max_train);
    c.max_test = j.value("max_test", c.max_test);
    c.preset = j.value("preset", c.preset);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.r = j.value("r", c.r);
    c.clip = j.value("clip", c.clip);
    c.sigma_grid = j.value("sigma_grid", c.sigma_grid);
    if (j.contains("roles")) {
        for (const auto& jr : j.at("roles")) {
            RoleSpec role;
            role.role = jr.at("role").get<std::string>();
            role.spec = sampler::SamplingSpec::parse(jr.at("spec").get<std::string>());
            if (jr.contains("anchor_labels"))
                role.spec.anchor_labels = jr.at("anchor_labels").get<std::vector<int>>();
            c.roles.push_back(std::move(role));
        }
    }
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("init_seed")) {
        c.init_seed = j.at("init_seed").get<std::uint64_t>();
        c.init_seed_set = true;
    }
    c.disclosure_counts = j.value("disclosure_counts", c.disclosure_counts);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.threshold = j.value("threshold", c.threshold);
    c.deviations = j.value("deviations", c.deviations);
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    c.validate();
    return c;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        return config_from_json_impl(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j{
        {"kind", kind_name(c.kind)},
        {"id", c.id},
        {"dataset", c.dataset},
        {"pool_per_class", c.pool_per_class},
        {"blob_dim", c.blob_dim},
        {"blob_spread", c.blob_spread},
        {"train_fraction", c.train_fraction},
        {"max_train", c.max_train},
        {"max_test", c.max_test},
        {"preset", c.preset},
        {"epochs", c.epochs},
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"optimizer", c.optimizer},
        {"r", c.r},
        {"clip", c.clip},
        {"sigma_grid", c.sigma_grid},
        {"seeds", c.seeds},
        {"init_seed", resolved_init_seed(c)},
        {"checkpoint_interval", c.checkpoint_interval},
        {"threshold", c.threshold},
        {"deviations", c.deviations},
        {"output", c.output.string()},
    };
    if (!c.idx_images.empty()) j["idx_images"] = c.idx_images.string();
    if (!c.idx_labels.empty()) j["idx_labels"] = c.idx_labels.string();
    if (!c.cifar_batches.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& p : c.cifar_batches) arr.push_back(p.string());
        j["cifar_batches"] = arr;
    }
    if (!c.disclosure_counts.empty()) j["disclosure_counts"] = c.disclosure_counts;
    auto roles = nlohmann::json::array();
    for (const auto& role : c.roles) {
        nlohmann::json jr{{"role", role.role}, {"spec", role.spec.to_string()}};
        if (role.spec.anchor_labels) jr["anchor_labels"] = *role.spec.anchor_labels;
        roles.push_back(std::move(jr));
    }
    j["roles"] = roles;
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

// -------------------------------------------------------------- runner ----

namespace {

data::Dataset gather_rows(const data::Dataset& src,
                          const std::vector<std::size_t>& rows,
                          const std::string& name_suffix) {
    data::Dataset out;
    out.num_classes = src.num_classes;
    out.height = src.height;
    out.width = src.width;
    out.channels = src.channels;
    out.name = src.name + name_suffix;
    const std::size_t d = src.dim();
    out.labels.reserve(rows.size());
    out.features.reserve(rows.size() * d);
    for (std::size_t i : rows) {
        out.labels.push_back(src.labels[i]);
        const auto r = src.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
    }
    return out;
}

// Uniform cap to at most `cap` rows (ascending original order).
data::Dataset cap_uniform(const data::Dataset& src, std::size_t cap,
                          rng::RngStream stream) {
    if (src.size() <= cap) return src;
    auto perm = rng::permutation(stream, src.size());
    std::vector<std::size_t> keep(perm.begin(), perm.begin() + long(cap));
    std::sort(keep.begin(), keep.end());
    return gather_rows(src, keep, "/cap");
}

struct Context {
    data::Dataset train_pool;
    data::Dataset test_set;
    nn::ModelArch arch;
    nn::ModelWeights init;
    bool has_model = false;
};

Context build_context(const ExperimentConfig& c) {
    const std::uint64_t iseed = resolved_init_seed(c);

    data::Dataset pool;
    if (c.dataset == "glyphs") {
        auto s = rng::derive_stream(iseed, "sample", 1000);
        pool = data::synth_glyphs(c.pool_per_class, s);
    } else if (c.dataset == "blobs") {
        auto s = rng::derive_stream(iseed, "sample", 1000);
        pool = data::synth_blobs(10, c.pool_per_class, c.blob_dim, c.blob_spread, s);
    } else if (c.dataset == "idx") {
        pool = data::load_idx(c.idx_images, c.idx_labels);
    } else {
        pool = data::load_cifar10(c.cifar_batches);
    }

    Context ctx;
    auto split_stream = rng::derive_stream(iseed, "split");
    auto [train, test] = data::split(pool, c.train_fraction, split_stream);
    ctx.train_pool = std::move(train);
    ctx.test_set =
        cap_uniform(test, c.max_test, rng::derive_stream(iseed, "split", 1));

    if (c.kind != Kind::averaging_attack) {
        const nn::TensorShape input{ctx.train_pool.channels, ctx.train_pool.height,
                                    ctx.train_pool.width, false};
        ctx.arch = nn::make_arch(c.preset, input, ctx.train_pool.num_classes);
        auto init_stream = rng::derive_stream(iseed, "init");
        ctx.init = nn::init_model(ctx.arch, init_stream);
        ctx.has_model = true;
    }
    return ctx;
}

nn::TrainConfig train_config(const ExperimentConfig& c, std::uint64_t seed) {
    nn::TrainConfig tc;
    tc.epochs = c.epochs;
    tc.learning_rate = c.learning_rate;
    tc.batch_size = c.batch_size;
    tc.optimizer = c.optimizer == "sgd" ? nn::Optimizer{nn::Sgd{}}
                                        : nn::Optimizer{nn::Adam{}};
    tc.seed = seed;
    return tc;
}

// One (spec, seed) training-set draw: sample from the pool, cap to the
// desk-scale budget.
data::Dataset draw_capped(const ExperimentConfig& c, const Context& ctx,
                          const sampler::SamplingSpec& role_spec,
                          std::uint64_t seed) {
    sampler::SamplingSpec spec = role_spec;
    spec.seed = seed;
    auto drawn = sampler::draw(ctx.train_pool, spec);
    return cap_uniform(drawn, c.max_train, rng::derive_stream(seed, "sample", 1));
}

data::Dataset obfuscated(const ExperimentConfig& c, const data::Dataset& set,
                         double sigma, std::uint64_t seed) {
    return obfuscate::apply(set, {sigma, c.r, c.clip, seed});
}

void add_row(ResultTable& table, const ExperimentConfig& c,
             const std::string& spec, double sigma, std::uint64_t seed,
             std::string metric, std::optional<long> epoch, double value) {
    table.rows.push_back({c.id, spec, sigma, seed, std::move(metric), epoch, value});
}

void run_accuracy_sweep(const ExperimentConfig& c, const Context& ctx,
                        ResultTable& table) {
    for (const auto& role : c.roles) {
        for (double sigma : c.sigma_grid) {
            for (std::uint64_t seed : c.seeds) {
                const auto train_set = draw_capped(c, ctx, role.spec, seed);
                const auto obf_set = obfuscated(c, train_set, sigma, seed);
                const auto result =
                    nn::train(ctx.arch, ctx.init, obf_set, train_config(c, seed));
                const double acc = nn::evaluate(ctx.arch, result.final, ctx.test_set);
                add_row(table, c, role.spec.to_string(), sigma, seed, "accuracy",
                        std::nullopt, acc);
            }
        }
    }
}

void run_divergence_sweep(const ExperimentConfig& c, const Context& ctx,
                          ResultTable& table) {
    const RoleSpec& ref = *find_role(c, "reference");
    for (std::uint64_t seed : c.seeds) {
        const auto ref_set = draw_capped(c, ctx, ref.spec, seed);
        const auto w_ref =
            nn::train(ctx.arch, ctx.init, ref_set, train_config(c, seed)).final;

        std::map<std::pair<std::string, double>, double> d_by_role_sigma;
        for (const auto& role : c.roles) {
            if (role.role == "reference") continue;
            for (double sigma : c.sigma_grid) {
                const auto target_set = draw_capped(c, ctx, role.spec, seed);
                const auto obf_set = obfuscated(c, target_set, sigma, seed);
                const auto w =
                    nn::train(ctx.arch, ctx.init, obf_set, train_config(c, seed)).final;
                const double d = metrics::fnorm(w_ref, w);
                d_by_role_sigma[{role.role, sigma}] = d;
                add_row(table, c, role.spec.to_string(), sigma, seed,
                        "fnorm:" + role.role, std::nullopt, d);
            }
        }

        // Distinguishability gaps against the "same"-distribution target.
        if (find_role(c, "same")) {
            for (const auto& role : c.roles) {
                if (role.role == "reference" || role.role == "same") continue;
                for (double sigma : c.sigma_grid) {
                    const double delta =
                        std::abs(d_by_role_sigma.at({"same", sigma}) -
                                 d_by_role_sigma.at({role.role, sigma}));
                    add_row(table, c, role.spec.to_string(), sigma, seed,
                            "delta:same:" + role.role, std::nullopt, delta);
                }
            }
        }
    }
}

void run_dynamics(const ExperimentConfig& c, const Context& ctx,
                  ResultTable& table) {
    const RoleSpec& ref = *find_role(c, "reference");
    for (std::uint64_t seed : c.seeds) {
        const auto ref_set = draw_capped(c, ctx, ref.spec, seed);
        const auto ref_run = nn::train(ctx.arch, ctx.init, ref_set,
                                       train_config(c, seed), &ctx.test_set);
        std::vector<nn::ModelWeights> ref_epochs;
        for (const auto& rec : ref_run.trace.epochs) {
            add_row(table, c, ref.spec.to_string(), 0.0, seed, "accuracy:reference",
                    rec.epoch, rec.test_accuracy.value());
            add_row(table, c, ref.spec.to_string(), 0.0, seed, "train_loss:reference",
                    rec.epoch, rec.train_loss);
            ref_epochs.push_back(rec.weights);
        }

        for (const auto& role : c.roles) {
            if (role.role == "reference") continue;
            for (double sigma : c.sigma_grid) {
                const auto target_set = draw_capped(c, ctx, role.spec, seed);
                const auto obf_set = obfuscated(c, target_set, sigma, seed);
                const auto run = nn::train(ctx.arch, ctx.init, obf_set,
                                           train_config(c, seed), &ctx.test_set);
                std::vector<nn::ModelWeights> epochs;
                for (const auto& rec : run.trace.epochs) {
                    add_row(table, c, role.spec.to_string(), sigma, seed,
                            "accuracy:" + role.role, rec.epoch,
                            rec.test_accuracy.value());
                    add_row(table, c, role.spec.to_string(), sigma, seed,
                            "train_loss:" + role.role, rec.epoch, rec.train_loss);
                    epochs.push_back(rec.weights);
                }
                const auto series = metrics::trace_compare(ref_epochs, epochs);
                for (std::size_t e = 0; e < series.size(); ++e)
                    add_row(table, c, role.spec.to_string(), sigma, seed,
                            "fnorm:" + role.role, long(e), series[e]);
            }
        }
    }
}

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? values[n / 2]
                      : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void run_pol_spoof(const ExperimentConfig& c, const Context& ctx,
                   ResultTable& table) {
    const RoleSpec& ref = *find_role(c, "reference");
    const RoleSpec& spoof = *find_role(c, "spoof");
    for (std::uint64_t seed : c.seeds) {
        for (double sigma : c.sigma_grid) {
            const auto anchor_set = draw_capped(c, ctx, ref.spec, seed);
            const auto anchor_obf = obfuscated(c, anchor_set, sigma, seed);
            const auto spoof_set = draw_capped(c, ctx, spoof.spec, seed);
            // Fresh noise for the spoofer's own obfuscation.
            const auto spoof_obf = obfuscated(c, spoof_set, sigma,
                                              rng::derive_seed(seed, "noise", 1));

            const auto proof = pol::prove(ctx.arch, ctx.init, anchor_obf,
                                          train_config(c, seed),
                                          c.checkpoint_interval);
            const auto honest =
                pol::verify(ctx.arch, proof.transcript, anchor_obf, {}, c.threshold);
            double honest_max = 0.0;
            for (const auto& s : honest.segments) honest_max = std::max(honest_max, s.d);
            add_row(table, c, ref.spec.to_string(), sigma, seed, "honest_d_max",
                    std::nullopt, honest_max);
            add_row(table, c, ref.spec.to_string(), sigma, seed, "honest_accept",
                    std::nullopt, honest.accepted ? 1.0 : 0.0);

            const auto trial =
                pol::spoof_trial(ctx.arch, proof.transcript, spoof_obf, c.threshold);
            std::vector<double> ds;
            for (const auto& s : trial.segments) ds.push_back(s.d);
            add_row(table, c, spoof.spec.to_string(), sigma, seed, "spoof_d_min",
                    std::nullopt, *std::min_element(ds.begin(), ds.end()));
            add_row(table, c, spoof.spec.to_string(), sigma, seed, "spoof_d_median",
                    std::nullopt, median_of(ds));
            add_row(table, c, spoof.spec.to_string(), sigma, seed, "spoof_accept",
                    std::nullopt, trial.accepted ? 1.0 : 0.0);
        }
    }
}

void run_averaging_attack(const ExperimentConfig& c, const Context& ctx,
                          ResultTable& table) {
    for (std::uint64_t seed : c.seeds) {
        data::Dataset base;
        std::string spec_str = "S-1-1-1";
        if (!c.roles.empty()) {
            base = draw_capped(c, ctx, c.roles.front().spec, seed);
            spec_str = c.roles.front().spec.to_string();
        } else {
            base = cap_uniform(ctx.train_pool, c.max_train,
                               rng::derive_stream(seed, "sample", 1));
        }
        for (double sigma : c.sigma_grid) {
            for (int n_disc : c.disclosure_counts) {
                std::vector<data::Dataset> disclosures;
                disclosures.reserve(std::size_t(n_disc));
                for (int i = 0; i < n_disc; ++i)
                    disclosures.push_back(obfuscate::apply(
                        base, {sigma, c.r, c.clip,
                               rng::derive_seed(seed, "noise", std::uint64_t(i))}));
                const auto rec = obfuscate::reconstruct_by_averaging(disclosures, base);
                add_row(table, c, spec_str, sigma, seed,
                        "recon_mse[N=" + std::to_string(n_disc) + "]", std::nullopt,
                        rec.mse);
            }
        }
    }
}

}  // namespace

ResultTable run(const ExperimentConfig& config) {
    config.validate();
    const Context ctx = build_context(config);

    ResultTable table;
    switch (config.kind) {
        case Kind::accuracy_sweep: run_accuracy_sweep(config, ctx, table); break;
        case Kind::divergence_sweep: run_divergence_sweep(config, ctx, table); break;
        case Kind::dynamics: run_dynamics(config, ctx, table); break;
        case Kind::pol_spoof: run_pol_spoof(config, ctx, table); break;
        case Kind::averaging_attack: run_averaging_attack(config, ctx, table); break;
    }

    std::sort(table.rows.begin(), table.rows.end(),
              [](const ResultRow& a, const ResultRow& b) {
                  const long ea = a.epoch.value_or(-1), eb = b.epoch.value_or(-1);
                  return std::tie(a.experiment, a.spec, a.sigma, a.seed, a.metric, ea) <
                         std::tie(b.experiment, b.spec, b.sigma, b.seed, b.metric, eb);
              });

    table.metadata = nlohmann::json{
        {"id", config.id},
        {"kind", kind_name(config.kind)},
        {"config", config_to_json(config)},
        {"deviations", config.deviations},
    };
    return table;
}

// ---------------------------------------------------------------- emit ----

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out.push_back(ch);
    }
    out += "\"";
    return out;
}

}  // namespace

std::string to_csv(const ResultTable& table) {
    std::string out = "experiment,spec,sigma,seed,metric,epoch,value\n";
    for (const auto& row : table.rows) {
        out += csv_quote(row.experiment);
        out.push_back(',');
        out += csv_quote(row.spec);
        out.push_back(',');
        out += format_g17(row.sigma);
        out.push_back(',');
        out += std::to_string(row.seed);
        out.push_back(',');
        out += csv_quote(row.metric);
        out.push_back(',');
        if (row.epoch) out += std::to_string(*row.epoch);
        out.push_back(',');
        out += format_g17(row.value);
        out.push_back('\n');
    }
    return out;
}

void emit(const ResultTable& table, const std::filesystem::path& path) {
    for (const auto& row : table.rows) {
        if (!std::isfinite(row.value) || !std::isfinite(row.sigma))
            throw RangeError("emit: non-finite value in result row");
        sampler::SamplingSpec::parse(row.spec);  // spec strings must parse back
    }
    const std::string csv = to_csv(table);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out.write(csv.data(), std::streamsize(csv.size()));
        if (!out) throw IoError("write failed for " + path.string());
    }

    nlohmann::json meta = table.metadata.is_null() ? nlohmann::json::object()
                                                   : table.metadata;
    meta["columns"] = {"experiment", "spec", "sigma", "seed", "metric", "epoch", "value"};
    meta["rows"] = table.rows.size();
    meta["csv_fingerprint"] = rng::hex(rng::digest(csv.data(), csv.size()));
    const auto meta_path = path.string() + ".meta.json";
    std::ofstream mout(meta_path, std::ios::binary | std::ios::trunc);
    if (!mout) throw IoError("cannot open " + meta_path + " for writing");
    mout << meta.dump(2) << "\n";
    if (!mout) throw IoError("write failed for " + meta_path);
}

}  // namespace obf::harness
