// obf: command-line front end over the obfuscation library.
//
// Dataset arguments are path prefixes: PREFIX names the IDX pair
// "PREFIX.images.idx" + "PREFIX.labels.idx".  Checkpoint, transcript and
// config arguments are plain file paths.
//
// Exit codes: 0 success, 1 flag/validation error, 2 pipeline error (the
// library error name is printed to stderr).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "obf/dataset.hpp"
#include "obf/errors.hpp"
#include "obf/harness.hpp"
#include "obf/metrics.hpp"
#include "obf/nn.hpp"
#include "obf/obfuscate.hpp"
#include "obf/pol.hpp"
#include "obf/rng.hpp"
#include "obf/sampler.hpp"

namespace {

using namespace obf;

std::string images_path(const std::string& prefix) { return prefix + ".images.idx"; }
std::string labels_path(const std::string& prefix) { return prefix + ".labels.idx"; }

data::Dataset load_pair(const std::string& prefix) {
    return data::load_idx(images_path(prefix), labels_path(prefix));
}

void save_pair(const data::Dataset& ds, const std::string& prefix) {
    data::save_idx(ds, images_path(prefix), labels_path(prefix));
}

void print_value(double v) { std::cout << harness::format_g17(v) << "\n"; }

nn::Optimizer parse_optimizer(const std::string& name) {
    if (name == "adam") return nn::Adam{};
    if (name == "sgd") return nn::Sgd{};
    throw CLI::ValidationError("--optimizer", "must be \"adam\" or \"sgd\"");
}

nn::TensorShape input_shape(const data::Dataset& ds) {
    return {ds.channels, ds.height, ds.width, false};
}

// Class count recoverable from a trained model: the final dense layer's
// bias length (its tensors come last).
int classes_from_weights(const nn::ModelWeights& w) {
    if (w.tensors.empty() || w.tensors.back().shape.empty())
        throw ArchMismatch("checkpoint carries no parameter tensors");
    return w.tensors.back().shape.front();
}

void print_verdict(const pol::Verdict& verdict) {
    for (const auto& seg : verdict.segments)
        std::cout << "segment " << seg.segment << " "
                  << harness::format_g17(seg.d) << "\n";
    std::cout << (verdict.accepted ? "accept" : "reject") << "\n";
}

struct TrainFlags {
    std::string preset = "desk-mlp";
    int epochs = 1;
    double lr = 1e-3;
    int batch = 32;
    std::string optimizer = "adam";
    int classes = 0;  // 0 = infer from labels
    std::uint64_t seed = 0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--preset", f.preset, "model preset (desk-mlp|desk-cnn|paper-cnn)")
        ->capture_default_str();
    cmd->add_option("--epochs", f.epochs, "training epochs")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--lr", f.lr, "learning rate")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--batch", f.batch, "batch size")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--optimizer", f.optimizer, "optimizer (adam|sgd)")
        ->capture_default_str();
    cmd->add_option("--classes", f.classes,
                    "class count override (default: max label + 1)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", f.seed, "RNG seed (init + batch shuffling)")
        ->required();
}

nn::TrainConfig train_config(const TrainFlags& f) {
    nn::TrainConfig tc;
    tc.epochs = f.epochs;
    tc.learning_rate = f.lr;
    tc.batch_size = f.batch;
    tc.optimizer = parse_optimizer(f.optimizer);
    tc.seed = f.seed;
    return tc;
}

data::Dataset load_train_set(const std::string& prefix, int classes) {
    auto ds = load_pair(prefix);
    if (classes > 0) {
        if (classes < ds.num_classes)
            throw CLI::ValidationError(
                "--classes", "smaller than max label + 1 of the dataset");
        ds.num_classes = classes;
    }
    return ds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic dataset-obfuscation toolkit"};
    app.require_subcommand(1);

    // ---- synth ----------------------------------------------------------
    struct {
        std::string kind = "glyphs";
        int per_class = 100;
        int classes = 10;
        int dim = 16;
        double spread = 0.05;
        std::uint64_t seed = 0;
        std::string out;
    } synth;
    {
        auto* cmd = app.add_subcommand("synth", "write a synthetic dataset pair");
        cmd->add_option("--kind", synth.kind, "fixture family (glyphs|blobs)")
            ->capture_default_str();
        cmd->add_option("--per-class", synth.per_class, "samples per class")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--classes", synth.classes, "class count (blobs only)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--dim", synth.dim, "feature count (blobs only)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--spread", synth.spread, "per-class jitter (blobs only)")
            ->capture_default_str()
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--seed", synth.seed, "RNG seed")->required();
        cmd->add_option("out", synth.out, "output dataset prefix")->required();
        cmd->callback([&] {
            auto stream = rng::derive_stream(synth.seed, "sample");
            data::Dataset ds;
            if (synth.kind == "glyphs")
                ds = data::synth_glyphs(synth.per_class, stream);
            else if (synth.kind == "blobs")
                ds = data::synth_blobs(synth.classes, synth.per_class, synth.dim,
                                       synth.spread, stream);
            else
                throw CLI::ValidationError("--kind", "must be \"glyphs\" or \"blobs\"");
            save_pair(ds, synth.out);
            std::cerr << "wrote " << ds.size() << " samples to " << synth.out
                      << ".{images,labels}.idx\n";
        });
    }

    // ---- sample ---------------------------------------------------------
    struct {
        double x = 1.0, y = 1.0, z = 1.0;
        std::uint64_t seed = 0;
        std::vector<int> anchor;
        std::string in, out;
    } smp;
    {
        auto* cmd = app.add_subcommand("sample", "S-X-Y-Z non-IID draw");
        cmd->add_option("--x", smp.x, "label degree X in (0,1]")->required();
        cmd->add_option("--y", smp.y, "label overlap ratio Y in [0,1]")->required();
        cmd->add_option("--z", smp.z, "per-label sampling ratio Z in (0,1]")->required();
        cmd->add_option("--seed", smp.seed, "RNG seed")->required();
        cmd->add_option("--anchor", smp.anchor,
                        "explicit covered label set (comma separated)")
            ->delimiter(',');
        cmd->add_option("in", smp.in, "input dataset prefix")->required();
        cmd->add_option("out", smp.out, "output dataset prefix")->required();
        cmd->callback([&] {
            sampler::SamplingSpec spec{smp.x, smp.y, smp.z, smp.seed, {}};
            if (!smp.anchor.empty()) spec.anchor_labels = smp.anchor;
            save_pair(sampler::draw(load_pair(smp.in), spec), smp.out);
        });
    }

    // ---- obfuscate ------------------------------------------------------
    struct {
        double sigma = 0.0, r = 1.0;
        bool clip = false;
        std::uint64_t seed = 0;
        std::string in, out;
    } obfc;
    {
        auto* cmd = app.add_subcommand("obfuscate", "add Gaussian feature noise");
        cmd->add_option("--sigma", obfc.sigma, "noise standard deviation")
            ->required()
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--r", obfc.r, "obfuscated sample proportion")
            ->capture_default_str()
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_flag("--clip", obfc.clip, "clamp outputs to [0,1]");
        cmd->add_option("--seed", obfc.seed, "RNG seed")->required();
        cmd->add_option("in", obfc.in, "input dataset prefix")->required();
        cmd->add_option("out", obfc.out, "output dataset prefix")->required();
        cmd->callback([&] {
            save_pair(obfuscate::apply(load_pair(obfc.in),
                                       {obfc.sigma, obfc.r, obfc.clip, obfc.seed}),
                      obfc.out);
        });
    }

    // ---- train ----------------------------------------------------------
    struct {
        TrainFlags f;
        std::string data, out;
    } trn;
    {
        auto* cmd = app.add_subcommand("train", "train a model, write a checkpoint");
        add_train_flags(cmd, trn.f);
        cmd->add_option("data", trn.data, "training dataset prefix")->required();
        cmd->add_option("out", trn.out, "output checkpoint file")->required();
        cmd->callback([&] {
            const auto ds = load_train_set(trn.data, trn.f.classes);
            const auto arch =
                nn::make_arch(trn.f.preset, input_shape(ds), ds.num_classes);
            auto init_stream = rng::derive_stream(trn.f.seed, "init");
            const auto init = nn::init_model(arch, init_stream);
            const auto result = nn::train(arch, init, ds, train_config(trn.f));
            for (const auto& rec : result.trace.epochs)
                std::cerr << "epoch " << rec.epoch << " loss "
                          << harness::format_g17(rec.train_loss) << "\n";
            nn::save_checkpoint(trn.out, result.final);
            if (!result.trace.epochs.empty())
                print_value(result.trace.epochs.back().train_loss);
        });
    }

    // ---- eval -----------------------------------------------------------
    struct {
        std::string preset = "desk-mlp";
        std::string data, ckpt;
    } evl;
    {
        auto* cmd = app.add_subcommand("eval", "test-set accuracy of a checkpoint");
        cmd->add_option("--preset", evl.preset, "model preset")->capture_default_str();
        cmd->add_option("data", evl.data, "evaluation dataset prefix")->required();
        cmd->add_option("ckpt", evl.ckpt, "checkpoint file")->required();
        cmd->callback([&] {
            const auto ds = load_pair(evl.data);
            const auto weights = nn::load_checkpoint(evl.ckpt);
            const auto arch = nn::make_arch(evl.preset, input_shape(ds),
                                            classes_from_weights(weights));
            if (arch.fingerprint() != weights.arch_fingerprint)
                throw ArchMismatch("checkpoint does not match preset \"" +
                                   evl.preset + "\" on this dataset shape");
            print_value(nn::evaluate(arch, weights, ds));
        });
    }

    // ---- fnorm ----------------------------------------------------------
    struct {
        std::string a, b;
    } fn;
    {
        auto* cmd = app.add_subcommand("fnorm", "F-norm distance of two checkpoints");
        cmd->add_option("a", fn.a, "checkpoint file")->required();
        cmd->add_option("b", fn.b, "checkpoint file")->required();
        cmd->callback([&] {
            print_value(metrics::fnorm(nn::load_checkpoint(fn.a),
                                       nn::load_checkpoint(fn.b)));
        });
    }

    // ---- pol ------------------------------------------------------------
    auto* pol_cmd = app.add_subcommand("pol", "proof-of-learning transcripts");
    pol_cmd->require_subcommand(1);

    struct {
        TrainFlags f;
        long k = 20;
        std::string data, out;
    } ppr;
    {
        auto* cmd = pol_cmd->add_subcommand("prove", "train and write a transcript");
        add_train_flags(cmd, ppr.f);
        cmd->add_option("--k", ppr.k, "checkpoint interval (steps)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("data", ppr.data, "training dataset prefix")->required();
        cmd->add_option("out", ppr.out, "output transcript file")->required();
        cmd->callback([&] {
            const auto ds = load_train_set(ppr.data, ppr.f.classes);
            const auto arch =
                nn::make_arch(ppr.f.preset, input_shape(ds), ds.num_classes);
            auto init_stream = rng::derive_stream(ppr.f.seed, "init");
            const auto init = nn::init_model(arch, init_stream);
            const auto proof =
                pol::prove(arch, init, ds, train_config(ppr.f), ppr.k);
            pol::save_transcript(ppr.out, proof.transcript);
            std::cerr << "transcript: " << proof.transcript.checkpoints.size()
                      << " checkpoints\n";
        });
    }

    struct {
        std::string preset = "desk-mlp";
        double threshold = 1e-6;
        std::vector<long> segments;
        std::string transcript, data;
    } pvf;
    {
        auto* cmd = pol_cmd->add_subcommand("verify", "replay a transcript");
        cmd->add_option("--preset", pvf.preset, "model preset")->capture_default_str();
        cmd->add_option("--threshold", pvf.threshold, "max accepted segment distance")
            ->capture_default_str()
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--segments", pvf.segments,
                        "segment indices to replay (default: all)")
            ->delimiter(',');
        cmd->add_option("transcript", pvf.transcript, "transcript file")->required();
        cmd->add_option("data", pvf.data, "claimed training dataset prefix")->required();
        cmd->callback([&] {
            const auto transcript = pol::load_transcript(pvf.transcript);
            const auto ds = load_pair(pvf.data);
            if (transcript.checkpoints.empty())
                throw ArchMismatch("transcript carries no checkpoints");
            const auto arch = nn::make_arch(
                pvf.preset, input_shape(ds),
                classes_from_weights(transcript.checkpoints.front().weights));
            print_verdict(pol::verify(arch, transcript, ds, pvf.segments,
                                      pvf.threshold));
        });
    }

    struct {
        std::string preset = "desk-mlp";
        double threshold = 1e-6;
        std::string transcript, data;
    } psp;
    {
        auto* cmd = pol_cmd->add_subcommand(
            "spoof", "replay a transcript against a different dataset");
        cmd->add_option("--preset", psp.preset, "model preset")->capture_default_str();
        cmd->add_option("--threshold", psp.threshold, "max accepted segment distance")
            ->capture_default_str()
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("transcript", psp.transcript, "transcript file")->required();
        cmd->add_option("data", psp.data, "spoof dataset prefix")->required();
        cmd->callback([&] {
            const auto transcript = pol::load_transcript(psp.transcript);
            const auto ds = load_pair(psp.data);
            if (transcript.checkpoints.empty())
                throw ArchMismatch("transcript carries no checkpoints");
            const auto arch = nn::make_arch(
                psp.preset, input_shape(ds),
                classes_from_weights(transcript.checkpoints.front().weights));
            print_verdict(pol::spoof_trial(arch, transcript, ds, psp.threshold));
        });
    }

    // ---- attack ---------------------------------------------------------
    auto* attack_cmd = app.add_subcommand("attack", "privacy attacks");
    attack_cmd->require_subcommand(1);

    struct {
        double sigma = 0.0, r = 1.0;
        bool clip = false;
        int n = 1;
        std::uint64_t seed = 0;
        std::string in, out;
    } avg;
    {
        auto* cmd = attack_cmd->add_subcommand(
            "average", "average N independent obfuscations, print the MSE");
        cmd->add_option("--sigma", avg.sigma, "noise standard deviation")
            ->required()
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--r", avg.r, "obfuscated sample proportion")
            ->capture_default_str()
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_flag("--clip", avg.clip, "clamp obfuscations to [0,1]");
        cmd->add_option("--n", avg.n, "number of disclosed obfuscations")
            ->required()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--seed", avg.seed, "RNG seed")->required();
        cmd->add_option("in", avg.in, "reference dataset prefix")->required();
        cmd->add_option("--out", avg.out, "write the estimate to this prefix");
        cmd->callback([&] {
            const auto reference = load_pair(avg.in);
            std::vector<data::Dataset> disclosures;
            disclosures.reserve(std::size_t(avg.n));
            for (int i = 0; i < avg.n; ++i)
                disclosures.push_back(obfuscate::apply(
                    reference,
                    {avg.sigma, avg.r, avg.clip,
                     rng::derive_seed(avg.seed, "noise", std::uint64_t(i))}));
            const auto rec =
                obfuscate::reconstruct_by_averaging(disclosures, reference);
            if (!avg.out.empty()) save_pair(rec.estimate, avg.out);
            print_value(rec.mse);
        });
    }

    // ---- exp ------------------------------------------------------------
    auto* exp_cmd = app.add_subcommand("exp", "experiment harness");
    exp_cmd->require_subcommand(1);

    struct {
        std::string config, output;
    } exr;
    {
        auto* cmd = exp_cmd->add_subcommand("run", "run an experiment config");
        cmd->add_option("config", exr.config, "experiment config (JSON)")->required();
        cmd->add_option("--output", exr.output, "override the config's output path");
        cmd->callback([&] {
            auto config = harness::load_config(exr.config);
            if (!exr.output.empty()) config.output = exr.output;
            const auto table = harness::run(config);
            harness::emit(table, config.output);
            std::cerr << "wrote " << table.rows.size() << " rows to "
                      << config.output.string() << "\n";
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const obf::Error& e) {
        std::cerr << e.name() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
