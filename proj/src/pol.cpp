#include "obf/pol.hpp"

#include <algorithm>
#include <cstring>

#include "binio.hpp"
#include "obf/errors.hpp"
#include "obf/metrics.hpp"
#include "weights_io.hpp"

namespace obf::pol {

ProveResult prove(const nn::ModelArch& arch, const nn::ModelWeights& init,
                  const data::Dataset& dataset, const nn::TrainConfig& config,
                  long k) {
    if (k < 1) throw RangeError("prove: checkpoint interval k must be >= 1");
    nn::TrainConfig cfg = config;
    cfg.checkpoint_every = k;
    auto result = nn::train(arch, init, dataset, cfg);

    ProveResult out;
    out.final = std::move(result.final);
    out.transcript.dataset_commitment = dataset.content_digest();
    out.transcript.arch_fingerprint = arch.fingerprint();
    out.transcript.config = cfg;
    out.transcript.checkpoint_interval = k;
    out.transcript.dataset_size = dataset.size();
    out.transcript.checkpoints = std::move(result.trace.step_checkpoints);
    return out;
}

namespace {

Verdict replay_segments(const nn::ModelArch& arch, const PoLTranscript& t,
                        const data::Dataset& dataset,
                        const std::vector<long>& segments, double threshold) {
    if (t.checkpoints.size() < 2)
        throw SegmentOutOfRange("transcript has no replayable segment");
    std::vector<long> todo = segments;
    if (todo.empty()) {
        todo.resize(t.checkpoints.size() - 1);
        for (std::size_t i = 0; i < todo.size(); ++i) todo[i] = long(i);
    }

    Verdict verdict;
    verdict.accepted = true;
    for (long seg : todo) {
        if (seg < 0 || std::size_t(seg) + 1 >= t.checkpoints.size())
            throw SegmentOutOfRange("segment " + std::to_string(seg) +
                                    " outside [0, " +
                                    std::to_string(t.checkpoints.size() - 1) + ")");
        const auto& from = t.checkpoints[std::size_t(seg)];
        const auto& to = t.checkpoints[std::size_t(seg) + 1];
        nn::TrainState state{from.weights, from.opt, from.step};
        nn::apply_steps(state, arch, dataset, t.config, from.step, to.step);
        const double d = metrics::fnorm(state.weights, to.weights);
        verdict.segments.push_back({seg, d});
        if (d > threshold) verdict.accepted = false;
    }
    return verdict;
}

}  // namespace

Verdict verify(const nn::ModelArch& arch, const PoLTranscript& transcript,
               const data::Dataset& dataset, const std::vector<long>& segments,
               double threshold) {
    if (arch.fingerprint() != transcript.arch_fingerprint)
        throw ArchMismatch("verify: arch does not match the transcript fingerprint");
    if (dataset.content_digest() != transcript.dataset_commitment)
        throw CommitmentMismatch("presented dataset digest differs from the transcript commitment");
    return replay_segments(arch, transcript, dataset, segments, threshold);
}

Verdict spoof_trial(const nn::ModelArch& arch, const PoLTranscript& transcript,
                    const data::Dataset& spoof_dataset, double threshold) {
    if (arch.fingerprint() != transcript.arch_fingerprint)
        throw ArchMismatch("spoof_trial: arch does not match the transcript fingerprint");
    if (spoof_dataset.dim() != arch.input.features())
        throw ShapeError("spoof dataset dimension does not match the transcript's arch");
    // Commitment deliberately unchecked: the malicious prover commits to the
    // spoof set and presents stolen checkpoints.
    return replay_segments(arch, transcript, spoof_dataset, {}, threshold);
}

namespace {

void write_opt_state(binio::Writer& wr, const nn::OptState& opt) {
    wr.i64(opt.t);
    wr.u64(opt.m.size());
    for (std::size_t k = 0; k < opt.m.size(); ++k) {
        wr.u64(opt.m[k].size());
        for (double v : opt.m[k]) wr.f64(v);
        for (double v : opt.v[k]) wr.f64(v);
    }
}

nn::OptState read_opt_state(binio::Reader& rd) {
    nn::OptState opt;
    opt.t = rd.i64();
    const auto tensors = rd.u64();
    opt.m.resize(tensors);
    opt.v.resize(tensors);
    for (std::size_t k = 0; k < tensors; ++k) {
        const auto count = rd.u64();
        opt.m[k].resize(count);
        opt.v[k].resize(count);
        for (auto& v : opt.m[k]) v = rd.f64();
        for (auto& v : opt.v[k]) v = rd.f64();
    }
    return opt;
}

}  // namespace

void save_transcript(const std::filesystem::path& path, const PoLTranscript& t) {
    binio::Writer wr;
    wr.bytes("OBFP", 4);
    wr.u32(1);
    wr.bytes(t.dataset_commitment.data(), t.dataset_commitment.size());
    wr.bytes(t.arch_fingerprint.data(), t.arch_fingerprint.size());
    wr.i64(t.config.epochs);
    wr.f64(t.config.learning_rate);
    wr.i64(t.config.batch_size);
    if (const auto* a = std::get_if<nn::Adam>(&t.config.optimizer)) {
        wr.u8(1);
        wr.f64(a->beta1);
        wr.f64(a->beta2);
        wr.f64(a->eps);
    } else {
        wr.u8(0);
    }
    wr.u64(t.config.seed);
    wr.i64(t.config.checkpoint_every);
    wr.i64(t.checkpoint_interval);
    wr.u64(t.dataset_size);
    wr.u64(t.checkpoints.size());
    for (const auto& c : t.checkpoints) {
        wr.i64(c.step);
        nn_io::write_weights_block(wr, c.weights);
        write_opt_state(wr, c.opt);
    }
    binio::write_file(path, wr.buf);
}

PoLTranscript load_transcript(const std::filesystem::path& path) {
    const auto buf = binio::read_file(path);
    binio::Reader rd(buf);
    char magic[4];
    rd.bytes(magic, 4);
    if (std::memcmp(magic, "OBFP", 4) != 0)
        throw WrongMagic("not a transcript file: " + path.string());
    const auto version = rd.u32();
    if (version != 1)
        throw IoError("unsupported transcript version " + std::to_string(version));

    PoLTranscript t;
    rd.bytes(t.dataset_commitment.data(), t.dataset_commitment.size());
    rd.bytes(t.arch_fingerprint.data(), t.arch_fingerprint.size());
    t.config.epochs = int(rd.i64());
    t.config.learning_rate = rd.f64();
    t.config.batch_size = int(rd.i64());
    if (rd.u8() == 1) {
        nn::Adam a;
        a.beta1 = rd.f64();
        a.beta2 = rd.f64();
        a.eps = rd.f64();
        t.config.optimizer = a;
    } else {
        t.config.optimizer = nn::Sgd{};
    }
    t.config.seed = rd.u64();
    t.config.checkpoint_every = rd.i64();
    t.checkpoint_interval = rd.i64();
    t.dataset_size = rd.u64();
    t.checkpoints.resize(rd.u64());
    for (auto& c : t.checkpoints) {
        c.step = rd.i64();
        c.weights = nn_io::read_weights_block(rd);
        c.opt = read_opt_state(rd);
    }
    return t;
}

}  // namespace obf::pol
