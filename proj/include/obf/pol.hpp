#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "obf/dataset.hpp"
#include "obf/nn.hpp"
#include "obf/rng.hpp"

namespace obf::pol {

// Prover-shared artifacts: a commitment to the (possibly obfuscated)
// training set plus periodic training checkpoints.  Checkpoints carry the
// optimizer state so a verifier can resume mid-run bit-exactly.
struct PoLTranscript {
    rng::Digest dataset_commitment{};
    rng::Digest arch_fingerprint{};
    nn::TrainConfig config;            // includes the training seed
    long checkpoint_interval = 1;      // k, in optimizer steps
    std::uint64_t dataset_size = 0;    // n, pins the batch schedule
    std::vector<nn::StepCheckpoint> checkpoints;  // step 0 first
};

struct ProveResult {
    nn::ModelWeights final;
    PoLTranscript transcript;
};

// Trains with checkpoint cadence k and assembles the transcript.  The
// commitment is the digest of the dataset's canonical serialization.
ProveResult prove(const nn::ModelArch& arch, const nn::ModelWeights& init,
                  const data::Dataset& dataset, const nn::TrainConfig& config,
                  long k);

struct SegmentResult {
    long segment = 0;  // replay from checkpoint[segment] to [segment+1]
    double d = 0.0;    // fnorm(replayed, checkpoint[segment+1])
};

struct Verdict {
    bool accepted = false;
    std::vector<SegmentResult> segments;
};

// Recomputes the dataset digest (throws CommitmentMismatch before any replay
// on disagreement), then replays each requested segment (empty list = all)
// re-deriving the batch schedule from the transcript's seed, and accepts iff
// max segment D <= threshold.
Verdict verify(const nn::ModelArch& arch, const PoLTranscript& transcript,
               const data::Dataset& dataset, const std::vector<long>& segments,
               double threshold);

// Replays segments against a different dataset with the commitment check
// deliberately bypassed — the malicious-prover trial measuring whether
// stolen checkpoints pass against a spoofed training set.
Verdict spoof_trial(const nn::ModelArch& arch, const PoLTranscript& transcript,
                    const data::Dataset& spoof_dataset, double threshold);

// Versioned binary container, bit-exact round-trip.
void save_transcript(const std::filesystem::path& path, const PoLTranscript& t);
PoLTranscript load_transcript(const std::filesystem::path& path);

}  // namespace obf::pol
