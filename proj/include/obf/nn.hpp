#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "obf/dataset.hpp"
#include "obf/rng.hpp"

namespace obf::nn {

// ---------------------------------------------------------------- arch ----

struct Conv2D {
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    bool same_padding = true;
};
struct MaxPool {
    int window = 2;
    int stride = 2;
};
struct ReLU {};
struct Flatten {};
struct Dense {
    int out_features = 1;
    int in_features = 0;  // 0 = inferred from the previous layer
};
struct SoftmaxCrossEntropyHead {
    int num_classes = 2;
};
using LayerDesc = std::variant<Conv2D, MaxPool, ReLU, Flatten, Dense,
                               SoftmaxCrossEntropyHead>;

// Activation shape flowing between layers: spatial C x H x W until a
// Flatten, a bare feature count afterwards.
struct TensorShape {
    int channels = 1;
    int height = 1;
    int width = 1;
    bool flat = false;
    std::size_t features() const {
        return std::size_t(channels) * std::size_t(height) * std::size_t(width);
    }
    bool operator==(const TensorShape&) const = default;
};

struct ModelArch {
    TensorShape input;                // must be spatial (flat=false)
    std::vector<LayerDesc> layers;    // last must be the classification head

    // Per-layer output shapes (element i = output of layers[i]); validates
    // chaining and the head position.  Throws ShapeError.
    std::vector<TensorShape> shape_chain() const;
    int num_classes() const;          // from the head descriptor
    rng::Digest fingerprint() const;  // digest of a canonical serialization
};

// Presets: "desk-mlp", "desk-cnn", "paper-cnn".  Throws ConfigError on an
// unknown name.
ModelArch make_arch(const std::string& preset, const TensorShape& input,
                    int num_classes);

// ------------------------------------------------------------- weights ----

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
    std::size_t size() const { return values.size(); }
};

struct ModelWeights {
    std::vector<Tensor> tensors;
    rng::Digest arch_fingerprint{};
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, drawn from
// the given stream in tensor order.
ModelWeights init_model(const ModelArch& arch, rng::RngStream& stream);

// Checkpoint container: versioned binary, bit-exact round-trip.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w);
ModelWeights load_checkpoint(const std::filesystem::path& path);

// ------------------------------------------------------------ training ----

struct Sgd {};
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};
using Optimizer = std::variant<Sgd, Adam>;

struct TrainConfig {
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 32;
    Optimizer optimizer = Adam{};
    std::uint64_t seed = 0;
    long checkpoint_every = 0;  // steps; 0 = epoch records only

    void validate() const;  // throws RangeError
};

// Optimizer state carried across steps (and through replay checkpoints).
struct OptState {
    std::vector<std::vector<double>> m;  // Adam first moments, per tensor
    std::vector<std::vector<double>> v;  // Adam second moments, per tensor
    long t = 0;                          // completed Adam steps
};

struct TrainState {
    ModelWeights weights;
    OptState opt;
    long step = 0;  // completed optimizer steps since training began
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;  // mean of the epoch's batch losses
    std::optional<double> test_accuracy;
    ModelWeights weights;     // snapshot at epoch end
};

struct StepCheckpoint {
    long step = 0;
    ModelWeights weights;
    OptState opt;
};

struct EpochTrace {
    std::vector<EpochRecord> epochs;
    std::vector<StepCheckpoint> step_checkpoints;  // cadence = checkpoint_every
};

// Number of optimizer steps in one epoch: ceil(n / batch_size); the final
// partial batch is trained, not dropped.
long steps_per_epoch(std::size_t n, int batch_size);

// The epoch's batch order: a permutation of [0, n) from the "shuffle"-tagged
// stream derived from (seed, epoch).
std::vector<std::size_t> shuffle_order(std::uint64_t seed, long epoch,
                                       std::size_t n);

// Mean softmax cross-entropy over the batch plus exact analytic gradients,
// evaluated in 64-bit arithmetic with a fixed summation order.  `batch`
// indexes rows of `data`.
struct LossAndGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  // same order/shape as weights.tensors
};
LossAndGrads loss_and_grads(const ModelArch& arch, const ModelWeights& weights,
                            const data::Dataset& data,
                            const std::vector<std::size_t>& batch);

// Advance the optimizer from global step `step_begin` to `step_end`,
// re-deriving each epoch's batch schedule from config.seed.  This single
// driver backs both train() and verification replay, so replays are
// bit-identical.  Appends each step's batch loss to `loss_log` if given.
// Throws NonFiniteLoss on divergence.
void apply_steps(TrainState& state, const ModelArch& arch,
                 const data::Dataset& train_set, const TrainConfig& config,
                 long step_begin, long step_end,
                 std::vector<double>* loss_log = nullptr);

struct TrainResult {
    ModelWeights final;
    EpochTrace trace;
};

// Full training run from `init`.  Per epoch: shuffle, iterate batches
// (partial final batch included), update; record loss/accuracy/weights.
// Step checkpoints captured at the configured cadence (always including step
// 0 and the final step).
TrainResult train(const ModelArch& arch, const ModelWeights& init,
                  const data::Dataset& train_set, const TrainConfig& config,
                  const data::Dataset* eval_set = nullptr);

// Forward pass to logits, batch-row major [n x num_classes].
std::vector<double> forward_logits(const ModelArch& arch,
                                   const ModelWeights& weights,
                                   const data::Dataset& data,
                                   const std::vector<std::size_t>& batch);

// Fraction of samples whose argmax logit equals the label; ties break toward
// the lowest class index.
double evaluate(const ModelArch& arch, const ModelWeights& weights,
                const data::Dataset& test_set);

}  // namespace obf::nn
