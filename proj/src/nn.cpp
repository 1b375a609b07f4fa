#include "obf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "binio.hpp"
#include "obf/errors.hpp"
#include "weights_io.hpp"

namespace obf::nn {

namespace {

// ----------------------------------------------------------- geometry ----

struct ConvGeom {
    int oh = 0, ow = 0;
    int pad_top = 0, pad_left = 0;
};

ConvGeom conv_geometry(const Conv2D& c, const TensorShape& in) {
    ConvGeom g;
    if (c.same_padding) {
        g.oh = (in.height + c.stride - 1) / c.stride;
        g.ow = (in.width + c.stride - 1) / c.stride;
        const int pad_h = std::max(0, (g.oh - 1) * c.stride + c.kernel_h - in.height);
        const int pad_w = std::max(0, (g.ow - 1) * c.stride + c.kernel_w - in.width);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (in.height < c.kernel_h || in.width < c.kernel_w)
            throw ShapeError("conv kernel larger than its input");
        g.oh = (in.height - c.kernel_h) / c.stride + 1;
        g.ow = (in.width - c.kernel_w) / c.stride + 1;
    }
    return g;
}

// Tensor indices owned by each layer: {weight, bias} into weights.tensors,
// or {-1, -1} for parameterless layers.
std::vector<std::pair<int, int>> layer_param_index(const ModelArch& arch) {
    std::vector<std::pair<int, int>> idx(arch.layers.size(), {-1, -1});
    int next = 0;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        if (std::holds_alternative<Conv2D>(l) || std::holds_alternative<Dense>(l) ||
            std::holds_alternative<SoftmaxCrossEntropyHead>(l)) {
            idx[i] = {next, next + 1};
            next += 2;
        }
    }
    return idx;
}

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    long fan_in = 0;  // 0 for biases
};

std::vector<ParamSpec> param_specs(const ModelArch& arch) {
    const auto shapes = arch.shape_chain();
    std::vector<ParamSpec> specs;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const TensorShape in = i == 0 ? arch.input : shapes[i - 1];
        const std::string prefix = "L" + std::to_string(i);
        if (const auto* c = std::get_if<Conv2D>(&arch.layers[i])) {
            const long fan = long(in.channels) * c->kernel_h * c->kernel_w;
            specs.push_back({prefix + ".weight",
                             {c->out_channels, in.channels, c->kernel_h, c->kernel_w},
                             fan});
            specs.push_back({prefix + ".bias", {c->out_channels}, 0});
        } else if (const auto* d = std::get_if<Dense>(&arch.layers[i])) {
            const long fan = long(in.features());
            specs.push_back({prefix + ".weight", {d->out_features, int(fan)}, fan});
            specs.push_back({prefix + ".bias", {d->out_features}, 0});
        } else if (const auto* h = std::get_if<SoftmaxCrossEntropyHead>(&arch.layers[i])) {
            const long fan = long(in.features());
            specs.push_back({prefix + ".weight", {h->num_classes, int(fan)}, fan});
            specs.push_back({prefix + ".bias", {h->num_classes}, 0});
        }
    }
    return specs;
}

// ------------------------------------------------------------ kernels ----

void dense_forward(const double* x, const double* w, const double* b,
                   std::size_t batch, std::size_t in, std::size_t out,
                   double* y) {
    for (std::size_t s = 0; s < batch; ++s) {
        const double* xr = x + s * in;
        double* yr = y + s * out;
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* wr = w + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
}

void dense_backward(const double* x, const double* w, const double* dy,
                    std::size_t batch, std::size_t in, std::size_t out,
                    double* dw, double* db, double* dx) {
    for (std::size_t s = 0; s < batch; ++s) {
        const double* xr = x + s * in;
        const double* dyr = dy + s * out;
        double* dxr = dx ? dx + s * in : nullptr;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyr[o];
            db[o] += g;
            double* dwr = dw + o * in;
            const double* wr = w + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                dwr[i] += g * xr[i];
                if (dxr) dxr[i] += g * wr[i];
            }
        }
    }
}

void conv_forward(const Conv2D& c, const ConvGeom& g, const TensorShape& in,
                  const double* x, const double* w, const double* b,
                  std::size_t batch, double* y) {
    const int IC = in.channels, H = in.height, W = in.width;
    const int OC = c.out_channels, KH = c.kernel_h, KW = c.kernel_w;
    const std::size_t in_sz = std::size_t(IC) * H * W;
    const std::size_t out_sz = std::size_t(OC) * g.oh * g.ow;
    for (std::size_t s = 0; s < batch; ++s) {
        const double* xs = x + s * in_sz;
        double* ys = y + s * out_sz;
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < g.oh; ++oy)
                for (int ox = 0; ox < g.ow; ++ox) {
                    double acc = b[oc];
                    for (int ic = 0; ic < IC; ++ic)
                        for (int ky = 0; ky < KH; ++ky) {
                            const int iy = oy * c.stride - g.pad_top + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < KW; ++kx) {
                                const int ix = ox * c.stride - g.pad_left + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += w[((std::size_t(oc) * IC + ic) * KH + ky) * KW + kx] *
                                       xs[(std::size_t(ic) * H + iy) * W + ix];
                            }
                        }
                    ys[(std::size_t(oc) * g.oh + oy) * g.ow + ox] = acc;
                }
    }
}

void conv_backward(const Conv2D& c, const ConvGeom& g, const TensorShape& in,
                   const double* x, const double* w, const double* dy,
                   std::size_t batch, double* dw, double* db, double* dx) {
    const int IC = in.channels, H = in.height, W = in.width;
    const int OC = c.out_channels, KH = c.kernel_h, KW = c.kernel_w;
    const std::size_t in_sz = std::size_t(IC) * H * W;
    const std::size_t out_sz = std::size_t(OC) * g.oh * g.ow;
    for (std::size_t s = 0; s < batch; ++s) {
        const double* xs = x + s * in_sz;
        const double* dys = dy + s * out_sz;
        double* dxs = dx ? dx + s * in_sz : nullptr;
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < g.oh; ++oy)
                for (int ox = 0; ox < g.ow; ++ox) {
                    const double grad = dys[(std::size_t(oc) * g.oh + oy) * g.ow + ox];
                    db[oc] += grad;
                    for (int ic = 0; ic < IC; ++ic)
                        for (int ky = 0; ky < KH; ++ky) {
                            const int iy = oy * c.stride - g.pad_top + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < KW; ++kx) {
                                const int ix = ox * c.stride - g.pad_left + kx;
                                if (ix < 0 || ix >= W) continue;
                                const std::size_t wi =
                                    ((std::size_t(oc) * IC + ic) * KH + ky) * KW + kx;
                                const std::size_t xi = (std::size_t(ic) * H + iy) * W + ix;
                                dw[wi] += grad * xs[xi];
                                if (dxs) dxs[xi] += grad * w[wi];
                            }
                        }
                }
    }
}

void maxpool_forward(const MaxPool& p, const TensorShape& in, const double* x,
                     std::size_t batch, int oh, int ow, double* y,
                     std::size_t* src) {
    const int C = in.channels, H = in.height, W = in.width;
    const std::size_t in_sz = std::size_t(C) * H * W;
    const std::size_t out_sz = std::size_t(C) * oh * ow;
    for (std::size_t s = 0; s < batch; ++s) {
        const double* xs = x + s * in_sz;
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < p.window; ++ky)
                        for (int kx = 0; kx < p.window; ++kx) {
                            const int iy = oy * p.stride + ky;
                            const int ix = ox * p.stride + kx;
                            const std::size_t xi = (std::size_t(c) * H + iy) * W + ix;
                            if (xs[xi] > best) {  // ties keep the first scan hit
                                best = xs[xi];
                                best_idx = xi;
                            }
                        }
                    const std::size_t oi = (std::size_t(c) * oh + oy) * ow + ox;
                    y[s * out_sz + oi] = best;
                    src[s * out_sz + oi] = best_idx;
                }
    }
}

double product_of(const std::vector<int>& dims) {
    double p = 1;
    for (int d : dims) p *= d;
    return p;
}

}  // namespace

// --------------------------------------------------------------- arch ----

std::vector<TensorShape> ModelArch::shape_chain() const {
    if (input.flat) throw ShapeError("arch input must be spatial (C x H x W)");
    if (input.channels < 1 || input.height < 1 || input.width < 1)
        throw ShapeError("arch input dimensions must be positive");
    if (layers.empty()) throw ShapeError("arch has no layers");

    std::vector<TensorShape> shapes;
    TensorShape cur = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool is_head = std::holds_alternative<SoftmaxCrossEntropyHead>(layers[i]);
        if (is_head != (i + 1 == layers.size()))
            throw ShapeError("the classification head must be exactly the final layer");

        if (const auto* c = std::get_if<Conv2D>(&layers[i])) {
            if (cur.flat) throw ShapeError("conv layer after flatten");
            if (c->out_channels < 1 || c->kernel_h < 1 || c->kernel_w < 1 || c->stride < 1)
                throw ShapeError("conv layer parameters must be positive");
            const auto g = conv_geometry(*c, cur);
            cur = {c->out_channels, g.oh, g.ow, false};
        } else if (const auto* p = std::get_if<MaxPool>(&layers[i])) {
            if (cur.flat) throw ShapeError("max-pool layer after flatten");
            if (p->window < 1 || p->stride < 1)
                throw ShapeError("max-pool parameters must be positive");
            if (cur.height < p->window || cur.width < p->window)
                throw ShapeError("max-pool window larger than its input");
            cur = {cur.channels, (cur.height - p->window) / p->stride + 1,
                   (cur.width - p->window) / p->stride + 1, false};
        } else if (std::holds_alternative<ReLU>(layers[i])) {
            // shape unchanged
        } else if (std::holds_alternative<Flatten>(layers[i])) {
            if (cur.flat) throw ShapeError("flatten applied twice");
            cur = {1, 1, int(cur.features()), true};
        } else if (const auto* d = std::get_if<Dense>(&layers[i])) {
            if (!cur.flat) throw ShapeError("dense layer requires flattened input");
            if (d->out_features < 1) throw ShapeError("dense out_features must be positive");
            if (d->in_features != 0 && std::size_t(d->in_features) != cur.features())
                throw ShapeError("dense layer expects " + std::to_string(d->in_features) +
                                 " inputs but receives " + std::to_string(cur.features()));
            cur = {1, 1, d->out_features, true};
        } else if (const auto* h = std::get_if<SoftmaxCrossEntropyHead>(&layers[i])) {
            if (!cur.flat) throw ShapeError("classification head requires flattened input");
            if (h->num_classes < 2) throw ShapeError("head needs at least 2 classes");
            cur = {1, 1, h->num_classes, true};
        }
        shapes.push_back(cur);
    }
    return shapes;
}

int ModelArch::num_classes() const {
    if (layers.empty()) throw ShapeError("arch has no layers");
    const auto* h = std::get_if<SoftmaxCrossEntropyHead>(&layers.back());
    if (!h) throw ShapeError("final layer is not the classification head");
    return h->num_classes;
}

rng::Digest ModelArch::fingerprint() const {
    binio::Writer w;
    w.bytes("ARCH", 4);
    w.u32(1);
    w.u32(std::uint32_t(input.channels));
    w.u32(std::uint32_t(input.height));
    w.u32(std::uint32_t(input.width));
    w.u64(layers.size());
    for (const auto& l : layers) {
        if (const auto* c = std::get_if<Conv2D>(&l)) {
            w.u8(0);
            w.u32(std::uint32_t(c->out_channels));
            w.u32(std::uint32_t(c->kernel_h));
            w.u32(std::uint32_t(c->kernel_w));
            w.u32(std::uint32_t(c->stride));
            w.u8(c->same_padding ? 1 : 0);
        } else if (const auto* p = std::get_if<MaxPool>(&l)) {
            w.u8(1);
            w.u32(std::uint32_t(p->window));
            w.u32(std::uint32_t(p->stride));
        } else if (std::holds_alternative<ReLU>(l)) {
            w.u8(2);
        } else if (std::holds_alternative<Flatten>(l)) {
            w.u8(3);
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            w.u8(4);
            w.u32(std::uint32_t(d->out_features));
            w.u32(std::uint32_t(d->in_features));
        } else if (const auto* h = std::get_if<SoftmaxCrossEntropyHead>(&l)) {
            w.u8(5);
            w.u32(std::uint32_t(h->num_classes));
        }
    }
    return rng::digest(w.buf);
}

ModelArch make_arch(const std::string& preset, const TensorShape& input,
                    int num_classes) {
    ModelArch arch;
    arch.input = input;
    if (preset == "desk-mlp") {
        arch.layers = {Flatten{}, Dense{128}, ReLU{}, Dense{64}, ReLU{},
                       SoftmaxCrossEntropyHead{num_classes}};
    } else if (preset == "desk-cnn") {
        arch.layers = {Conv2D{8, 3, 3, 1, true},  ReLU{},
                       Conv2D{16, 3, 3, 1, true}, ReLU{},
                       MaxPool{2, 2},             Flatten{},
                       SoftmaxCrossEntropyHead{num_classes}};
    } else if (preset == "paper-cnn") {
        arch.layers = {Conv2D{32, 3, 3, 1, true},  ReLU{},
                       Conv2D{32, 3, 3, 1, true},  ReLU{},
                       MaxPool{2, 2},
                       Conv2D{64, 3, 3, 1, true},  ReLU{},
                       Conv2D{64, 3, 3, 1, true},  ReLU{},
                       MaxPool{2, 2},
                       Conv2D{128, 3, 3, 1, true}, ReLU{},
                       Conv2D{128, 3, 3, 1, true}, ReLU{},
                       MaxPool{2, 2},              Flatten{},
                       SoftmaxCrossEntropyHead{num_classes}};
    } else {
        throw ConfigError("unknown model preset \"" + preset + "\"");
    }
    arch.shape_chain();  // validate eagerly
    return arch;
}

// ------------------------------------------------------------ weights ----

ModelWeights init_model(const ModelArch& arch, rng::RngStream& stream) {
    const auto specs = param_specs(arch);
    ModelWeights w;
    w.arch_fingerprint = arch.fingerprint();
    w.tensors.reserve(specs.size());
    for (const auto& spec : specs) {
        Tensor t;
        t.name = spec.name;
        t.shape = spec.shape;
        t.values.assign(std::size_t(product_of(spec.shape)), 0.0);
        if (spec.fan_in > 0) {
            const double bound = std::sqrt(6.0 / double(spec.fan_in));
            for (double& v : t.values) v = bound * (2.0 * stream.uniform() - 1.0);
        }
        w.tensors.push_back(std::move(t));
    }
    return w;
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w) {
    binio::Writer wr;
    wr.bytes("OBFW", 4);
    wr.u32(1);
    nn_io::write_weights_block(wr, w);
    binio::write_file(path, wr.buf);
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
    const auto buf = binio::read_file(path);
    binio::Reader rd(buf);
    char magic[4];
    rd.bytes(magic, 4);
    if (std::memcmp(magic, "OBFW", 4) != 0)
        throw WrongMagic("not a weight checkpoint file: " + path.string());
    const auto version = rd.u32();
    if (version != 1)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    return nn_io::read_weights_block(rd);
}

// ------------------------------------------------------------ training ----

void TrainConfig::validate() const {
    if (epochs < 0) throw RangeError("train config: epochs must be >= 0");
    if (batch_size < 1) throw RangeError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw RangeError("train config: learning_rate must be > 0");
    if (checkpoint_every < 0) throw RangeError("train config: checkpoint_every must be >= 0");
    if (const auto* a = std::get_if<Adam>(&optimizer)) {
        if (!(a->beta1 >= 0.0 && a->beta1 < 1.0 && a->beta2 >= 0.0 && a->beta2 < 1.0))
            throw RangeError("train config: Adam betas must lie in [0, 1)");
        if (!(a->eps > 0.0)) throw RangeError("train config: Adam epsilon must be > 0");
    }
}

long steps_per_epoch(std::size_t n, int batch_size) {
    return long((n + std::size_t(batch_size) - 1) / std::size_t(batch_size));
}

std::vector<std::size_t> shuffle_order(std::uint64_t seed, long epoch,
                                       std::size_t n) {
    auto stream = rng::derive_stream(seed, "shuffle", std::uint64_t(epoch));
    return rng::permutation(stream, n);
}

LossAndGrads loss_and_grads(const ModelArch& arch, const ModelWeights& weights,
                            const data::Dataset& data,
                            const std::vector<std::size_t>& batch) {
    const auto shapes = arch.shape_chain();
    if (batch.empty()) throw ShapeError("loss_and_grads: batch is empty");
    if (data.dim() != arch.input.features())
        throw ShapeError("feature dimension " + std::to_string(data.dim()) +
                         " does not match arch input " +
                         std::to_string(arch.input.features()));
    const auto param_idx = layer_param_index(arch);
    const std::size_t B = batch.size();
    const std::size_t L = arch.layers.size();
    const int C = arch.num_classes();

    // Gather the batch.
    const std::size_t in_dim = data.dim();
    std::vector<double> x0(B * in_dim);
    std::vector<int> labels(B);
    for (std::size_t s = 0; s < B; ++s) {
        const auto row = data.row(batch[s]);
        std::copy(row.begin(), row.end(), x0.begin() + s * in_dim);
        labels[s] = data.labels[batch[s]];
        if (labels[s] < 0 || labels[s] >= C)
            throw LabelOutOfRange("label " + std::to_string(labels[s]) +
                                  " outside [0, " + std::to_string(C) + ")");
    }

    // Forward.
    std::vector<std::vector<double>> acts(L);
    std::vector<std::vector<std::size_t>> pool_src(L);
    for (std::size_t i = 0; i < L; ++i) {
        const TensorShape in_shape = i == 0 ? arch.input : shapes[i - 1];
        const double* x = i == 0 ? x0.data() : acts[i - 1].data();
        acts[i].assign(B * shapes[i].features(), 0.0);
        if (const auto* c = std::get_if<Conv2D>(&arch.layers[i])) {
            const auto g = conv_geometry(*c, in_shape);
            const auto& wt = weights.tensors[std::size_t(param_idx[i].first)];
            const auto& bt = weights.tensors[std::size_t(param_idx[i].second)];
            conv_forward(*c, g, in_shape, x, wt.values.data(), bt.values.data(), B,
                         acts[i].data());
        } else if (const auto* p = std::get_if<MaxPool>(&arch.layers[i])) {
            pool_src[i].assign(B * shapes[i].features(), 0);
            maxpool_forward(*p, in_shape, x, B, shapes[i].height, shapes[i].width,
                            acts[i].data(), pool_src[i].data());
        } else if (std::holds_alternative<ReLU>(arch.layers[i])) {
            for (std::size_t j = 0; j < acts[i].size(); ++j)
                acts[i][j] = x[j] > 0.0 ? x[j] : 0.0;
        } else if (std::holds_alternative<Flatten>(arch.layers[i])) {
            std::copy(x, x + acts[i].size(), acts[i].begin());
        } else if (std::holds_alternative<Dense>(arch.layers[i]) ||
                   std::holds_alternative<SoftmaxCrossEntropyHead>(arch.layers[i])) {
            const auto& wt = weights.tensors[std::size_t(param_idx[i].first)];
            const auto& bt = weights.tensors[std::size_t(param_idx[i].second)];
            dense_forward(x, wt.values.data(), bt.values.data(), B,
                          in_shape.features(), shapes[i].features(), acts[i].data());
        }
    }

    // Softmax cross-entropy on the head logits.
    const std::vector<double>& logits = acts[L - 1];
    LossAndGrads out;
    std::vector<double> dcur(B * std::size_t(C));
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < B; ++s) {
        const double* z = logits.data() + s * std::size_t(C);
        double zmax = z[0];
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += std::exp(z[c] - zmax);
        const double log_denom = std::log(denom);
        loss_sum += -(z[labels[s]] - zmax - log_denom);
        for (int c = 0; c < C; ++c) {
            const double p = std::exp(z[c] - zmax) / denom;
            dcur[s * std::size_t(C) + std::size_t(c)] =
                (p - (c == labels[s] ? 1.0 : 0.0)) / double(B);
        }
    }
    out.loss = loss_sum / double(B);

    // Gradient tensors, zero-initialized in weight order.
    out.grads.reserve(weights.tensors.size());
    for (const auto& t : weights.tensors) {
        Tensor g;
        g.name = t.name;
        g.shape = t.shape;
        g.values.assign(t.values.size(), 0.0);
        out.grads.push_back(std::move(g));
    }

    // Backward.
    for (std::size_t ii = L; ii-- > 0;) {
        const TensorShape in_shape = ii == 0 ? arch.input : shapes[ii - 1];
        const double* x = ii == 0 ? x0.data() : acts[ii - 1].data();
        const bool want_dx = ii > 0;
        std::vector<double> din;
        if (want_dx) din.assign(B * in_shape.features(), 0.0);

        if (const auto* c = std::get_if<Conv2D>(&arch.layers[ii])) {
            const auto g = conv_geometry(*c, in_shape);
            const auto& wt = weights.tensors[std::size_t(param_idx[ii].first)];
            conv_backward(*c, g, in_shape, x, wt.values.data(), dcur.data(), B,
                          out.grads[std::size_t(param_idx[ii].first)].values.data(),
                          out.grads[std::size_t(param_idx[ii].second)].values.data(),
                          want_dx ? din.data() : nullptr);
        } else if (std::holds_alternative<MaxPool>(arch.layers[ii])) {
            if (want_dx) {
                const std::size_t out_sz = shapes[ii].features();
                const std::size_t in_sz = in_shape.features();
                for (std::size_t s = 0; s < B; ++s)
                    for (std::size_t j = 0; j < out_sz; ++j)
                        din[s * in_sz + pool_src[ii][s * out_sz + j]] +=
                            dcur[s * out_sz + j];
            }
        } else if (std::holds_alternative<ReLU>(arch.layers[ii])) {
            if (want_dx)
                for (std::size_t j = 0; j < din.size(); ++j)
                    din[j] = x[j] > 0.0 ? dcur[j] : 0.0;
        } else if (std::holds_alternative<Flatten>(arch.layers[ii])) {
            if (want_dx) std::copy(dcur.begin(), dcur.end(), din.begin());
        } else {  // Dense or head
            const auto& wt = weights.tensors[std::size_t(param_idx[ii].first)];
            dense_backward(x, wt.values.data(), dcur.data(), B, in_shape.features(),
                           shapes[ii].features(),
                           out.grads[std::size_t(param_idx[ii].first)].values.data(),
                           out.grads[std::size_t(param_idx[ii].second)].values.data(),
                           want_dx ? din.data() : nullptr);
        }
        dcur = std::move(din);
    }
    return out;
}

namespace {

void optimizer_update(TrainState& state, const TrainConfig& config,
                      const std::vector<Tensor>& grads) {
    auto& w = state.weights.tensors;
    if (std::holds_alternative<Sgd>(config.optimizer)) {
        for (std::size_t k = 0; k < w.size(); ++k)
            for (std::size_t j = 0; j < w[k].values.size(); ++j)
                w[k].values[j] -= config.learning_rate * grads[k].values[j];
        return;
    }
    const auto& a = std::get<Adam>(config.optimizer);
    auto& opt = state.opt;
    if (opt.m.size() != w.size()) {
        opt.m.resize(w.size());
        opt.v.resize(w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            opt.m[k].assign(w[k].values.size(), 0.0);
            opt.v[k].assign(w[k].values.size(), 0.0);
        }
    }
    opt.t += 1;
    const double bc1 = 1.0 - std::pow(a.beta1, double(opt.t));
    const double bc2 = 1.0 - std::pow(a.beta2, double(opt.t));
    for (std::size_t k = 0; k < w.size(); ++k) {
        double* wv = w[k].values.data();
        const double* gv = grads[k].values.data();
        double* mv = opt.m[k].data();
        double* vv = opt.v[k].data();
        for (std::size_t j = 0; j < w[k].values.size(); ++j) {
            mv[j] = a.beta1 * mv[j] + (1.0 - a.beta1) * gv[j];
            vv[j] = a.beta2 * vv[j] + (1.0 - a.beta2) * gv[j] * gv[j];
            const double mhat = mv[j] / bc1;
            const double vhat = vv[j] / bc2;
            wv[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + a.eps);
        }
    }
}

}  // namespace

void apply_steps(TrainState& state, const ModelArch& arch,
                 const data::Dataset& train_set, const TrainConfig& config,
                 long step_begin, long step_end, std::vector<double>* loss_log) {
    config.validate();
    if (train_set.size() == 0) throw EmptyDataset("apply_steps: training set is empty");
    if (train_set.dim() != arch.input.features())
        throw ShapeError("training set dimension does not match arch input");
    if (state.weights.arch_fingerprint != arch.fingerprint())
        throw ArchMismatch("weights were built for a different arch");
    if (step_begin < 0 || step_begin > step_end)
        throw RangeError("apply_steps: bad step range");

    const std::size_t n = train_set.size();
    const long spe = steps_per_epoch(n, config.batch_size);
    long cached_epoch = -1;
    std::vector<std::size_t> order;
    std::vector<std::size_t> batch;
    for (long s = step_begin; s < step_end; ++s) {
        const long epoch = s / spe;
        if (epoch != cached_epoch) {
            order = shuffle_order(config.seed, epoch, n);
            cached_epoch = epoch;
        }
        const std::size_t lo = std::size_t(s % spe) * std::size_t(config.batch_size);
        const std::size_t hi = std::min(n, lo + std::size_t(config.batch_size));
        batch.assign(order.begin() + long(lo), order.begin() + long(hi));
        const auto lg = loss_and_grads(arch, state.weights, train_set, batch);
        if (!std::isfinite(lg.loss))
            throw NonFiniteLoss(s, "training loss is not finite");
        if (loss_log) loss_log->push_back(lg.loss);
        optimizer_update(state, config, lg.grads);
        state.step = s + 1;
    }
}

TrainResult train(const ModelArch& arch, const ModelWeights& init,
                  const data::Dataset& train_set, const TrainConfig& config,
                  const data::Dataset* eval_set) {
    config.validate();
    if (train_set.size() == 0) throw EmptyDataset("train: training set is empty");
    if (eval_set && eval_set->dim() != arch.input.features())
        throw ShapeError("eval set dimension does not match arch input");

    TrainState st{init, {}, 0};
    const std::size_t n = train_set.size();
    const long spe = steps_per_epoch(n, config.batch_size);
    const long k = config.checkpoint_every;
    const long total = long(config.epochs) * spe;

    TrainResult result;
    auto capture = [&](long s) {
        result.trace.step_checkpoints.push_back({s, st.weights, st.opt});
    };
    if (k > 0) capture(0);

    for (int e = 0; e < config.epochs; ++e) {
        std::vector<double> losses;
        long s = long(e) * spe;
        const long epoch_end = long(e + 1) * spe;
        while (s < epoch_end) {
            long next = epoch_end;
            if (k > 0) next = std::min(epoch_end, (s / k + 1) * k);
            apply_steps(st, arch, train_set, config, s, next, &losses);
            s = next;
            if (k > 0 && s % k == 0) capture(s);
        }
        EpochRecord rec;
        rec.epoch = e;
        double sum = 0.0;
        for (double l : losses) sum += l;
        rec.train_loss = losses.empty() ? 0.0 : sum / double(losses.size());
        if (eval_set) rec.test_accuracy = evaluate(arch, st.weights, *eval_set);
        rec.weights = st.weights;
        result.trace.epochs.push_back(std::move(rec));
    }
    if (k > 0 && total % k != 0) capture(total);

    for (const auto& t : st.weights.tensors)
        for (double v : t.values)
            if (!std::isfinite(v))
                throw NonFiniteLoss(st.step, "non-finite weight after training");

    result.final = std::move(st.weights);
    return result;
}

std::vector<double> forward_logits(const ModelArch& arch,
                                   const ModelWeights& weights,
                                   const data::Dataset& data,
                                   const std::vector<std::size_t>& batch) {
    const auto shapes = arch.shape_chain();
    if (data.dim() != arch.input.features())
        throw ShapeError("feature dimension does not match arch input");
    if (weights.arch_fingerprint != arch.fingerprint())
        throw ArchMismatch("weights were built for a different arch");
    const auto param_idx = layer_param_index(arch);
    const std::size_t B = batch.size();
    const std::size_t L = arch.layers.size();

    const std::size_t in_dim = data.dim();
    std::vector<double> cur(B * in_dim);
    for (std::size_t s = 0; s < B; ++s) {
        const auto row = data.row(batch[s]);
        std::copy(row.begin(), row.end(), cur.begin() + s * in_dim);
    }

    for (std::size_t i = 0; i < L; ++i) {
        const TensorShape in_shape = i == 0 ? arch.input : shapes[i - 1];
        std::vector<double> next(B * shapes[i].features(), 0.0);
        if (const auto* c = std::get_if<Conv2D>(&arch.layers[i])) {
            const auto g = conv_geometry(*c, in_shape);
            const auto& wt = weights.tensors[std::size_t(param_idx[i].first)];
            const auto& bt = weights.tensors[std::size_t(param_idx[i].second)];
            conv_forward(*c, g, in_shape, cur.data(), wt.values.data(),
                         bt.values.data(), B, next.data());
        } else if (const auto* p = std::get_if<MaxPool>(&arch.layers[i])) {
            std::vector<std::size_t> src(B * shapes[i].features());
            maxpool_forward(*p, in_shape, cur.data(), B, shapes[i].height,
                            shapes[i].width, next.data(), src.data());
        } else if (std::holds_alternative<ReLU>(arch.layers[i])) {
            for (std::size_t j = 0; j < next.size(); ++j)
                next[j] = cur[j] > 0.0 ? cur[j] : 0.0;
        } else if (std::holds_alternative<Flatten>(arch.layers[i])) {
            next = cur;
        } else {
            const auto& wt = weights.tensors[std::size_t(param_idx[i].first)];
            const auto& bt = weights.tensors[std::size_t(param_idx[i].second)];
            dense_forward(cur.data(), wt.values.data(), bt.values.data(), B,
                          in_shape.features(), shapes[i].features(), next.data());
        }
        cur = std::move(next);
    }
    return cur;
}

double evaluate(const ModelArch& arch, const ModelWeights& weights,
                const data::Dataset& test_set) {
    if (test_set.size() == 0) throw EmptyDataset("evaluate: test set is empty");
    const int C = arch.num_classes();
    const std::size_t n = test_set.size();
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    std::vector<std::size_t> batch;
    for (std::size_t lo = 0; lo < n; lo += kChunk) {
        const std::size_t hi = std::min(n, lo + kChunk);
        batch.resize(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) batch[i - lo] = i;
        const auto logits = forward_logits(arch, weights, test_set, batch);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const double* z = logits.data() + s * std::size_t(C);
            int best = 0;
            for (int c = 1; c < C; ++c)
                if (z[c] > z[best]) best = c;  // ties keep the lowest index
            if (best == test_set.labels[lo + s]) ++correct;
        }
    }
    return double(correct) / double(n);
}

}  // namespace obf::nn
