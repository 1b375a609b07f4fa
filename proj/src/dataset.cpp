#include "obf/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "obf/errors.hpp"

namespace obf::data {

namespace {

constexpr std::uint8_t kTypeUByte = 0x08;
constexpr std::uint8_t kTypeFloat32 = 0x0D;
constexpr std::uint8_t kTypeFloat64 = 0x0E;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

void append_be64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out.push_back(std::uint8_t(v >> s));
}

std::uint64_t read_be64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::int32_t> load_idx_labels(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 8) throw TruncatedFile("label file too short: " + path.string());
    const std::uint32_t magic = read_be32(bytes.data());
    if (magic != 0x00000801u) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw WrongMagic("label file magic " + std::string(buf));
    }
    const std::size_t n = read_be32(bytes.data() + 4);
    if (bytes.size() < 8 + n)
        throw TruncatedFile("label payload shorter than header promises");
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
    return labels;
}

}  // namespace

rng::Digest Dataset::content_digest() const {
    rng::Hasher h;
    const std::uint64_t header[5] = {
        size(), std::uint64_t(height), std::uint64_t(width),
        std::uint64_t(channels), std::uint64_t(num_classes)};
    h.update(header, sizeof header);
    h.update(labels.data(), labels.size() * sizeof(std::int32_t));
    h.update(features.data(), features.size() * sizeof(double));
    return h.finish();
}

Dataset load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path) {
    const auto bytes = read_file(image_path);
    if (bytes.size() < 4) throw TruncatedFile("image file too short: " + image_path.string());

    const std::uint32_t magic = read_be32(bytes.data());
    const std::uint8_t type = std::uint8_t(magic >> 8);
    const std::uint8_t ndims = std::uint8_t(magic);
    const bool type_ok =
        type == kTypeUByte || type == kTypeFloat32 || type == kTypeFloat64;
    if ((magic >> 16) != 0 || !type_ok || (ndims != 3 && ndims != 4)) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw WrongMagic("image file magic " + std::string(buf));
    }

    const std::size_t header_size = 4 + 4ull * ndims;
    if (bytes.size() < header_size)
        throw TruncatedFile("image header shorter than declared dims");

    std::uint32_t dims[4] = {0, 0, 0, 1};
    for (int i = 0; i < ndims; ++i) dims[i] = read_be32(bytes.data() + 4 + 4 * i);

    Dataset ds;
    const std::size_t n = dims[0];
    if (ndims == 3) {
        ds.channels = 1;
        ds.height = int(dims[1]);
        ds.width = int(dims[2]);
    } else {
        ds.channels = int(dims[1]);
        ds.height = int(dims[2]);
        ds.width = int(dims[3]);
    }
    const std::size_t d = ds.dim();
    const std::size_t count = n * d;
    const std::size_t elem =
        type == kTypeUByte ? 1 : (type == kTypeFloat32 ? 4 : 8);
    if (bytes.size() < header_size + count * elem)
        throw TruncatedFile("image payload shorter than header promises");

    ds.features.resize(count);
    const std::uint8_t* p = bytes.data() + header_size;
    if (type == kTypeUByte) {
        for (std::size_t i = 0; i < count; ++i)
            ds.features[i] = double(p[i]) / 255.0;
    } else if (type == kTypeFloat32) {
        for (std::size_t i = 0; i < count; ++i)
            ds.features[i] = double(std::bit_cast<float>(read_be32(p + 4 * i)));
    } else {
        for (std::size_t i = 0; i < count; ++i)
            ds.features[i] = std::bit_cast<double>(read_be64(p + 8 * i));
    }

    ds.labels = load_idx_labels(label_path);
    if (ds.labels.size() != n)
        throw CountMismatch("image count " + std::to_string(n) + " vs label count " +
                            std::to_string(ds.labels.size()));

    std::int32_t max_label = -1;
    for (auto l : ds.labels) max_label = std::max(max_label, l);
    ds.num_classes = int(max_label) + 1;
    ds.name = image_path.stem().string();
    return ds;
}

void save_idx(const Dataset& dataset, const std::filesystem::path& image_path,
              const std::filesystem::path& label_path, IdxFormat format) {
    if (format == IdxFormat::auto_detect) {
        format = IdxFormat::ubyte;
        for (double v : dataset.features) {
            const double scaled = v * 255.0;
            const double rounded = std::nearbyint(scaled);
            if (!(v >= 0.0 && v <= 1.0) || rounded / 255.0 != v) {
                format = IdxFormat::float64;
                break;
            }
        }
    }

    std::vector<std::uint8_t> img;
    img.reserve(16 + dataset.features.size() *
                         (format == IdxFormat::ubyte ? 1 : 8));
    const std::uint8_t type =
        format == IdxFormat::ubyte ? kTypeUByte : kTypeFloat64;
    if (dataset.channels == 1) {
        append_be32(img, (std::uint32_t(type) << 8) | 3u);
        append_be32(img, std::uint32_t(dataset.size()));
        append_be32(img, std::uint32_t(dataset.height));
        append_be32(img, std::uint32_t(dataset.width));
    } else {
        append_be32(img, (std::uint32_t(type) << 8) | 4u);
        append_be32(img, std::uint32_t(dataset.size()));
        append_be32(img, std::uint32_t(dataset.channels));
        append_be32(img, std::uint32_t(dataset.height));
        append_be32(img, std::uint32_t(dataset.width));
    }
    if (format == IdxFormat::ubyte) {
        for (double v : dataset.features)
            img.push_back(std::uint8_t(std::lround(v * 255.0)));
    } else {
        for (double v : dataset.features)
            append_be64(img, std::bit_cast<std::uint64_t>(v));
    }
    write_file(image_path, img);

    std::vector<std::uint8_t> lbl;
    lbl.reserve(8 + dataset.size());
    append_be32(lbl, 0x00000801u);
    append_be32(lbl, std::uint32_t(dataset.size()));
    for (auto l : dataset.labels) {
        if (l < 0 || l > 255)
            throw IoError("label " + std::to_string(l) + " does not fit the IDX byte format");
        lbl.push_back(std::uint8_t(l));
    }
    write_file(label_path, lbl);
}

Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 3 * 1024 pixels
    Dataset ds;
    ds.num_classes = 10;
    ds.height = 32;
    ds.width = 32;
    ds.channels = 3;
    ds.name = "cifar10";

    for (const auto& path : batch_paths) {
        const auto bytes = read_file(path);
        if (bytes.size() % kRecord != 0)
            throw BadRecordLength(path.string() + " has length " +
                                  std::to_string(bytes.size()) +
                                  ", not a multiple of 3073");
        const std::size_t n = bytes.size() / kRecord;
        ds.labels.reserve(ds.labels.size() + n);
        ds.features.reserve(ds.features.size() + n * 3072);
        for (std::size_t r = 0; r < n; ++r) {
            const std::uint8_t* rec = bytes.data() + r * kRecord;
            if (rec[0] >= 10)
                throw LabelOutOfRange("label byte " + std::to_string(rec[0]));
            ds.labels.push_back(rec[0]);
            for (std::size_t i = 0; i < 3072; ++i)
                ds.features.push_back(double(rec[1 + i]) / 255.0);
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  rng::RngStream& stream) {
    if (dataset.size() == 0) throw EmptyDataset("split: dataset is empty");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw RangeError("split: train_fraction must lie in (0, 1)");

    const std::size_t n = dataset.size();
    const std::size_t d = dataset.dim();
    const auto perm = rng::permutation(stream, n);
    const std::size_t n_train =
        std::size_t(std::floor(double(n) * train_fraction));

    auto gather = [&](std::size_t begin, std::size_t end, const char* suffix) {
        Dataset out;
        out.num_classes = dataset.num_classes;
        out.height = dataset.height;
        out.width = dataset.width;
        out.channels = dataset.channels;
        out.name = dataset.name + suffix;
        out.labels.reserve(end - begin);
        out.features.reserve((end - begin) * d);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t src = perm[i];
            out.labels.push_back(dataset.labels[src]);
            const auto r = dataset.row(src);
            out.features.insert(out.features.end(), r.begin(), r.end());
        }
        return out;
    };

    return {gather(0, n_train, "/train"), gather(n_train, n, "/test")};
}

Dataset synth_blobs(int num_classes, int per_class, int dim, double spread,
                    rng::RngStream& stream) {
    if (num_classes < 2 || per_class < 1 || dim < 1)
        throw RangeError("synth_blobs: need num_classes >= 2, per_class >= 1, dim >= 1");

    int nbits = 1;
    while ((1 << nbits) < num_classes) ++nbits;

    Dataset ds;
    ds.num_classes = num_classes;
    ds.height = 1;
    ds.width = dim;
    ds.channels = 1;
    ds.name = "blobs";
    ds.labels.reserve(std::size_t(num_classes) * per_class);
    ds.features.reserve(std::size_t(num_classes) * per_class * dim);

    for (int c = 0; c < num_classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            ds.labels.push_back(c);
            for (int j = 0; j < dim; ++j) {
                const double center = double((c >> (j % nbits)) & 1);
                ds.features.push_back(center + stream.gaussian(spread));
            }
        }
    }
    return ds;
}

Dataset synth_glyphs(int per_class, rng::RngStream& stream) {
    if (per_class < 1) throw RangeError("synth_glyphs: per_class must be >= 1");

    constexpr int kClasses = 10;
    constexpr int kGrid = 7;       // coarse stroke grid
    constexpr int kCell = 4;       // pixels per coarse cell
    constexpr int kSide = kGrid * kCell;
    constexpr int kWalkLen = 12;   // strokes per prototype
    constexpr int kMaxShift = 3;   // pixel shift range, each axis
    constexpr double kKeepProb = 0.8;
    constexpr double kMinIntensity = 0.45;

    // Class prototypes: random walks on the coarse grid.
    std::array<std::array<bool, kGrid * kGrid>, kClasses> protos{};
    for (int c = 0; c < kClasses; ++c) {
        int r = 1 + int(stream.bounded(kGrid - 2));
        int col = 1 + int(stream.bounded(kGrid - 2));
        protos[c][r * kGrid + col] = true;
        for (int step = 1; step < kWalkLen; ++step) {
            switch (stream.bounded(4)) {
                case 0: r = std::max(0, r - 1); break;
                case 1: r = std::min(kGrid - 1, r + 1); break;
                case 2: col = std::max(0, col - 1); break;
                default: col = std::min(kGrid - 1, col + 1); break;
            }
            protos[c][r * kGrid + col] = true;
        }
    }

    Dataset ds;
    ds.num_classes = kClasses;
    ds.height = kSide;
    ds.width = kSide;
    ds.channels = 1;
    ds.name = "glyphs";
    ds.labels.reserve(std::size_t(kClasses) * per_class);
    ds.features.assign(std::size_t(kClasses) * per_class * kSide * kSide, 0.0);

    std::size_t sample = 0;
    for (int c = 0; c < kClasses; ++c) {
        for (int s = 0; s < per_class; ++s, ++sample) {
            ds.labels.push_back(c);
            double* img = ds.features.data() + sample * kSide * kSide;
            const int dy = int(stream.bounded(2 * kMaxShift + 1)) - kMaxShift;
            const int dx = int(stream.bounded(2 * kMaxShift + 1)) - kMaxShift;
            for (int cell = 0; cell < kGrid * kGrid; ++cell) {
                if (!protos[c][cell]) continue;
                if (stream.uniform() >= kKeepProb) continue;
                const double intensity =
                    kMinIntensity + (1.0 - kMinIntensity) * stream.uniform();
                const int base_r = (cell / kGrid) * kCell + dy;
                const int base_c = (cell % kGrid) * kCell + dx;
                for (int pr = base_r; pr < base_r + kCell; ++pr) {
                    if (pr < 0 || pr >= kSide) continue;
                    for (int pc = base_c; pc < base_c + kCell; ++pc) {
                        if (pc < 0 || pc >= kSide) continue;
                        img[pr * kSide + pc] = intensity;
                    }
                }
            }
        }
    }
    return ds;
}

}  // namespace obf::data
