#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obf/rng.hpp"

namespace obf::data {

// Labeled sample collection. Features are stored row-major, one flattened
// sample per row; multi-channel images use planar channel-height-width order
// (matching the CIFAR-10 binary layout). Values of freshly loaded datasets
// lie in [0, 1]; obfuscated datasets may exceed that range.
struct Dataset {
    std::vector<double> features;      // size() * dim()
    std::vector<std::int32_t> labels;  // each in [0, num_classes)
    int num_classes = 0;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const {
        return static_cast<std::size_t>(height) * width * channels;
    }

    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * dim(), dim()};
    }
    std::span<double> row(std::size_t i) {
        return {features.data() + i * dim(), dim()};
    }

    // Content identity for commitments: shape, labels and feature bits;
    // the display name is deliberately excluded.
    rng::Digest content_digest() const;
};

// ---------------------------------------------------------------------------
// IDX container (MNIST layout). Readable element types: unsigned byte
// (0x08, values normalized by 255), float32 (0x0D) and float64 (0x0E);
// 3-dim images are n x h x w, 4-dim are n x c x h x w. Labels use the
// 1-dim unsigned-byte form (magic 0x00000801).

Dataset load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path);

enum class IdxFormat {
    auto_detect,  // ubyte when every feature is a multiple of 1/255 in [0,1]
    ubyte,
    float64,
};

void save_idx(const Dataset& dataset, const std::filesystem::path& image_path,
              const std::filesystem::path& label_path,
              IdxFormat format = IdxFormat::auto_detect);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 planar
// RGB pixel bytes. Files are concatenated in argument order.
Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths);

// ---------------------------------------------------------------------------

// Partitions rows by a uniform random permutation; train gets
// floor(n * train_fraction) rows, test the remainder.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  rng::RngStream& stream);

// Synthetic fixture: per-class centers are fixed binary bit patterns in
// [0,1]^dim, jittered by N(0, spread^2). Labels are balanced exactly.
Dataset synth_blobs(int num_classes, int per_class, int dim, double spread,
                    rng::RngStream& stream);

// Synthetic 28x28 glyph fixture: 10 classes of stroke prototypes rendered
// with random shifts, per-stroke dropout and intensity jitter. Serves as the
// desk-scale stand-in for handwritten-digit data when no IDX files are given.
Dataset synth_glyphs(int per_class, rng::RngStream& stream);

}  // namespace obf::data
