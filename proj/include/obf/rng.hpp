#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace obf::rng {

// Deterministic random stream. Domain-separated streams are derived from a
// single 64-bit seed plus a tag; two streams with the same (seed, tag) emit
// identical sequences, streams with different tags are independent.
//
// Generator: xoshiro256** seeded through a splitmix64 avalanche of the seed
// mixed with a hash of the tag. Not cryptographic; digest() below is.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::array<std::uint64_t, 4> state, std::string domain_tag)
        : state_(state), domain_tag_(std::move(domain_tag)) {}

    std::uint64_t next_u64();

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform();

    // Uniform integer in [0, bound) without modulo bias. bound must be > 0.
    std::uint64_t bounded(std::uint64_t bound);

    // One draw from N(0, sigma^2) via Box-Muller on two uniform draws.
    // sigma == 0 returns exactly 0.0 and leaves the stream untouched.
    double gaussian(double sigma);

    const std::string& domain_tag() const noexcept { return domain_tag_; }

private:
    std::array<std::uint64_t, 4> state_{1, 2, 3, 4};
    std::string domain_tag_;
};

// Derives the stream for (seed, domain_tag). Tag must be nonempty ASCII.
RngStream derive_stream(std::uint64_t seed, std::string_view domain_tag);

// Indexed variant for schedule-style derivations (per-epoch shuffles,
// per-class substreams). derive_stream(s, t) == derive_stream(s, t, 0).
RngStream derive_stream(std::uint64_t seed, std::string_view domain_tag,
                        std::uint64_t index);

// Fisher-Yates permutation of [0, n), uniform over permutations.
std::vector<std::size_t> permutation(RngStream& stream, std::size_t n);

// Derived 64-bit seed (first output of the derived stream); used to give
// sub-tasks their own independent seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view domain_tag,
                          std::uint64_t index);

// ---------------------------------------------------------------------------
// Hashing (SHA-256; used for dataset commitments and arch fingerprints).

using Digest = std::array<std::uint8_t, 32>;

Digest digest(const void* data, std::size_t size);
Digest digest(const std::vector<std::uint8_t>& bytes);

std::string hex(const Digest& d);

// Incremental hasher for large payloads.
class Hasher {
public:
    Hasher();
    ~Hasher();
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    void update(const void* data, std::size_t size);
    Digest finish();

private:
    void* ctx_ = nullptr;
};

}  // namespace obf::rng
