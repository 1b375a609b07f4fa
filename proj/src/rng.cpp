#include "obf/rng.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "obf/errors.hpp"

namespace obf::rng {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

// splitmix64: advances x and returns the avalanche-mixed output.
inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t RngStream::next_u64() {
    // xoshiro256**
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::bounded(std::uint64_t bound) {
    // Rejection sampling; threshold = 2^64 mod bound.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double RngStream::gaussian(double sigma) {
    if (sigma < 0.0) throw RangeError("gaussian: sigma must be >= 0");
    if (sigma == 0.0) return 0.0;
    // 1 - uniform() lies in (0, 1], keeping the log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return sigma * r * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream derive_stream(std::uint64_t seed, std::string_view domain_tag) {
    return derive_stream(seed, domain_tag, 0);
}

RngStream derive_stream(std::uint64_t seed, std::string_view domain_tag,
                        std::uint64_t index) {
    if (domain_tag.empty())
        throw RangeError("derive_stream: domain_tag must be nonempty");
    std::uint64_t x = seed;
    x ^= fnv1a64(domain_tag) + 0x9e3779b97f4a7c15ULL + (x << 6) + (x >> 2);
    x ^= index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL;
    std::array<std::uint64_t, 4> state{};
    for (auto& s : state) s = splitmix64(x);
    if ((state[0] | state[1] | state[2] | state[3]) == 0) state[0] = 1;
    return RngStream(state, std::string(domain_tag));
}

std::vector<std::size_t> permutation(RngStream& stream, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.bounded(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view domain_tag,
                          std::uint64_t index) {
    return derive_stream(seed, domain_tag, index).next_u64();
}

// ---------------------------------------------------------------------------

Digest digest(const void* data, std::size_t size) {
    Hasher h;
    h.update(data, size);
    return h.finish();
}

Digest digest(const std::vector<std::uint8_t>& bytes) {
    return digest(bytes.data(), bytes.size());
}

std::string hex(const Digest& d) {
    static const char* k = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : d) {
        out.push_back(k[b >> 4]);
        out.push_back(k[b & 0xf]);
    }
    return out;
}

Hasher::Hasher() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 init failed");
    ctx_ = ctx;
}

Hasher::~Hasher() {
    if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Hasher::update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size) != 1)
        throw std::runtime_error("sha256 update failed");
}

Digest Hasher::finish() {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 ||
        len != out.size())
        throw std::runtime_error("sha256 final failed");
    return out;
}

}  // namespace obf::rng
