#include "exnex/rng.hpp"

#include <cmath>
#include <numbers>

namespace exnex {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
constexpr int kRounds = 10;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo,
                    std::uint32_t& hi) noexcept
{
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    lo = static_cast<std::uint32_t>(product);
    hi = static_cast<std::uint32_t>(product >> 32);
}

inline Philox4x32::Counter round(const Philox4x32::Counter& c,
                                 const Philox4x32::Key& k) noexcept
{
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kMul0, c[0], lo0, hi0);
    mulhilo(kMul1, c[2], lo1, hi1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace

Philox4x32::Counter Philox4x32::encrypt(Counter ctr, Key key) noexcept
{
    ctr = round(ctr, key);
    for (int r = 1; r < kRounds; ++r) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
        ctr = round(ctr, key);
    }
    return ctr;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed), stream_id_(stream_id)
{
}

void RandomStream::refill() noexcept
{
    const Philox4x32::Counter ctr{
        static_cast<std::uint32_t>(block_),
        static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_id_),
        static_cast<std::uint32_t>(stream_id_ >> 32)};
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                              static_cast<std::uint32_t>(seed_ >> 32)};
    buffer_ = Philox4x32::encrypt(ctr, key);
    ++block_;
    used_ = 0;
}

std::uint32_t RandomStream::next_u32() noexcept
{
    if (used_ == 4) {
        refill();
    }
    return buffer_[used_++];
}

RandomStream::result_type RandomStream::operator()() noexcept
{
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double RandomStream::uniform() noexcept
{
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open() noexcept
{
    return (static_cast<double>((*this)() >> 12) + 0.5) * 0x1.0p-52;
}

double RandomStream::normal() noexcept
{
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) noexcept
{
    const Philox4x32::Counter ctr{
        static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
        static_cast<std::uint32_t>(b) ^ static_cast<std::uint32_t>(c >> 32),
        static_cast<std::uint32_t>(b >> 32) ^ static_cast<std::uint32_t>(c)};
    // Fold c into the key as well so (b, c) swaps do not collide.
    const Philox4x32::Key key{
        static_cast<std::uint32_t>(master) ^ static_cast<std::uint32_t>(c),
        static_cast<std::uint32_t>(master >> 32)};
    const auto out = Philox4x32::encrypt(ctr, key);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace exnex
