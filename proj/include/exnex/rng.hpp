#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace exnex {

// Philox4x32-10 counter-based block cipher (Salmon et al., SC'11).
// Output is a pure function of (counter, key), so any number of
// independent streams can be addressed without shared state.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter encrypt(Counter ctr, Key key) noexcept;
};

// A sequential stream over Philox blocks. The 64-bit seed is the cipher key,
// the stream id occupies the upper half of the counter and the block index
// the lower half, so streams with different ids never overlap.
//
// Satisfies UniformRandomBitGenerator, but the engine's own uniform/normal
// helpers are used throughout so results do not depend on the standard
// library's distribution implementations.
class RandomStream {
public:
    using result_type = std::uint64_t;

    RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept;

    std::uint32_t next_u32() noexcept;

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;

    // Uniform on (0, 1).
    double uniform_open() noexcept;

    // Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

private:
    void refill() noexcept;

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t block_ = 0;
    Philox4x32::Counter buffer_{};
    int used_ = 4;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// Mixes (master, a, b, c) into a fresh 64-bit seed by encrypting the tuple
// under the master key. Used to give each replicate / trial / interim fit
// its own reproducible seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0) noexcept;

}  // namespace exnex
