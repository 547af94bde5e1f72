#pragma once

#include <cstdint>
#include <limits>

namespace rwre {

// Stateless 64-bit finalizer (SplitMix64 output function).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Independent random-number domains. Every random draw in the toolkit is
// addressed by (seed, domain, stream, index) so that results never depend on
// scheduling or on the order in which sites are materialized.
enum class Domain : std::uint64_t {
    environment = 1,
    walk = 2,
    depth_tail = 3,
    calibration = 4,
    chain = 5,
};

// A stream key with its base hash precomputed, for tight loops.
struct StreamCursor {
    std::uint64_t base = 0;

    constexpr std::uint64_t at(std::uint64_t counter) const noexcept
    {
        return mix64(base ^ mix64(counter ^ 0x5851f42d4c957f2dull));
    }
};

struct StreamKey {
    std::uint64_t seed = 0;
    Domain domain = Domain::environment;
    std::uint64_t stream = 0;

    // Counter-based draw: a pure function of the key and the counter.
    constexpr std::uint64_t at(std::uint64_t counter) const noexcept
    {
        return cursor().at(counter);
    }

    constexpr StreamCursor cursor() const noexcept { return StreamCursor{base()}; }

    constexpr std::uint64_t base() const noexcept
    {
        return mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(domain)) + stream);
    }
};

// Map 64 random bits to a double in [0, 1) with 53 bits of precision.
constexpr double to_unit(std::uint64_t bits) noexcept
{
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential SplitMix64 engine seeded from a stream key; satisfies
// UniformRandomBitGenerator so it plugs into <random> distributions.
class SplitMix64
{
  public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t state) noexcept : state_(state) {}
    explicit constexpr SplitMix64(const StreamKey& key) noexcept : state_(key.base()) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    constexpr result_type operator()() noexcept
    {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    constexpr double uniform() noexcept { return to_unit((*this)()); }

  private:
    std::uint64_t state_;
};

}  // namespace rwre
