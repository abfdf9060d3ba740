#ifndef KSPOC_RNG_HPP
#define KSPOC_RNG_HPP

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function of
// (key, counter), so the order in which particles or replications are scheduled
// never changes the numbers they see.

#include <array>
#include <cstdint>
#include <span>

namespace kspoc {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32(PhiloxCounter counter, PhiloxKey key);

// SplitMix64 finalizer; used to derive child seeds.
std::uint64_t mix64(std::uint64_t x);

// Child seed for (master, tag, index). Distinct tags give unrelated streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0);

// Stream domains: the top bits of the stream id separate unrelated uses of one seed.
enum class StreamDomain : std::uint32_t { brownian = 1, initial = 2, sampling = 3 };

// Fill `out` with independent standard normals for (seed, domain, stream, index).
// Different (domain, stream, index) triples never share Philox blocks.
void standard_normals(std::uint64_t seed, StreamDomain domain, std::uint64_t stream, std::uint64_t index,
                      std::span<double> out);

// Fill `out` with independent uniforms in (0, 1).
void uniforms(std::uint64_t seed, StreamDomain domain, std::uint64_t stream, std::uint64_t index,
              std::span<double> out);

// Sequential generator over one counter-based stream; satisfies UniformRandomBitGenerator.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  CounterStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

  double uniform();
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace kspoc

#endif  // KSPOC_RNG_HPP
