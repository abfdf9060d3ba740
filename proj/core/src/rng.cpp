#include "kspoc/rng.hpp"

#include <cmath>
#include <numbers>

namespace kspoc {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

// 53-bit uniform in (0, 1) from two 32-bit words.
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

PhiloxCounter block(std::uint64_t seed, StreamDomain domain, std::uint64_t stream, std::uint64_t index) {
  // Key carries the seed; the counter carries (index, stream, domain).
  const PhiloxKey key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const std::uint64_t tagged = (static_cast<std::uint64_t>(domain) << 56) ^ stream;
  const PhiloxCounter ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                          static_cast<std::uint32_t>(tagged), static_cast<std::uint32_t>(tagged >> 32)};
  return philox4x32(ctr, key);
}

}  // namespace

PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) {
  return mix64(mix64(master ^ mix64(tag)) + index);
}

// The index space is split in sub-blocks: index i owns Philox counters (i << 8) + j, j < 256.
void uniforms(std::uint64_t seed, StreamDomain domain, std::uint64_t stream, std::uint64_t index,
              std::span<double> out) {
  std::size_t k = 0;
  for (std::uint64_t j = 0; k < out.size(); ++j) {
    const PhiloxCounter r = block(seed, domain, stream, (index << 8) + j);
    out[k++] = to_open_unit(r[0], r[1]);
    if (k < out.size()) out[k++] = to_open_unit(r[2], r[3]);
  }
}

void standard_normals(std::uint64_t seed, StreamDomain domain, std::uint64_t stream, std::uint64_t index,
                      std::span<double> out) {
  std::size_t k = 0;
  for (std::uint64_t j = 0; k < out.size(); ++j) {
    const PhiloxCounter r = block(seed, domain, stream, (index << 8) + j);
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[k++] = radius * std::cos(angle);
    if (k < out.size()) out[k++] = radius * std::sin(angle);
  }
}

CounterStream::result_type CounterStream::operator()() {
  const PhiloxCounter r = block(seed_, StreamDomain::sampling, stream_, index_++);
  return (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
}

double CounterStream::uniform() {
  double u;
  uniforms(seed_, StreamDomain::sampling, stream_, index_++, {&u, 1});
  return u;
}

double CounterStream::normal() {
  double z;
  standard_normals(seed_, StreamDomain::sampling, stream_, index_++, {&z, 1});
  return z;
}

}  // namespace kspoc
