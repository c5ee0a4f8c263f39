#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hdrx {

/// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Purposes for which independent random streams are derived. Values are
/// part of the dataset reproducibility contract; do not renumber.
enum class Stream : std::uint64_t {
  Payload = 1,
  PaSelect = 2,
  Channel = 3,
  Noise = 4,
  Snr = 5,
  Backoff = 6,
  Pilots = 7,
  Init = 8,
  Shuffle = 9,
  Dither = 10,
};

/// Seed for the stream (master, index, purpose). Independent of call order,
/// so records can be generated in any order or in parallel.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, Stream purpose);

/// FNV-1a over a string, mixed with a seed (per-layer init seeds).
std::uint64_t name_seed(std::string_view name, std::uint64_t seed);

using Rng = std::mt19937_64;

}  // namespace hdrx
