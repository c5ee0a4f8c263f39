#include "hdrx/rng.hpp"

namespace hdrx {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, Stream purpose) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ (index * 0xd6e8feb86659fd93ULL));
  return splitmix64(s ^ static_cast<std::uint64_t>(purpose) * 0xa0761d6478bd642fULL);
}

std::uint64_t name_seed(std::string_view name, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

}  // namespace hdrx
