#ifndef CREDSCORE_COMMON_HPP
#define CREDSCORE_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace credscore {

// 64-bit FNV-1a, used for content hashes and seed derivation.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// Sub-seeds are a pure function of (master, stage, agency, fold), so one
// stage's work never perturbs another stage's randomness.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                 std::string_view agency = "", int fold = -1) {
  std::uint64_t h = fnv1a64(stage);
  h = fnv1a64(agency, h);
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&fold), sizeof(fold)), h);
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&master), sizeof(master)), h);
  return h;
}

using Rng = std::mt19937_64;

struct Date {
  int year = 0;
  int month = 1;
  int day = 1;
  auto operator<=>(const Date&) const = default;
  std::string to_string() const;
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace credscore

#endif
