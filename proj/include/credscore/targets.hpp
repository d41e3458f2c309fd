#ifndef CREDSCORE_TARGETS_HPP
#define CREDSCORE_TARGETS_HPP

#include <string>
#include <vector>

#include "credscore/common.hpp"

namespace credscore {

// 22-grade ordinal alphabet, best (AAA, rank 0) to worst (D, rank 21).
struct RatingScale {
  std::vector<std::string> grades;

  static RatingScale standard();
  int rank(const std::string& grade) const;  // throws on unknown grade
  bool contains(const std::string& grade) const;
};

enum class TargetMode { Binary, Continuous };

// Investment grade: AAA..BBB- (ranks 0..9) -> 1; BB+..D -> 0.
int to_binary(const std::string& rating, const RatingScale& scale = RatingScale::standard());

// Linear map over the full alphabet, oriented so higher = safer: (21 - rank)/21.
double to_continuous(const std::string& rating, const RatingScale& scale = RatingScale::standard());

// Average-tie ranks divided by n; preserves order.
std::vector<double> rank_rescale(const std::vector<double>& scores);

}  // namespace credscore

#endif
