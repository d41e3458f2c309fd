#include "credscore/targets.hpp"

#include <algorithm>
#include <numeric>

namespace credscore {

RatingScale RatingScale::standard() {
  RatingScale s;
  s.grades = {"AAA", "AA+", "AA",  "AA-",  "A+",  "A",  "A-",   "BBB+", "BBB", "BBB-", "BB+",
              "BB",  "BB-", "B+",  "B",    "B-",  "CCC+", "CCC", "CCC-", "CC",  "C",   "D"};
  return s;
}

bool RatingScale::contains(const std::string& grade) const {
  return std::find(grades.begin(), grades.end(), grade) != grades.end();
}

int RatingScale::rank(const std::string& grade) const {
  auto it = std::find(grades.begin(), grades.end(), grade);
  if (it == grades.end()) throw Error("unknown rating grade: \"" + grade + "\"");
  return static_cast<int>(it - grades.begin());
}

int to_binary(const std::string& rating, const RatingScale& scale) {
  // Threshold sits between BBB- (rank 9) and BB+ (rank 10).
  return scale.rank(rating) <= 9 ? 1 : 0;
}

double to_continuous(const std::string& rating, const RatingScale& scale) {
  int n = static_cast<int>(scale.grades.size()) - 1;
  return static_cast<double>(n - scale.rank(rating)) / static_cast<double>(n);
}

std::vector<double> rank_rescale(const std::vector<double>& scores) {
  if (scores.empty()) throw Error("rank_rescale: empty input");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> out(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // 1-based average rank over the tie block.
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg_rank / static_cast<double>(n);
    i = j + 1;
  }
  return out;
}

}  // namespace credscore
