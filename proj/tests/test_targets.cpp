#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "credscore/targets.hpp"

using namespace credscore;

TEST_CASE("standard scale shape") {
  RatingScale s = RatingScale::standard();
  CHECK(s.grades.size() == 22);
  CHECK(s.rank("AAA") == 0);
  CHECK(s.rank("D") == 21);
  CHECK(s.rank("BBB-") == 9);
  CHECK(s.rank("BB+") == 10);
  CHECK(s.contains("CCC+"));
  CHECK_FALSE(s.contains("ZZZ"));
  CHECK_THROWS_AS(s.rank("ZZZ"), Error);
}

TEST_CASE("binary boundary at investment grade") {
  CHECK(to_binary("AAA") == 1);
  CHECK(to_binary("BBB-") == 1);  // last investment grade
  CHECK(to_binary("BB+") == 0);   // first junk grade
  CHECK(to_binary("D") == 0);
}

TEST_CASE("continuous mapping") {
  CHECK(to_continuous("AAA") == doctest::Approx(1.0));
  CHECK(to_continuous("D") == doctest::Approx(0.0));
  // oracle: rank(BBB)=8, (21-8)/21
  CHECK(to_continuous("BBB") == doctest::Approx(13.0 / 21.0).epsilon(1e-15));
  // strictly decreasing along the alphabet
  RatingScale s = RatingScale::standard();
  for (std::size_t i = 1; i < s.grades.size(); ++i)
    CHECK(to_continuous(s.grades[i]) < to_continuous(s.grades[i - 1]));
}

TEST_CASE("rank rescale") {
  auto r = rank_rescale({3, 1, 2});
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[1] == doctest::Approx(1.0 / 3));
  CHECK(r[2] == doctest::Approx(2.0 / 3));
  // ties get the average rank
  auto t = rank_rescale({1, 1, 2});
  CHECK(t[0] == doctest::Approx(0.5));
  CHECK(t[1] == doctest::Approx(0.5));
  CHECK(t[2] == doctest::Approx(1.0));
}
