#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "credscore/context_store.hpp"

using namespace credscore;

namespace {

EmbeddingRecord rec(const std::string& id, std::vector<double> v) {
  EmbeddingRecord r;
  r.id = id;
  r.vector = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  r.timestamp = "2016-12-31";
  return r;
}

}  // namespace

TEST_CASE("upsert replaces by id") {
  VectorIndex idx(2, SimilarityMetric::Dot);
  idx.upsert({rec("a", {1, 0}), rec("b", {0, 1})});
  CHECK(idx.count() == 2);
  idx.upsert({rec("a", {5, 5})});
  CHECK(idx.count() == 2);
  Eigen::VectorXd q(2);
  q << 1, 0;
  auto top = idx.query_topk(q, 1);
  CHECK(top[0].first == "a");
  CHECK(top[0].second == doctest::Approx(5.0));
}

TEST_CASE("dimension mismatch and degenerate queries") {
  VectorIndex idx(3, SimilarityMetric::Cosine);
  CHECK_THROWS_AS(idx.upsert({rec("bad", {1, 2})}), Error);
  idx.upsert({rec("a", {1, 0, 0})});
  Eigen::VectorXd q = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(idx.query_topk(q, 1), Error);  // zero-norm cosine query
  Eigen::VectorXd q2(2);
  q2 << 1, 1;
  CHECK_THROWS_AS(idx.query_topk(q2, 1), Error);
  CHECK_THROWS_AS(idx.query_topk(Eigen::VectorXd::Ones(3), 0), Error);
}

TEST_CASE("cosine vs dot ranking differ as expected") {
  // long vector wins on dot, aligned vector wins on cosine
  VectorIndex dot(2, SimilarityMetric::Dot);
  VectorIndex cos(2, SimilarityMetric::Cosine);
  std::vector<EmbeddingRecord> rs = {rec("long_off", {10, 10}), rec("short_aligned", {1, 0})};
  dot.upsert(rs);
  cos.upsert(rs);
  Eigen::VectorXd q(2);
  q << 1, 0.01;
  CHECK(dot.query_topk(q, 1)[0].first == "long_off");
  CHECK(cos.query_topk(q, 1)[0].first == "short_aligned");
}

TEST_CASE("ties break by id and k clamps to the index size") {
  VectorIndex idx(2, SimilarityMetric::Dot);
  idx.upsert({rec("zeta", {1, 0}), rec("alpha", {1, 0}), rec("mid", {0.5, 0})});
  Eigen::VectorXd q(2);
  q << 1, 0;
  auto top = idx.query_topk(q, 10);
  REQUIRE(top.size() == 3);
  CHECK(top[0].first == "alpha");
  CHECK(top[1].first == "zeta");
  CHECK(top[2].first == "mid");
}

TEST_CASE("exact top-k equals a brute-force oracle on random vectors") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> d(0, 1);
  const int n = 50, dim = 8;
  VectorIndex idx(dim, SimilarityMetric::Cosine);
  std::vector<Eigen::VectorXd> vecs;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j) v[j] = d(rng);
    vecs.push_back(v);
    EmbeddingRecord r;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "id%03d", i);
    r.id = buf;
    r.vector = v;
    idx.upsert({r});
  }
  for (int probe = 0; probe < 10; ++probe) {
    Eigen::VectorXd q(dim);
    for (int j = 0; j < dim; ++j) q[j] = d(rng);
    auto top = idx.query_topk(q, 5);
    // brute force
    std::vector<std::pair<double, std::string>> all;
    for (int i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "id%03d", i);
      all.emplace_back(q.dot(vecs[static_cast<std::size_t>(i)]) /
                           (q.norm() * vecs[static_cast<std::size_t>(i)].norm()),
                       buf);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; i < 5; ++i) {
      CHECK(top[static_cast<std::size_t>(i)].first == all[static_cast<std::size_t>(i)].second);
      CHECK(top[static_cast<std::size_t>(i)].second ==
            doctest::Approx(all[static_cast<std::size_t>(i)].first).epsilon(1e-12));
    }
  }
}

TEST_CASE("save and load round trip bit for bit") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(0, 1);
  VectorIndex idx(4, SimilarityMetric::Dot);
  for (int i = 0; i < 20; ++i) {
    EmbeddingRecord r;
    r.id = "v" + std::to_string(i);
    r.vector = Eigen::VectorXd(4);
    for (int j = 0; j < 4; ++j) r.vector[j] = d(rng);
    r.metadata["agency"] = "A" + std::to_string(i % 3);
    r.timestamp = "2015-06-30";
    idx.upsert({r});
  }
  std::string path = "/tmp/credscore_test_index.bin";
  idx.save(path);
  VectorIndex loaded = VectorIndex::load(path);
  CHECK(loaded.count() == idx.count());
  CHECK(loaded.dimension() == idx.dimension());
  CHECK(loaded.metric() == idx.metric());
  for (std::size_t i = 0; i < idx.count(); ++i) {
    const auto& a = idx.records()[i];
    const auto& b = loaded.records()[i];
    CHECK(a.id == b.id);
    CHECK(a.metadata == b.metadata);
    CHECK(a.timestamp == b.timestamp);
    for (int j = 0; j < 4; ++j) CHECK(a.vector[j] == b.vector[j]);  // bitwise
  }
  // identical rankings from the reloaded index
  Eigen::VectorXd q(4);
  q << 0.3, -1, 2, 0.5;
  auto ta = idx.query_topk(q, 7);
  auto tb = loaded.query_topk(q, 7);
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].first == tb[i].first);
    CHECK(ta[i].second == tb[i].second);
  }
}

TEST_CASE("fusion weights: worked example") {
  // logits ln 2 and 0 -> softmax weights 2/3, 1/3
  Eigen::MatrixXd retrieved(2, 2);
  retrieved << std::log(2.0), 0.0,  // v1
               0.0, 1.0;            // v2 (orthogonal)
  Eigen::VectorXd hidden(2);
  hidden << 1.0, 0.0;
  FusionConfig cfg;
  cfg.projection = Eigen::MatrixXd::Identity(2, 2);
  // logits = retrieved * hidden = [ln2, 0]
  Eigen::VectorXd fused = fuse(hidden, retrieved, cfg);
  Eigen::VectorXd expect = (2.0 / 3.0) * retrieved.row(0).transpose() +
                           (1.0 / 3.0) * retrieved.row(1).transpose();
  CHECK((fused - expect).norm() < 1e-12);
}

TEST_CASE("fusion: k = 1 identity and uniform orthogonal cases") {
  FusionConfig cfg;
  cfg.projection = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd hidden(3);
  hidden << 0.2, -1.0, 0.7;
  // single retrieved vector comes back unchanged
  Eigen::MatrixXd one(1, 3);
  one << 5, 6, 7;
  Eigen::VectorXd fused = fuse(hidden, one, cfg);
  CHECK((fused - one.row(0).transpose()).norm() < 1e-12);
  // orthogonal rows with zero logits blend uniformly
  Eigen::MatrixXd ortho = Eigen::MatrixXd::Zero(3, 3);
  ortho(0, 0) = 1;
  ortho(1, 1) = 1;
  ortho(2, 2) = 1;
  Eigen::VectorXd h0 = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd mixed = fuse(h0, ortho, cfg);
  for (int j = 0; j < 3; ++j) CHECK(mixed[j] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("fusion softmax is shift and overflow stable") {
  FusionConfig cfg;
  cfg.projection = Eigen::MatrixXd::Identity(1, 1) * 1000.0;  // huge logits
  Eigen::VectorXd hidden(1);
  hidden << 1.0;
  Eigen::MatrixXd retrieved(2, 1);
  retrieved << 3.0, 1.0;
  Eigen::VectorXd fused = fuse(hidden, retrieved, cfg);
  CHECK(std::isfinite(fused[0]));
  CHECK(fused[0] == doctest::Approx(3.0));  // winner takes all
}

TEST_CASE("fusion shape errors") {
  FusionConfig cfg;
  cfg.projection = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd hidden(3);
  hidden << 1, 2, 3;
  Eigen::MatrixXd retrieved(2, 2);
  retrieved.setOnes();
  CHECK_THROWS_AS(fuse(hidden, retrieved, cfg), Error);
  CHECK_THROWS_AS(fuse(Eigen::VectorXd::Ones(2), Eigen::MatrixXd(0, 2), cfg), Error);
}
