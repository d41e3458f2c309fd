#ifndef CREDSCORE_CONTEXT_STORE_HPP
#define CREDSCORE_CONTEXT_STORE_HPP

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "credscore/common.hpp"

namespace credscore {

struct EmbeddingRecord {
  std::string id;
  Eigen::VectorXd vector;
  std::map<std::string, std::string> metadata;
  std::string timestamp;
};

enum class SimilarityMetric { Cosine, Dot };

// Exact top-k similarity index over dense vectors; single-writer, many-reader.
class VectorIndex {
 public:
  VectorIndex(int dimension, SimilarityMetric metric)
      : dimension_(dimension), metric_(metric) {}

  void upsert(const std::vector<EmbeddingRecord>& records);
  std::vector<std::pair<std::string, double>> query_topk(const Eigen::VectorXd& query,
                                                         std::size_t k) const;
  std::size_t count() const { return records_.size(); }
  int dimension() const { return dimension_; }
  SimilarityMetric metric() const { return metric_; }
  const std::vector<EmbeddingRecord>& records() const { return records_; }

  // Flat binary layout (little-endian u32 d, u64 count, id table, row-major
  // doubles) plus a JSON sidecar for metadata; round-trips bit-exactly.
  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path);

 private:
  int dimension_;
  SimilarityMetric metric_;
  std::vector<EmbeddingRecord> records_;
  std::map<std::string, std::size_t> by_id_;
};

struct FusionConfig {
  Eigen::MatrixXd projection;  // d_h x d query projection
};

// Attention over retrieved rows: weights = softmax((W_q h) V^T), h' = weights^T V.
Eigen::VectorXd fuse(const Eigen::VectorXd& hidden, const Eigen::MatrixXd& retrieved,
                     const FusionConfig& cfg);

}  // namespace credscore

#endif
