#include "credscore/context_store.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include <json.hpp>

namespace credscore {

void VectorIndex::upsert(const std::vector<EmbeddingRecord>& records) {
  for (const auto& rec : records) {
    if (rec.vector.size() != dimension_)
      throw Error("upsert: dimension mismatch for id \"" + rec.id + "\": got " +
                  std::to_string(rec.vector.size()) + ", index is " + std::to_string(dimension_));
    auto it = by_id_.find(rec.id);
    if (it != by_id_.end()) {
      records_[it->second] = rec;
    } else {
      by_id_[rec.id] = records_.size();
      records_.push_back(rec);
    }
  }
}

std::vector<std::pair<std::string, double>> VectorIndex::query_topk(const Eigen::VectorXd& query,
                                                                    std::size_t k) const {
  if (k < 1) throw Error("query_topk: k must be >= 1");
  if (records_.empty()) throw Error("query_topk: empty index");
  if (query.size() != dimension_) throw Error("query_topk: query dimension mismatch");
  double qnorm = query.norm();
  if (metric_ == SimilarityMetric::Cosine && qnorm == 0)
    throw Error("query_topk: zero-norm query under cosine similarity");

  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(records_.size());
  for (const auto& rec : records_) {
    double sim;
    if (metric_ == SimilarityMetric::Dot) {
      sim = query.dot(rec.vector);
    } else {
      double vnorm = rec.vector.norm();
      sim = vnorm == 0 ? 0.0 : query.dot(rec.vector) / (qnorm * vnorm);
    }
    scored.emplace_back(rec.id, sim);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // deterministic tie-break by id
  });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

void VectorIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write index file: " + path);
  std::uint32_t d = static_cast<std::uint32_t>(dimension_);
  std::uint64_t count = records_.size();
  std::uint8_t metric = metric_ == SimilarityMetric::Cosine ? 0 : 1;
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&metric), sizeof(metric));
  for (const auto& rec : records_) {
    std::uint32_t len = static_cast<std::uint32_t>(rec.id.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(rec.id.data(), len);
  }
  for (const auto& rec : records_)
    out.write(reinterpret_cast<const char*>(rec.vector.data()),
              static_cast<std::streamsize>(sizeof(double) * rec.vector.size()));

  nlohmann::json side;
  for (const auto& rec : records_) {
    nlohmann::json e;
    e["metadata"] = rec.metadata;
    e["timestamp"] = rec.timestamp;
    side[rec.id] = e;
  }
  std::ofstream meta(path + ".meta.json");
  meta << side.dump(2);
}

VectorIndex VectorIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read index file: " + path);
  std::uint32_t d = 0;
  std::uint64_t count = 0;
  std::uint8_t metric = 0;
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  in.read(reinterpret_cast<char*>(&metric), sizeof(metric));
  VectorIndex idx(static_cast<int>(d),
                  metric == 0 ? SimilarityMetric::Cosine : SimilarityMetric::Dot);
  std::vector<EmbeddingRecord> records(count);
  for (auto& rec : records) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    rec.id.resize(len);
    in.read(rec.id.data(), len);
  }
  for (auto& rec : records) {
    rec.vector.resize(d);
    in.read(reinterpret_cast<char*>(rec.vector.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
  }
  if (!in) throw Error("truncated index file: " + path);

  std::ifstream meta(path + ".meta.json");
  if (meta) {
    nlohmann::json side = nlohmann::json::parse(meta);
    for (auto& rec : records) {
      if (side.contains(rec.id)) {
        rec.metadata = side[rec.id]["metadata"].get<std::map<std::string, std::string>>();
        rec.timestamp = side[rec.id]["timestamp"].get<std::string>();
      }
    }
  }
  idx.upsert(records);
  return idx;
}

Eigen::VectorXd fuse(const Eigen::VectorXd& hidden, const Eigen::MatrixXd& retrieved,
                     const FusionConfig& cfg) {
  if (retrieved.rows() < 1) throw Error("fuse: need at least one retrieved vector");
  if (cfg.projection.cols() != hidden.size())
    throw Error("fuse: projection columns must match the hidden dimension");
  if (cfg.projection.rows() != retrieved.cols())
    throw Error("fuse: projected query must live in the retrieved-vector space");

  Eigen::VectorXd projected = cfg.projection * hidden;
  Eigen::VectorXd logits = retrieved * projected;
  // Shift-invariant softmax.
  double max_logit = logits.maxCoeff();
  Eigen::VectorXd weights = (logits.array() - max_logit).exp();
  weights /= weights.sum();
  return retrieved.transpose() * weights;
}

}  // namespace credscore
