#ifndef CREDSCORE_INGEST_HPP
#define CREDSCORE_INGEST_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credscore/common.hpp"

namespace credscore {

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source_path;
  std::string content_hash;  // hex digest of the raw bytes
};

struct SchemaMap {
  std::string firm_id_col;
  std::string agency_col;
  std::string rating_col;
  std::string date_col;
  std::vector<std::string> numeric_feature_cols;
  std::vector<std::string> categorical_feature_cols;
  std::string date_format = "%Y-%m-%d";

  static SchemaMap from_json_file(const std::string& path);
  static SchemaMap from_json_text(const std::string& text);
};

struct ObservationSet {
  struct Record {
    std::string firm_id;
    std::string agency;
    std::string rating;
    Date period;
    bool period_valid = false;
    std::vector<double> numeric;  // NaN marks a missing cell
    std::vector<std::optional<std::string>> categorical;
  };
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<Record> records;
  std::string content_hash;  // inherited from the raw table

  int numeric_index(const std::string& name) const;  // -1 when absent
};

struct FeatureSummary {
  std::size_t n_present = 0;
  double mean = 0, median = 0, stddev = 0, skewness = 0, q01 = 0, q99 = 0;
  double missing_fraction = 0;
  bool defined = false;  // false when zero non-missing values
};

struct SummaryReport {
  std::size_t n_obs = 0, n_firms = 0, n_agencies = 0;
  Date min_date, max_date;
  std::vector<std::pair<std::string, FeatureSummary>> features;
  double overall_missing_fraction = 0;

  std::string to_json() const;
  std::string to_text_table() const;
};

RawTable load_table(const std::string& path, char delimiter = ',');
RawTable parse_table(const std::string& bytes, const std::string& source_path, char delimiter);
ObservationSet bind_schema(const RawTable& table, const SchemaMap& schema);
SummaryReport summarize(const ObservationSet& obs);

// Statistics helpers shared with other modules.
double quantile_linear(std::vector<double> sorted_ascending_copy, double q);
double sample_skewness_adjusted(const std::vector<double>& values);

bool parse_date(const std::string& text, const std::string& format, Date* out);
std::string normalize_rating(const std::string& raw);

}  // namespace credscore

#endif
