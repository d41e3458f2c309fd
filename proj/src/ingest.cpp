#include "credscore/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace credscore {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string Date::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == delim) {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

bool is_missing_sentinel(const std::string& cell) {
  std::string t = trim(cell);
  if (t.empty()) return true;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  return t == "na" || t == "nan" || t == "null";
}

}  // namespace

RawTable parse_table(const std::string& bytes, const std::string& source_path, char delimiter) {
  if (bytes.empty()) throw Error("empty file: " + source_path);
  RawTable table;
  table.source_path = source_path;
  table.content_hash = hex64(fnv1a64(bytes));

  std::istringstream in(bytes);
  std::string line;
  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row_index == 0) {
      table.header = split_line(line, delimiter);
      for (auto& h : table.header) h = trim(h);
    } else {
      auto cells = split_line(line, delimiter);
      if (cells.size() != table.header.size()) {
        throw Error("ragged row " + std::to_string(row_index) + " in " + source_path + ": " +
                    std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(cells));
    }
    ++row_index;
  }
  if (table.header.empty()) throw Error("empty file: " + source_path);
  return table;
}

RawTable load_table(const std::string& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str(), path, delimiter);
}

SchemaMap SchemaMap::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SchemaMap s;
  s.firm_id_col = j.at("firm_id_col").get<std::string>();
  s.agency_col = j.at("agency_col").get<std::string>();
  s.rating_col = j.at("rating_col").get<std::string>();
  s.date_col = j.at("date_col").get<std::string>();
  s.numeric_feature_cols = j.at("numeric_feature_cols").get<std::vector<std::string>>();
  s.categorical_feature_cols = j.at("categorical_feature_cols").get<std::vector<std::string>>();
  if (j.contains("date_format")) s.date_format = j.at("date_format").get<std::string>();
  return s;
}

SchemaMap SchemaMap::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read schema file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

bool parse_date(const std::string& text, const std::string& format, Date* out) {
  // Supports the %Y/%m/%d directives with literal separators.
  const std::string t = trim(text);
  std::size_t ti = 0;
  Date d;
  bool saw_year = false;
  for (std::size_t fi = 0; fi < format.size(); ++fi) {
    if (format[fi] == '%' && fi + 1 < format.size()) {
      char spec = format[++fi];
      std::size_t width = (spec == 'Y') ? 4 : 2;
      // Accept 1- or 2-digit month/day.
      std::size_t start = ti;
      std::size_t end = start;
      while (end < t.size() && end - start < width && std::isdigit(static_cast<unsigned char>(t[end])))
        ++end;
      if (end == start) return false;
      int value = std::stoi(t.substr(start, end - start));
      ti = end;
      switch (spec) {
        case 'Y': d.year = value; saw_year = true; break;
        case 'm': d.month = value; break;
        case 'd': d.day = value; break;
        default: return false;
      }
    } else {
      if (ti >= t.size() || t[ti] != format[fi]) return false;
      ++ti;
    }
  }
  if (ti != t.size() || !saw_year) return false;
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) return false;
  *out = d;
  return true;
}

std::string normalize_rating(const std::string& raw) {
  std::string t = trim(raw);
  // Unicode minus / en-dash variants collapse to ASCII '-'.
  std::string out;
  for (std::size_t i = 0; i < t.size();) {
    if (t.compare(i, 3, "−") == 0 || t.compare(i, 3, "–") == 0) {
      out += '-';
      i += 3;
    } else {
      out += static_cast<char>(std::toupper(static_cast<unsigned char>(t[i])));
      ++i;
    }
  }
  return out;
}

int ObservationSet::numeric_index(const std::string& name) const {
  auto it = std::find(numeric_names.begin(), numeric_names.end(), name);
  return it == numeric_names.end() ? -1 : static_cast<int>(it - numeric_names.begin());
}

ObservationSet bind_schema(const RawTable& table, const SchemaMap& schema) {
  auto col_index = [&](const std::string& name) {
    auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) throw Error("schema column not found in header: " + name);
    return static_cast<std::size_t>(it - table.header.begin());
  };

  std::size_t firm_c = col_index(schema.firm_id_col);
  std::size_t agency_c = col_index(schema.agency_col);
  std::size_t rating_c = col_index(schema.rating_col);
  std::size_t date_c = col_index(schema.date_col);
  std::vector<std::size_t> num_c, cat_c;
  for (const auto& n : schema.numeric_feature_cols) num_c.push_back(col_index(n));
  for (const auto& n : schema.categorical_feature_cols) cat_c.push_back(col_index(n));

  ObservationSet obs;
  obs.numeric_names = schema.numeric_feature_cols;
  obs.categorical_names = schema.categorical_feature_cols;
  obs.content_hash = table.content_hash;
  obs.records.reserve(table.rows.size());

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    ObservationSet::Record rec;
    rec.firm_id = trim(row[firm_c]);
    rec.agency = trim(row[agency_c]);
    rec.rating = is_missing_sentinel(row[rating_c]) ? "" : normalize_rating(row[rating_c]);
    const std::string& date_cell = row[date_c];
    if (is_missing_sentinel(date_cell)) {
      rec.period_valid = false;
    } else {
      // tolerate bad dates; the fold planner excludes and reports these rows
      rec.period_valid = parse_date(date_cell, schema.date_format, &rec.period);
    }
    rec.numeric.reserve(num_c.size());
    for (std::size_t c : num_c) {
      const std::string cell = trim(row[c]);
      if (is_missing_sentinel(cell)) {
        rec.numeric.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        try {
          std::size_t pos = 0;
          double v = std::stod(cell, &pos);
          if (pos != cell.size()) throw std::invalid_argument(cell);
          rec.numeric.push_back(v);
        } catch (const std::exception&) {
          rec.numeric.push_back(std::numeric_limits<double>::quiet_NaN());
        }
      }
    }
    rec.categorical.reserve(cat_c.size());
    for (std::size_t c : cat_c) {
      const std::string cell = trim(row[c]);
      if (is_missing_sentinel(cell))
        rec.categorical.push_back(std::nullopt);
      else
        rec.categorical.push_back(cell);
    }
    obs.records.push_back(std::move(rec));
  }
  return obs;
}

double quantile_linear(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double sample_skewness_adjusted(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 3) return 0.0;
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double m2 = 0, m3 = 0;
  for (double v : values) {
    double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  if (m2 <= 0) return 0.0;
  double g1 = m3 / std::pow(m2, 1.5);
  double nn = static_cast<double>(n);
  return g1 * std::sqrt(nn * (nn - 1.0)) / (nn - 2.0);
}

SummaryReport summarize(const ObservationSet& obs) {
  if (obs.records.empty()) throw Error("summarize: empty observation set");

  SummaryReport rep;
  rep.n_obs = obs.records.size();
  std::set<std::string> firms, agencies;
  bool have_date = false;
  for (const auto& r : obs.records) {
    firms.insert(r.firm_id);
    agencies.insert(r.agency);
    if (r.period_valid) {
      if (!have_date) {
        rep.min_date = rep.max_date = r.period;
        have_date = true;
      } else {
        rep.min_date = std::min(rep.min_date, r.period);
        rep.max_date = std::max(rep.max_date, r.period);
      }
    }
  }
  rep.n_firms = firms.size();
  rep.n_agencies = agencies.size();

  std::size_t missing_cells = 0, total_cells = 0;
  for (std::size_t f = 0; f < obs.numeric_names.size(); ++f) {
    std::vector<double> present;
    present.reserve(obs.records.size());
    for (const auto& r : obs.records) {
      if (!std::isnan(r.numeric[f])) present.push_back(r.numeric[f]);
    }
    FeatureSummary fs;
    fs.n_present = present.size();
    fs.missing_fraction =
        1.0 - static_cast<double>(present.size()) / static_cast<double>(obs.records.size());
    missing_cells += obs.records.size() - present.size();
    total_cells += obs.records.size();
    if (!present.empty()) {
      fs.defined = true;
      double mean = std::accumulate(present.begin(), present.end(), 0.0) /
                    static_cast<double>(present.size());
      fs.mean = mean;
      double ss = 0;
      for (double v : present) ss += (v - mean) * (v - mean);
      fs.stddev = present.size() > 1 ? std::sqrt(ss / static_cast<double>(present.size() - 1)) : 0.0;
      fs.median = quantile_linear(present, 0.5);
      fs.q01 = quantile_linear(present, 0.01);
      fs.q99 = quantile_linear(present, 0.99);
      fs.skewness = sample_skewness_adjusted(present);
    }
    rep.features.emplace_back(obs.numeric_names[f], fs);
  }
  // Categorical columns count toward overall missingness too.
  for (std::size_t f = 0; f < obs.categorical_names.size(); ++f) {
    for (const auto& r : obs.records) {
      ++total_cells;
      if (!r.categorical[f].has_value()) ++missing_cells;
    }
  }
  rep.overall_missing_fraction =
      total_cells == 0 ? 0.0 : static_cast<double>(missing_cells) / static_cast<double>(total_cells);
  return rep;
}

std::string SummaryReport::to_json() const {
  nlohmann::json j;
  j["n_obs"] = n_obs;
  j["n_firms"] = n_firms;
  j["n_agencies"] = n_agencies;
  j["time_span"] = {min_date.to_string(), max_date.to_string()};
  j["overall_missing_fraction"] = overall_missing_fraction;
  nlohmann::json feats = nlohmann::json::object();
  for (const auto& [name, fs] : features) {
    nlohmann::json f;
    f["missing_fraction"] = fs.missing_fraction;
    if (fs.defined) {
      f["mean"] = fs.mean;
      f["median"] = fs.median;
      f["std"] = fs.stddev;
      f["skewness"] = fs.skewness;
      f["q01"] = fs.q01;
      f["q99"] = fs.q99;
    } else {
      f["undefined"] = true;
    }
    feats[name] = f;
  }
  j["features"] = feats;
  return j.dump(2);
}

std::string SummaryReport::to_text_table() const {
  std::ostringstream out;
  auto line = [&](const std::string& k, const std::string& v) {
    out << k;
    for (std::size_t i = k.size(); i < 32; ++i) out << ' ';
    out << v << "\n";
  };
  out << "Dataset summary\n";
  out << std::string(48, '-') << "\n";
  line("Total observations", std::to_string(n_obs));
  line("Unique firms", std::to_string(n_firms));
  line("Rating agencies", std::to_string(n_agencies));
  line("Time span", min_date.to_string() + " to " + max_date.to_string());
  line("Numerical features", std::to_string(features.size()));
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f percent", overall_missing_fraction * 100.0);
    line("Percentage missing overall", buf);
  }
  out << std::string(48, '-') << "\n";
  return out.str();
}

}  // namespace credscore
