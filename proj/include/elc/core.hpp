#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace elc {

using ClassId = std::uint32_t;
using Index = std::size_t;

// Error categories double as CLI exit codes.
enum class ErrorKind : int {
  usage = 2,
  io = 3,
  format = 4,
  data = 5,
  numerical = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// N x D row-major embedding. Entries are always finite.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  FeatureMatrix(std::size_t n_samples, std::size_t dim)
      : n_(n_samples), d_(dim), data_(n_samples * dim, 0.0) {}

  FeatureMatrix(std::size_t n_samples, std::size_t dim, std::vector<double> data)
      : n_(n_samples), d_(dim), data_(std::move(data)) {
    if (data_.size() != n_ * d_)
      throw Error(ErrorKind::data, "feature matrix: data size does not match shape");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw Error(ErrorKind::data, "feature matrix: non-finite entry at row " +
                                         std::to_string(i / d_) + ", column " +
                                         std::to_string(i % d_));
    }
  }

  std::size_t rows() const noexcept { return n_; }
  std::size_t cols() const noexcept { return d_; }
  bool empty() const noexcept { return n_ == 0; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * d_, d_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * d_, d_}; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * d_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * d_ + j]; }

  const std::vector<double>& data() const noexcept { return data_; }

  FeatureMatrix select_rows(std::span<const Index> rows) const {
    FeatureMatrix out(rows.size(), d_);
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(data_.data() + rows[r] * d_, d_, out.data_.data() + r * d_);
    return out;
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> data_;
};

// Noisy labels, the current corrected labels and their normalized confidence.
struct LabelState {
  std::vector<ClassId> noisy;
  std::vector<ClassId> corrected;
  std::vector<double> confidence;
  std::size_t n_classes = 0;

  // Bootstrap state: corrected = noisy, full confidence.
  static LabelState initial(std::vector<ClassId> noisy_labels, std::size_t n_classes) {
    LabelState s;
    s.corrected = noisy_labels;
    s.confidence.assign(noisy_labels.size(), 1.0);
    s.noisy = std::move(noisy_labels);
    s.n_classes = n_classes;
    s.validate();
    return s;
  }

  std::size_t size() const noexcept { return noisy.size(); }

  void validate() const {
    if (corrected.size() != noisy.size() || confidence.size() != noisy.size())
      throw Error(ErrorKind::data, "label state: inconsistent lengths");
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      if (noisy[i] >= n_classes || corrected[i] >= n_classes)
        throw Error(ErrorKind::data, "label state: class id out of range at " + std::to_string(i));
      if (!(confidence[i] >= 0.0 && confidence[i] <= 1.0))
        throw Error(ErrorKind::data, "label state: confidence outside [0,1] at " + std::to_string(i));
    }
  }

  friend bool operator==(const LabelState&, const LabelState&) = default;
};

struct SampleRecord {
  Index index = 0;
  ClassId noisy = 0;
  ClassId corrected = 0;
  double confidence = 0.0;
  bool changed = false;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct ReportSummary {
  std::size_t n_changed = 0;
  double mean_confidence = 0.0;
  std::optional<double> correction_accuracy;
  std::optional<double> residual_noise;

  friend bool operator==(const ReportSummary&, const ReportSummary&) = default;
};

struct CorrectionReport {
  std::size_t epoch = 0;
  std::size_t n_classes = 0;
  std::size_t n_branches = 0;
  std::size_t packages_per_class_per_branch = 0;
  std::vector<SampleRecord> records;
  ReportSummary summary;

  friend bool operator==(const CorrectionReport&, const CorrectionReport&) = default;
};

inline CorrectionReport make_report(const LabelState& state, std::size_t epoch,
                                    std::size_t n_branches, std::size_t packages) {
  CorrectionReport r;
  r.epoch = epoch;
  r.n_classes = state.n_classes;
  r.n_branches = n_branches;
  r.packages_per_class_per_branch = packages;
  r.records.reserve(state.size());
  double conf_sum = 0.0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const bool changed = state.corrected[i] != state.noisy[i];
    r.records.push_back({i, state.noisy[i], state.corrected[i], state.confidence[i], changed});
    r.summary.n_changed += changed ? 1 : 0;
    conf_sum += state.confidence[i];
  }
  r.summary.mean_confidence = state.size() ? conf_sum / static_cast<double>(state.size()) : 0.0;
  return r;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline constexpr std::array<char, 4> kFeatureMagic{'M', 'L', 'C', 'F'};
inline constexpr std::size_t kFeatureHeaderBytes = 16;

// Binary feature layout: "MLCF", u32 n, u32 d, u32 reserved (0), then n*d
// little-endian float32 values, row-major.
inline void write_features(std::ostream& os, const FeatureMatrix& m) {
  static_assert(std::numeric_limits<float>::is_iec559);
  os.write(kFeatureMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(os, static_cast<std::uint32_t>(m.cols()));
  detail::put_u32(os, 0);
  for (double v : m.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline void save_features(const std::string& path, const FeatureMatrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  write_features(os, m);
  if (!os) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

// Parses a feature payload; offset is the byte position of `bytes[0]` in
// the enclosing file and is used only for diagnostics.
inline FeatureMatrix parse_features(std::span<const unsigned char> bytes, std::size_t offset = 0) {
  if (bytes.size() < kFeatureHeaderBytes)
    throw Error(ErrorKind::format, "truncated feature header at byte " +
                                       std::to_string(offset + bytes.size()));
  if (!std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin(),
                  [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; }))
    throw Error(ErrorKind::format, "bad magic at byte " + std::to_string(offset) +
                                       " (expected \"MLCF\")");
  const std::uint32_t n = detail::get_u32(bytes.data() + 4);
  const std::uint32_t d = detail::get_u32(bytes.data() + 8);
  if (n == 0 || d == 0)
    throw Error(ErrorKind::format, "empty feature shape " + std::to_string(n) + "x" +
                                       std::to_string(d) + " at byte " + std::to_string(offset + 4));
  const std::size_t count = static_cast<std::size_t>(n) * d;
  const std::size_t need = kFeatureHeaderBytes + count * 4;
  if (bytes.size() < need)
    throw Error(ErrorKind::format, "truncated payload: expected " + std::to_string(need) +
                                       " bytes, file ends at byte " +
                                       std::to_string(offset + bytes.size()));
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kFeatureHeaderBytes + i * 4;
    const float v = std::bit_cast<float>(detail::get_u32(bytes.data() + at));
    if (!std::isfinite(v))
      throw Error(ErrorKind::format, "non-finite feature value at byte " + std::to_string(offset + at));
    data[i] = v;
  }
  return FeatureMatrix(n, d, std::move(data));
}

inline FeatureMatrix load_features(const std::string& path) {
  const auto bytes = detail::read_all(path);
  return parse_features(bytes);
}

struct LabelTable {
  std::vector<ClassId> labels;
  std::optional<std::vector<ClassId>> clean;  // evaluation-only second column
};

// One row per sample: "label" or "label,clean_label". Blank lines and lines
// starting with '#' are skipped.
inline LabelTable parse_labels(std::istream& in, std::size_t n_classes) {
  LabelTable t;
  std::string line;
  std::size_t row = 0;
  bool has_clean = false;
  std::vector<ClassId> clean;
  auto parse_id = [&](std::string_view tok, std::size_t line_no) -> ClassId {
    const std::string s = detail::trim(tok);
    long long v = -1;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
      throw Error(ErrorKind::format, "labels: malformed integer '" + s + "' on row " + std::to_string(line_no));
    if (v < 0 || static_cast<unsigned long long>(v) >= n_classes)
      throw Error(ErrorKind::data, "labels: label " + std::to_string(v) + " out of range [0," +
                                       std::to_string(n_classes) + ") on row " + std::to_string(line_no));
    return static_cast<ClassId>(v);
  };
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto comma = s.find(',');
    if (comma == std::string::npos) {
      if (row > 0 && has_clean)
        throw Error(ErrorKind::format, "labels: missing clean column on row " + std::to_string(line_no));
      t.labels.push_back(parse_id(s, line_no));
    } else {
      if (row > 0 && !has_clean)
        throw Error(ErrorKind::format, "labels: unexpected second column on row " + std::to_string(line_no));
      has_clean = true;
      t.labels.push_back(parse_id(std::string_view(s).substr(0, comma), line_no));
      clean.push_back(parse_id(std::string_view(s).substr(comma + 1), line_no));
    }
    ++row;
  }
  if (has_clean) t.clean = std::move(clean);
  return t;
}

inline LabelTable load_label_table(const std::string& path, std::size_t n_classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return parse_labels(in, n_classes);
}

inline std::vector<ClassId> load_labels(const std::string& path, std::size_t n_classes) {
  return load_label_table(path, n_classes).labels;
}

inline void check_pairing(const FeatureMatrix& features, std::span<const ClassId> labels) {
  if (features.rows() != labels.size())
    throw Error(ErrorKind::data, "feature/label row count mismatch: " + std::to_string(features.rows()) +
                                     " feature rows vs " + std::to_string(labels.size()) + " labels");
}

inline void save_labels(const std::string& path, std::span<const ClassId> labels,
                        std::span<const ClassId> clean = {}) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << labels[i];
    if (!clean.empty()) os << ',' << clean[i];
    os << '\n';
  }
  if (!os) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

// Fixed 9 significant digits; falls back to 17 when 9 do not round-trip.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.9g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%#.17g", v);
  return buf;
}

inline double parse_real(std::string_view s) {
  const std::string str(s);
  char* end = nullptr;
  const double v = std::strtod(str.c_str(), &end);
  if (end == str.c_str() || *end != '\0')
    throw Error(ErrorKind::format, "malformed real '" + str + "'");
  return v;
}

inline nlohmann::ordered_json summary_json(const ReportSummary& s) {
  nlohmann::ordered_json j;
  j["n_changed"] = s.n_changed;
  j["mean_confidence"] = s.mean_confidence;
  if (s.correction_accuracy) j["correction_accuracy"] = *s.correction_accuracy;
  if (s.residual_noise) j["residual_noise"] = *s.residual_noise;
  return j;
}

// Report text layout:
//   # elc correction report
//   epoch <l>
//   n_samples <n>
//   n_classes <C>
//   n_branches <M>
//   packages_per_class_per_branch <B>
//   records index noisy corrected confidence changed
//   <index> <noisy> <corrected> <confidence> <0|1>   (n lines)
//   end_records
//   summary <json object on one line>
inline void write_report(std::ostream& os, const CorrectionReport& r) {
  os << "# elc correction report\n";
  os << "epoch " << r.epoch << '\n';
  os << "n_samples " << r.records.size() << '\n';
  os << "n_classes " << r.n_classes << '\n';
  os << "n_branches " << r.n_branches << '\n';
  os << "packages_per_class_per_branch " << r.packages_per_class_per_branch << '\n';
  os << "records index noisy corrected confidence changed\n";
  for (const auto& rec : r.records)
    os << rec.index << ' ' << rec.noisy << ' ' << rec.corrected << ' ' << format_real(rec.confidence)
       << ' ' << (rec.changed ? 1 : 0) << '\n';
  os << "end_records\n";
  os << "summary " << summary_json(r.summary).dump() << '\n';
}

inline void save_report(const std::string& path, const CorrectionReport& r) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  write_report(os, r);
  if (!os) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

inline CorrectionReport read_report(std::istream& in) {
  CorrectionReport r;
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.front() != '#') return line;
    }
    throw Error(ErrorKind::format, "report: unexpected end of input after line " + std::to_string(line_no));
  };
  auto keyed = [&](std::string_view key) -> std::size_t {
    const std::string l = next();
    std::istringstream ss(l);
    std::string k;
    std::size_t v = 0;
    if (!(ss >> k >> v) || k != key)
      throw Error(ErrorKind::format, "report: expected '" + std::string(key) + "' on line " + std::to_string(line_no));
    return v;
  };
  r.epoch = keyed("epoch");
  const std::size_t n = keyed("n_samples");
  r.n_classes = keyed("n_classes");
  r.n_branches = keyed("n_branches");
  r.packages_per_class_per_branch = keyed("packages_per_class_per_branch");
  if (next().rfind("records", 0) != 0)
    throw Error(ErrorKind::format, "report: missing records header on line " + std::to_string(line_no));
  r.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ss(next());
    SampleRecord rec;
    std::string conf;
    int changed = 0;
    if (!(ss >> rec.index >> rec.noisy >> rec.corrected >> conf >> changed))
      throw Error(ErrorKind::format, "report: malformed record on line " + std::to_string(line_no));
    rec.confidence = parse_real(conf);
    rec.changed = changed != 0;
    r.records.push_back(rec);
  }
  if (next() != "end_records")
    throw Error(ErrorKind::format, "report: expected end_records on line " + std::to_string(line_no));
  const std::string s = next();
  if (s.rfind("summary ", 0) != 0)
    throw Error(ErrorKind::format, "report: expected summary on line " + std::to_string(line_no));
  try {
    const auto j = nlohmann::json::parse(s.substr(8));
    r.summary.n_changed = j.at("n_changed").get<std::size_t>();
    r.summary.mean_confidence = j.at("mean_confidence").get<double>();
    if (j.contains("correction_accuracy")) r.summary.correction_accuracy = j["correction_accuracy"].get<double>();
    if (j.contains("residual_noise")) r.summary.residual_noise = j["residual_noise"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("report: bad summary block: ") + e.what());
  }
  return r;
}

inline CorrectionReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return read_report(in);
}

}  // namespace elc
