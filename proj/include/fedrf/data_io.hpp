#pragma once

// Domain datasets, matrix files (CSV and binary), synthetic shifted-Gaussian
// domains and the per-round metrics stream.

#include "fedrf/core.hpp"
#include "fedrf/kernel_rff.hpp"
#include "fedrf/random.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace fedrf {

enum class Split : std::uint8_t { train = 0, test = 1 };

/// One domain's samples. A target domain keeps its labels out of `labels`;
/// they are only reachable through evaluation_labels().
class DomainDataset {
 public:
  FeatureMatrix features;
  std::vector<int> labels;  // empty for an unlabelled domain
  std::string name;
  std::vector<Split> split;

  Index samples() const noexcept { return features.samples(); }
  bool labelled() const noexcept { return !labels.empty(); }

  /// Moves the labels behind the evaluation accessor.
  void hide_labels() {
    hidden_ = std::move(labels);
    labels.clear();
  }

  const std::vector<int>& evaluation_labels() const { return labelled() ? labels : hidden_; }

  std::vector<Index> indices(Split which) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == which) out.push_back(static_cast<Index>(i));
    }
    return out;
  }

  void validate(Index classes) const {
    const Index n = samples();
    if (!labels.empty()) require_shape(static_cast<Index>(labels.size()) == n, "DomainDataset: label count mismatch");
    if (!hidden_.empty()) require_shape(static_cast<Index>(hidden_.size()) == n, "DomainDataset: label count mismatch");
    require_shape(static_cast<Index>(split.size()) == n, "DomainDataset: split marker count mismatch");
    for (int y : evaluation_labels()) {
      if (y < 0 || y >= classes) throw InvalidInputError("DomainDataset: label out of range in " + name);
    }
    require_finite(features.data, "DomainDataset");
  }

 private:
  std::vector<int> hidden_;
};

enum class MatrixFormat { csv, binary };

/// Samples as rows in files, as columns in memory.
struct MatrixFile {
  FeatureMatrix features;
  std::vector<int> labels;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw ParseError("csv: cannot parse '" + std::string(s) + "' on line " + std::to_string(line), line);
  }
  if (!std::isfinite(v)) throw ParseError("csv: non-finite value on line " + std::to_string(line), line);
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline constexpr char kBinaryMagic[8] = {'F', 'E', 'D', 'R', 'F', 'M', 'A', 'T'};
inline constexpr std::uint32_t kBinaryVersion = 1;

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "binary matrix IO assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& is, std::size_t& offset) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ParseError("binary: truncated file at byte " + std::to_string(offset), offset);
  }
  offset += sizeof(T);
  return value;
}

}  // namespace detail

inline void save_matrix(const std::string& path, const MatrixFile& file, MatrixFormat format) {
  const Matrix& x = file.features.data;
  const bool with_labels = !file.labels.empty();
  if (with_labels) require_shape(static_cast<Index>(file.labels.size()) == x.cols(), "save_matrix: label count mismatch");
  require_finite(x, "save_matrix");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInputError("save_matrix: cannot open " + path);
  if (format == MatrixFormat::csv) {
    for (Index j = 0; j < x.rows(); ++j) os << (j ? "," : "") << 'f' << j;
    if (with_labels) os << (x.rows() ? "," : "") << "label";
    os << '\n';
    for (Index i = 0; i < x.cols(); ++i) {
      for (Index j = 0; j < x.rows(); ++j) os << (j ? "," : "") << detail::format_double(x(j, i));
      if (with_labels) os << (x.rows() ? "," : "") << file.labels[static_cast<std::size_t>(i)];
      os << '\n';
    }
  } else {
    if (with_labels) throw FormatError("save_matrix: the binary format carries no labels");
    os.write(detail::kBinaryMagic, sizeof(detail::kBinaryMagic));
    detail::write_le<std::uint32_t>(os, detail::kBinaryVersion);
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(x.cols()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(x.rows()));
    for (Index i = 0; i < x.cols(); ++i)
      for (Index j = 0; j < x.rows(); ++j) detail::write_le<double>(os, x(j, i));
  }
  if (!os) throw InvalidInputError("save_matrix: write failed for " + path);
}

inline MatrixFile load_matrix(const std::string& path, MatrixFormat format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("load_matrix: cannot open " + path);
  MatrixFile out;
  out.features.domain_tag = path;
  if (format == MatrixFormat::csv) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("csv: missing header", 1);
    const auto header = detail::split_commas(line);
    bool with_labels = !header.empty() && header.back() == "label";
    const std::size_t p = header.size() - (with_labels ? 1 : 0);
    for (std::size_t j = 0; j < p; ++j) {
      if (header[j] != "f" + std::to_string(j)) {
        throw ParseError("csv: header column " + std::to_string(j) + " must be f" + std::to_string(j), 1);
      }
    }
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = detail::split_commas(line);
      if (cells.size() != header.size()) {
        throw ParseError("csv: row on line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                             " fields, expected " + std::to_string(header.size()),
                         line_no);
      }
      for (std::size_t j = 0; j < p; ++j) values.push_back(detail::parse_double(cells[j], line_no));
      if (with_labels) {
        int y = 0;
        const auto cell = cells.back();
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || y < 0) {
          throw ParseError("csv: bad label on line " + std::to_string(line_no), line_no);
        }
        out.labels.push_back(y);
      }
    }
    const auto n = static_cast<Index>(p == 0 ? out.labels.size() : values.size() / p);
    out.features.data = Eigen::Map<const Matrix>(values.data(), static_cast<Index>(p), n);
    return out;
  }

  std::size_t offset = 0;
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kBinaryMagic, sizeof(magic)) != 0) {
    throw FormatError("binary: bad magic in " + path);
  }
  offset += sizeof(magic);
  const auto version = detail::read_le<std::uint32_t>(is, offset);
  if (version != detail::kBinaryVersion) throw FormatError("binary: unsupported version " + std::to_string(version));
  const auto rows = detail::read_le<std::uint64_t>(is, offset);
  const auto cols = detail::read_le<std::uint64_t>(is, offset);
  out.features.data.resize(static_cast<Index>(cols), static_cast<Index>(rows));
  for (std::uint64_t i = 0; i < rows; ++i) {
    for (std::uint64_t j = 0; j < cols; ++j) {
      const std::size_t at = offset;
      const double v = detail::read_le<double>(is, offset);
      if (!std::isfinite(v)) throw ParseError("binary: non-finite value at byte " + std::to_string(at), at);
      out.features.data(static_cast<Index>(j), static_cast<Index>(i)) = v;
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("binary: trailing bytes after payload");
  return out;
}

/// Scales every column (sample) to unit Euclidean norm.
inline Matrix unit_normalize(const Matrix& x) {
  Matrix out = x;
  for (Index j = 0; j < x.cols(); ++j) {
    const double norm = x.col(j).norm();
    if (!(norm > 0.0)) throw InvalidInputError("unit_normalize: column " + std::to_string(j) + " has zero norm");
    out.col(j) /= norm;
  }
  return out;
}

/// Gaussian class clusters. Sources get `source_severity` of the target's
/// shift and rotation, each in its own random direction.
struct SynthSpec {
  std::size_t classes = 4;
  std::size_t dim = 10;
  std::size_t sources = 3;
  double shift = 1.0;       // target mean shift, absolute
  double rotation = 0.0;    // target rotation in the (f0, f1) plane, radians
  double separation = 4.0;  // typical distance between class means, in cluster sigmas
  double cluster_sigma = 0.2;
  double source_severity = 0.1;
  std::size_t samples_per_domain = 400;
  double test_fraction = 0.2;  // held-out share of each source
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw InvalidInputError("SynthSpec: need at least two classes");
    if (dim < 2) throw InvalidInputError("SynthSpec: dim must be >= 2");
    if (sources < 1) throw InvalidInputError("SynthSpec: need at least one source");
    if (samples_per_domain < classes) throw InvalidInputError("SynthSpec: fewer samples than classes");
    if (!(shift >= 0.0) || !std::isfinite(rotation) || !(separation > 0.0) || !(cluster_sigma > 0.0)) {
      throw InvalidInputError("SynthSpec: shift >= 0, separation > 0 and cluster_sigma > 0 required");
    }
    if (!(source_severity >= 0.0 && source_severity <= 1.0)) {
      throw InvalidInputError("SynthSpec: source_severity must be in [0, 1]");
    }
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InvalidInputError("SynthSpec: test_fraction in [0, 1)");
  }
};

/// K sources followed by the target, whose labels are hidden.
inline std::vector<DomainDataset> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const auto p = static_cast<Index>(spec.dim);
  const auto c = static_cast<Index>(spec.classes);
  const double sig = spec.cluster_sigma;

  auto unit = [p](rng::CounterRng& gen) {
    Vector v(p);
    for (Index i = 0; i < p; ++i) v(i) = gen.normal();
    return Vector(v / v.norm());
  };

  rng::CounterRng layout(spec.seed, "synth-layout", {spec.classes, spec.dim});
  Matrix means(p, c);
  for (Index k = 0; k < c; ++k) means.col(k) = unit(layout) * (spec.separation * sig / std::sqrt(2.0));
  const Vector centroid = means.rowwise().mean();
  const Matrix offsets = means.colwise() - centroid;

  // Class shares 1 : 2 : ... : c, so no relabelling of a shifted domain
  // reproduces the marginal of another.
  std::vector<std::size_t> counts(spec.classes);
  const double total_weight = static_cast<double>(spec.classes * (spec.classes + 1)) / 2.0;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    counts[k] = static_cast<std::size_t>(std::floor(static_cast<double>(spec.samples_per_domain) *
                                                    static_cast<double>(k + 1) / total_weight));
    assigned += counts[k];
  }
  counts.back() += spec.samples_per_domain - assigned;

  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d <= spec.sources; ++d) {
    const bool target = d == spec.sources;
    const double severity = target ? 1.0 : spec.source_severity;
    rng::CounterRng gen(spec.seed, "synth-domain", {d});
    Vector coeff(c);
    for (Index k = 0; k < c; ++k) coeff(k) = gen.normal();
    Vector dir = offsets * coeff;
    if (dir.norm() < 1e-12) dir = unit(gen);
    dir.normalize();
    const Vector shift = dir * (spec.shift * severity);
    const double angle = spec.rotation * severity;
    Matrix rot = Matrix::Identity(p, p);
    rot(0, 0) = std::cos(angle);
    rot(0, 1) = -std::sin(angle);
    rot(1, 0) = std::sin(angle);
    rot(1, 1) = std::cos(angle);

    std::vector<int> labels;
    for (std::size_t k = 0; k < spec.classes; ++k) labels.insert(labels.end(), counts[k], static_cast<int>(k));
    gen.shuffle(labels);
    const auto n = static_cast<Index>(labels.size());
    Matrix x(p, n);
    for (Index j = 0; j < n; ++j) {
      Vector z(p);
      for (Index i = 0; i < p; ++i) z(i) = gen.normal();
      x.col(j) = rot * (means.col(labels[static_cast<std::size_t>(j)]) + sig * z) + shift;
    }

    DomainDataset ds;
    ds.name = target ? "target" : "source" + std::to_string(d + 1);
    ds.features = {std::move(x), ds.name};
    ds.labels = std::move(labels);
    ds.split.assign(static_cast<std::size_t>(n), Split::train);
    if (!target) {
      const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(n)));
      for (std::size_t j = 0; j < n_test; ++j) ds.split[static_cast<std::size_t>(n) - 1 - j] = Split::test;
    } else {
      ds.hide_labels();
    }
    out.push_back(std::move(ds));
  }
  return out;
}

/// Columns of `x` selected by `idx`.
inline Matrix select_columns(const Matrix& x, const std::vector<Index>& idx) {
  Matrix out(x.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = x.col(idx[j]);
  return out;
}

inline std::vector<int> select_labels(const std::vector<int>& y, const std::vector<Index>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(y[static_cast<std::size_t>(i)]);
  return out;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  require_shape(predicted.size() == truth.size() && !truth.empty(), "accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct RoundMetrics {
  std::uint32_t round = 0;
  std::size_t participant_count = 0;
  double mmd_loss = 0.0;
  double classif_loss = 0.0;
  double target_accuracy = 0.0;
  std::size_t volume_sent = 0;
  std::size_t volume_delivered = 0;

  bool operator==(const RoundMetrics&) const = default;
};

inline constexpr const char* kMetricsSchema = "fedrf-metrics";
inline constexpr int kMetricsVersion = 1;

/// One JSON object per line: a header record, then one record per round.
inline void write_metrics(std::ostream& os, const std::vector<RoundMetrics>& trace) {
  nlohmann::ordered_json header{{"schema", kMetricsSchema},
                                {"version", kMetricsVersion},
                                {"fields",
                                 {"round", "participant_count", "mmd_loss", "classif_loss", "target_accuracy",
                                  "volume_sent", "volume_delivered"}},
                                {"records", trace.size()}};
  os << header.dump() << '\n';
  for (const auto& r : trace) {
    nlohmann::ordered_json rec{{"round", r.round},
                               {"participant_count", r.participant_count},
                               {"mmd_loss", r.mmd_loss},
                               {"classif_loss", r.classif_loss},
                               {"target_accuracy", r.target_accuracy},
                               {"volume_sent", r.volume_sent},
                               {"volume_delivered", r.volume_delivered}};
    os << rec.dump() << '\n';
  }
}

inline std::string metrics_to_string(const std::vector<RoundMetrics>& trace) {
  std::ostringstream os;
  write_metrics(os, trace);
  return os.str();
}

inline void save_metrics(const std::vector<RoundMetrics>& trace, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInputError("save_metrics: cannot open " + path);
  write_metrics(os, trace);
  if (!os) throw InvalidInputError("save_metrics: write failed for " + path);
}

inline std::vector<RoundMetrics> read_metrics(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("metrics: missing header record", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics: bad header: ") + e.what(), 1);
  }
  if (!header.is_object() || header.value("schema", "") != kMetricsSchema) {
    throw FormatError("metrics: not a metrics stream");
  }
  std::vector<RoundMetrics> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      RoundMetrics r;
      r.round = rec.at("round").get<std::uint32_t>();
      r.participant_count = rec.at("participant_count").get<std::size_t>();
      r.mmd_loss = rec.at("mmd_loss").get<double>();
      r.classif_loss = rec.at("classif_loss").get<double>();
      r.target_accuracy = rec.at("target_accuracy").get<double>();
      r.volume_sent = rec.at("volume_sent").get<std::size_t>();
      r.volume_delivered = rec.at("volume_delivered").get<std::size_t>();
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("metrics: bad record on line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

inline std::vector<RoundMetrics> load_metrics(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("load_metrics: cannot open " + path);
  return read_metrics(is);
}

}  // namespace fedrf
