#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/io.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

struct ParseError : std::runtime_error {
  long long line;
  ParseError(const std::string& msg, long long line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

struct DatasetFile {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;  // empty when unlabeled
  bool labeled = false;
  std::string provenance;

  std::size_t size() const { return features.size(); }
  int dim() const { return features.empty() ? 0 : static_cast<int>(features.front().size()); }
  int num_classes() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double_field(const std::string& s, long long line_no) {
  if (s.empty()) throw ParseError("empty numeric field", line_no);
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end != begin + s.size() || errno == ERANGE) {
    throw ParseError("malformed numeric field '" + s + "'", line_no);
  }
  return v;
}

}  // namespace detail

// CSV with a mandatory header row: either "label,f0,...,f{d-1}" for labeled
// data or "f0,...,f{d-1}" for unlabeled. Leading '#' lines are artifact
// headers and are skipped.
inline DatasetFile load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  DatasetFile ds;
  ds.provenance = path;

  std::string line;
  long long line_no = 0;
  bool header_seen = false;
  std::size_t expect_fields = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    std::vector<std::string> f = detail::split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      if (f[0] == "label") {
        ds.labeled = true;
        if (f.size() < 2) throw ParseError("header has a label column but no features", line_no);
      } else if (f[0] != "f0") {
        throw ParseError("header must start with 'label' or 'f0', got '" + f[0] + "'", line_no);
      }
      std::size_t feature_start = ds.labeled ? 1 : 0;
      for (std::size_t i = feature_start; i < f.size(); ++i) {
        std::string want = "f" + std::to_string(i - feature_start);
        if (f[i] != want) {
          throw ParseError("expected header column '" + want + "', got '" + f[i] + "'", line_no);
        }
      }
      expect_fields = f.size();
      continue;
    }
    if (f.size() != expect_fields) {
      throw ParseError("row has " + std::to_string(f.size()) + " fields, header has " +
                           std::to_string(expect_fields),
                       line_no);
    }
    std::size_t feature_start = 0;
    if (ds.labeled) {
      double lv = detail::parse_double_field(f[0], line_no);
      long long l = static_cast<long long>(lv);
      if (static_cast<double>(l) != lv || l < 0) {
        throw ParseError("label must be a non-negative integer, got '" + f[0] + "'", line_no);
      }
      ds.labels.push_back(static_cast<int>(l));
      feature_start = 1;
    }
    std::vector<double> row;
    row.reserve(expect_fields - feature_start);
    for (std::size_t i = feature_start; i < f.size(); ++i) {
      row.push_back(detail::parse_double_field(f[i], line_no));
    }
    ds.features.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError("missing header row", line_no == 0 ? 1 : line_no);
  return ds;
}

inline std::string dataset_to_csv(const DatasetFile& ds) {
  std::ostringstream out;
  if (ds.labeled) out << "label";
  int d = ds.dim();
  for (int j = 0; j < d; ++j) {
    if (j || ds.labeled) out << ',';
    out << 'f' << j;
  }
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labeled) out << ds.labels[i];
    for (int j = 0; j < d; ++j) {
      if (j || ds.labeled) out << ',';
      out << format_double(ds.features[i][j]);
    }
    out << '\n';
  }
  return out.str();
}

inline void write_csv(const DatasetFile& ds, const std::string& path) {
  atomic_write_text(path, dataset_to_csv(ds));
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("idx: truncated " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace detail

// Big-endian idx image/label pair. Pixels are bytes scaled to [0,1]; labels
// are optional (empty labels_path loads an unlabeled set).
inline DatasetFile load_idx(const std::string& images_path, const std::string& labels_path = "") {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::uint32_t magic = detail::read_be32(img, "image magic");
  if (magic != 0x00000803u) {
    throw std::runtime_error("load_idx: bad image magic in " + images_path);
  }
  std::uint32_t n = detail::read_be32(img, "image count");
  std::uint32_t rows = detail::read_be32(img, "row count");
  std::uint32_t cols = detail::read_be32(img, "column count");
  std::size_t dim = static_cast<std::size_t>(rows) * cols;

  DatasetFile ds;
  ds.provenance = images_path;
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim))) {
      throw std::runtime_error("load_idx: truncated image data in " + images_path);
    }
    std::vector<double> row(dim);
    for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
    ds.features.push_back(std::move(row));
  }

  if (!labels_path.empty()) {
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);
    std::uint32_t lmagic = detail::read_be32(lab, "label magic");
    if (lmagic != 0x00000801u) {
      throw std::runtime_error("load_idx: bad label magic in " + labels_path);
    }
    std::uint32_t ln = detail::read_be32(lab, "label count");
    if (ln != n) {
      throw std::runtime_error("load_idx: image/label count mismatch");
    }
    ds.labeled = true;
    for (std::uint32_t i = 0; i < ln; ++i) {
      char c;
      if (!lab.get(c)) throw std::runtime_error("load_idx: truncated label data");
      ds.labels.push_back(static_cast<unsigned char>(c));
    }
  }
  return ds;
}

enum class DatasetFormat { kCsv, kIdx };

inline DatasetFile load_dataset(const std::string& path, DatasetFormat format,
                                const std::string& labels_path = "") {
  return format == DatasetFormat::kCsv ? load_csv(path) : load_idx(path, labels_path);
}

// Synthetic Gaussian blobs. Class c sits at radius * (cos t, sin t, 0, ...)
// with t = 2*pi*c/classes + pi/4, so two classes land at +-(radius/sqrt(2))
// along the diagonal of the first two coordinates. `shift` adds a constant
// offset to every feature of every sample: a controllable distribution-shift
// knob for building train/eval splits that do not match.
inline DatasetFile make_blobs(int n, int dim, int classes, double radius, double sigma,
                              double shift, std::uint64_t seed, bool labeled = true) {
  if (n < 1) throw std::invalid_argument("make_blobs: n must be >= 1");
  if (dim < 2) throw std::invalid_argument("make_blobs: dim must be >= 2");
  if (classes < 2) throw std::invalid_argument("make_blobs: classes must be >= 2");
  if (!(sigma >= 0.0)) throw std::invalid_argument("make_blobs: sigma must be >= 0");

  DatasetFile ds;
  ds.labeled = labeled;
  ds.provenance = "synthetic-blobs";
  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    int c = i % classes;
    double t = 2.0 * M_PI * c / classes + M_PI / 4.0;
    std::vector<double> row(dim, 0.0);
    row[0] = radius * std::cos(t);
    row[1] = radius * std::sin(t);
    for (int j = 0; j < dim; ++j) row[j] += sigma * gauss(rng) + shift;
    ds.features.push_back(std::move(row));
    if (labeled) ds.labels.push_back(c);
  }
  return ds;
}

}  // namespace smoothcert
