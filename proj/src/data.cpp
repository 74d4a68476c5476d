#include "sdkd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "sdkd/energy_model.hpp"

namespace sdkd {

void validate(const Dataset& data) {
  if (data.size() == 0) throw ShapeError("dataset is empty");
  if (data.inputs.rows != data.labels.size())
    throw ShapeError("dataset has " + std::to_string(data.inputs.rows) + " inputs but " +
                     std::to_string(data.labels.size()) + " labels");
  validate(data.inputs);
  for (ClassId y : data.labels)
    if (y >= data.n_classes)
      throw ShapeError("label " + std::to_string(y) + " >= n_classes " +
                       std::to_string(data.n_classes));
}

SplitDataset gen_blobs(const BlobsConfig& cfg) {
  if (cfg.n_classes < 2 || cfg.samples_per_class == 0 || cfg.dim == 0 ||
      !(cfg.center_scale > 0.0) || !(cfg.noise_sigma > 0.0))
    throw ParameterError("invalid blobs config");
  Rng rng(cfg.seed);
  SplitDataset out;
  out.centers = DenseMatrix(cfg.n_classes, cfg.dim);
  std::uniform_real_distribution<double> center_dist(-cfg.center_scale, cfg.center_scale);
  for (double& v : out.centers.data) v = center_dist(rng);

  const std::size_t n_train_per_class = (cfg.samples_per_class * 4) / 5;
  const std::size_t n_test_per_class = cfg.samples_per_class - n_train_per_class;
  auto init = [&](Dataset& d, std::size_t per_class) {
    d.n_classes = cfg.n_classes;
    d.inputs = DenseMatrix(per_class * cfg.n_classes, cfg.dim);
    d.labels.reserve(per_class * cfg.n_classes);
  };
  init(out.train, n_train_per_class);
  init(out.test, n_test_per_class);

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      const bool to_train = s < n_train_per_class;
      Dataset& d = to_train ? out.train : out.test;
      auto row = d.inputs.row(d.labels.size());
      for (std::size_t j = 0; j < cfg.dim; ++j) row[j] = out.centers(c, j) + noise(rng);
      d.labels.push_back(static_cast<ClassId>(c));
    }
  }
  return out;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (img.size() < 16) throw FormatError("IDX images: truncated header");
  if (be32(img, 0) != 0x00000803)
    throw FormatError("IDX images: bad magic in " + images_path.string());
  if (lab.size() < 8) throw FormatError("IDX labels: truncated header");
  if (be32(lab, 0) != 0x00000801)
    throw FormatError("IDX labels: bad magic in " + labels_path.string());

  const std::size_t n_img = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  const std::size_t n_lab = be32(lab, 4);
  if (n_img != n_lab)
    throw FormatError("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                      std::to_string(n_lab) + " labels");
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n_img * dim) throw FormatError("IDX images: truncated pixel data");
  if (lab.size() < 8 + n_lab) throw FormatError("IDX labels: truncated label data");

  Dataset d;
  d.inputs = DenseMatrix(n_img, dim);
  d.labels.resize(n_img);
  for (std::size_t i = 0; i < n_img * dim; ++i) d.inputs.data[i] = img[16 + i] / 255.0;
  ClassId max_label = 0;
  for (std::size_t i = 0; i < n_lab; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.n_classes = static_cast<std::size_t>(max_label) + 1;
  validate(d);
  return d;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

CsvDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV " + path.string() + ": missing header");
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end())
    throw FormatError("CSV " + path.string() + ": missing label column '" + label_column + "'");
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());

  CsvDataset out;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != label_idx) out.feature_names.push_back(header[i]);

  std::vector<double> features;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError("CSV " + path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == label_idx) {
        raw_labels.push_back(cells[i]);
        continue;
      }
      double v = 0.0;
      if (!parse_double(cells[i], v) || !std::isfinite(v))
        throw FormatError("CSV " + path.string() + ":" + std::to_string(line_no) +
                          ": non-numeric cell '" + cells[i] + "'");
      features.push_back(v);
    }
  }
  if (raw_labels.empty()) throw FormatError("CSV " + path.string() + ": no data rows");

  bool all_numeric = true;
  for (const auto& l : raw_labels) {
    double v = 0.0;
    all_numeric = all_numeric && parse_double(l, v);
  }
  std::vector<std::string> uniq = raw_labels;
  std::sort(uniq.begin(), uniq.end(), [&](const std::string& a, const std::string& b) {
    if (all_numeric) {
      double x = 0.0, y = 0.0;
      parse_double(a, x);
      parse_double(b, y);
      if (x != y) return x < y;
    }
    return a < b;
  });
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::map<std::string, ClassId> index;
  for (std::size_t i = 0; i < uniq.size(); ++i) index[uniq[i]] = static_cast<ClassId>(i);

  out.label_names = uniq;
  out.data.n_classes = uniq.size();
  out.data.inputs = DenseMatrix(raw_labels.size(), header.size() - 1);
  out.data.inputs.data = std::move(features);
  out.data.labels.reserve(raw_labels.size());
  for (const auto& l : raw_labels) out.data.labels.push_back(index.at(l));
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  char buf[40];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.input(i)) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out << buf;
    }
    out << data.labels[i] << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sdkd
