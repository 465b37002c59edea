#include "allmargin/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "allmargin/common.hpp"
#include "allmargin/hash.hpp"

namespace allmargin::data {

void Dataset::validate() const {
  if (inputs.size() != labels.size())
    throw Error(ErrorCode::count_mismatch, std::to_string(inputs.size()) + " inputs but " +
                                               std::to_string(labels.size()) + " labels");
  for (const auto& x : inputs)
    if (x.size() != dim()) throw Error(ErrorCode::shape_mismatch, "inputs have different dimensions");
  for (std::size_t y : labels)
    if (y >= classes)
      throw Error(ErrorCode::invalid_argument,
                  "label " + std::to_string(y) + " outside " + std::to_string(classes) + " classes");
  if (provenance.empty()) throw Error(ErrorCode::invalid_argument, "dataset provenance is empty");
}

namespace {

void normalize(std::vector<std::vector<double>>& xs) {
  const std::size_t d = xs.front().size();
  std::vector<double> mean(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> col;
    for (const auto& x : xs) col.push_back(x[c]);
    mean[c] = pairwise_sum(col) / static_cast<double>(xs.size());
  }
  double largest = 0.0;
  for (auto& x : xs) {
    for (std::size_t c = 0; c < d; ++c) x[c] -= mean[c];
    largest = std::max(largest, norm2(x));
  }
  if (largest > 0.0)
    for (auto& x : xs)
      for (double& v : x) v /= largest;
}

}  // namespace

Dataset gen_synthetic(const std::string& kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw Error(ErrorCode::invalid_argument, "a synthetic dataset needs n >= 2");
  if (!(noise >= 0.0) || std::isinf(noise)) throw Error(ErrorCode::invalid_argument, "noise must be finite and >= 0");
  Rng rng(seed);
  Dataset ds;
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    std::vector<double> x(2);
    if (kind == "two-gaussians") {
      x = {y == 0 ? -1.0 : 1.0, 0.0};
    } else if (kind == "two-moons") {
      const double t = rng.uniform(0.0, pi);
      x = y == 0 ? std::vector<double>{std::cos(t), std::sin(t)}
                 : std::vector<double>{1.0 - std::cos(t), 0.5 - std::sin(t)};
    } else if (kind == "spirals") {
      const double t = rng.uniform(0.25, 1.0) * 3.0 * pi;
      const double sign = y == 0 ? 1.0 : -1.0;
      x = {sign * t * std::cos(t) / (3.0 * pi), sign * t * std::sin(t) / (3.0 * pi)};
    } else {
      throw Error(ErrorCode::unknown_kind, "unknown synthetic dataset '" + kind + "'");
    }
    for (double& v : x) v += noise * rng.normal();
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(y);
  }
  normalize(ds.inputs);
  ds.classes = 2;
  ds.provenance = "synthetic:" + kind + " n=" + std::to_string(n) + " noise=" + format_double(noise) +
                  " seed=" + std::to_string(seed);
  return ds;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t at) {
  return (std::uint32_t(std::uint8_t(bytes[at])) << 24) | (std::uint32_t(std::uint8_t(bytes[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(bytes[at + 2])) << 8) | std::uint32_t(std::uint8_t(bytes[at + 3]));
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out += static_cast<char>((v >> s) & 0xff);
}

struct IdxHeader {
  std::uint8_t type = 0;
  std::vector<std::uint32_t> dims;
  std::size_t payload = 0;  // byte offset of the data
};

IdxHeader parse_header(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 4) throw Error(ErrorCode::truncated_file, what + " is shorter than an IDX header");
  if (bytes[0] != 0 || bytes[1] != 0) throw Error(ErrorCode::bad_magic, what + " does not start with 0x0000");
  IdxHeader h;
  h.type = static_cast<std::uint8_t>(bytes[2]);
  const std::size_t ndims = static_cast<std::uint8_t>(bytes[3]);
  if (ndims == 0) throw Error(ErrorCode::bad_magic, what + " declares zero dimensions");
  if (bytes.size() < 4 + 4 * ndims) throw Error(ErrorCode::truncated_file, what + " header is truncated");
  for (std::size_t i = 0; i < ndims; ++i) h.dims.push_back(read_be32(bytes, 4 + 4 * i));
  h.payload = 4 + 4 * ndims;
  return h;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::string img = read_file(images), lab = read_file(labels);
  const IdxHeader hi = parse_header(img, images.string());
  const IdxHeader hl = parse_header(lab, labels.string());
  if (!(hi.type == 0x08 && hi.dims.size() == 3) && hi.type != 0x0E)
    throw Error(ErrorCode::bad_magic, images.string() + ": expected magic 0x00000803 or a double IDX file");
  if (!(hl.type == 0x08 && hl.dims.size() == 1))
    throw Error(ErrorCode::bad_magic, labels.string() + ": expected magic 0x00000801");

  const std::size_t count = hi.dims[0];
  std::size_t dim = 1;
  for (std::size_t i = 1; i < hi.dims.size(); ++i) dim *= hi.dims[i];
  const std::size_t width = hi.type == 0x08 ? 1 : 8;
  if (img.size() < hi.payload + count * dim * width)
    throw Error(ErrorCode::truncated_file, images.string() + " holds fewer values than its header declares");
  if (lab.size() < hl.payload + hl.dims[0])
    throw Error(ErrorCode::truncated_file, labels.string() + " holds fewer labels than its header declares");
  if (hl.dims[0] != count)
    throw Error(ErrorCode::count_mismatch, std::to_string(count) + " images but " + std::to_string(hl.dims[0]) +
                                               " labels");

  Dataset ds;
  std::size_t top = 0;
  for (std::size_t e = 0; e < count; ++e) {
    std::vector<double> x(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      const std::size_t at = hi.payload + (e * dim + c) * width;
      if (hi.type == 0x08) {
        x[c] = pixel_units(static_cast<std::uint8_t>(img[at]));
      } else {
        const std::uint64_t bits = (std::uint64_t(read_be32(img, at)) << 32) | read_be32(img, at + 4);
        x[c] = std::bit_cast<double>(bits);
      }
    }
    ds.inputs.push_back(std::move(x));
    const std::size_t y = static_cast<std::uint8_t>(lab[hl.payload + e]);
    ds.labels.push_back(y);
    top = std::max(top, y);
  }
  ds.classes = std::max<std::size_t>(2, top + 1);
  ds.provenance = "idx:" + git_blob_sha1(img) + "," + git_blob_sha1(lab);
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
  ds.validate();
  for (std::size_t y : ds.labels)
    if (y > 255) throw Error(ErrorCode::invalid_argument, "IDX labels must fit in one byte");
  bool bytes = true;
  for (const auto& x : ds.inputs)
    for (double v : x) {
      const double p = std::round(v * 255.0);
      if (!(v >= 0.0 && v <= 1.0) || pixel_units(p) != v) bytes = false;
    }
  std::string img;
  img += '\0';
  img += '\0';
  img += static_cast<char>(bytes ? 0x08 : 0x0E);
  if (bytes) {
    img += static_cast<char>(3);
    put_be32(img, static_cast<std::uint32_t>(ds.size()));
    put_be32(img, static_cast<std::uint32_t>(ds.dim()));
    put_be32(img, 1);
  } else {
    img += static_cast<char>(2);
    put_be32(img, static_cast<std::uint32_t>(ds.size()));
    put_be32(img, static_cast<std::uint32_t>(ds.dim()));
  }
  for (const auto& x : ds.inputs)
    for (double v : x) {
      if (bytes) {
        img += static_cast<char>(static_cast<std::uint8_t>(std::round(v * 255.0)));
      } else {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        put_be32(img, static_cast<std::uint32_t>(bits >> 32));
        put_be32(img, static_cast<std::uint32_t>(bits & 0xffffffffu));
      }
    }
  std::string lab{'\0', '\0', '\x08', '\x01'};
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) lab += static_cast<char>(static_cast<std::uint8_t>(y));

  for (const auto& [path, content] : {std::pair{images, &img}, std::pair{labels, &lab}}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out.write(content->data(), static_cast<std::streamsize>(content->size()));
  }
}

namespace {

std::size_t ceil_count(double fraction, std::size_t n) {
  const double raw = fraction * static_cast<double>(n);
  const double nearest = std::round(raw);
  // fractions like 0.2 * 1000 land a hair above the integer
  if (std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(raw));
}

}  // namespace

Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::invalid_argument, "fraction must lie in [0, 1]");
  if (ds.classes < 2 && fraction > 0.0)
    throw Error(ErrorCode::invalid_argument, "cannot corrupt labels with fewer than two classes");
  Dataset out = ds;
  Rng rng(seed);
  const std::size_t m = ceil_count(fraction, ds.size());
  const auto order = permutation(ds.size(), rng);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t e = order[i];
    const std::size_t r = rng.index(ds.classes - 1);
    out.labels[e] = r < ds.labels[e] ? r : r + 1;
  }
  out.provenance += "; corrupt fraction=" + format_double(fraction) + " seed=" + std::to_string(seed);
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(ErrorCode::invalid_argument, "fraction must lie in [0, 1)");
  Rng rng(seed);
  const auto order = permutation(ds.size(), rng);
  const std::size_t m = ceil_count(fraction, ds.size());
  Dataset train, val;
  for (Dataset* d : {&train, &val}) {
    d->classes = ds.classes;
    d->provenance = ds.provenance + "; split fraction=" + format_double(fraction) + " seed=" + std::to_string(seed);
  }
  train.split = "train";
  val.split = "validation";
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& d = i < m ? val : train;
    d.inputs.push_back(ds.inputs[order[i]]);
    d.labels.push_back(ds.labels[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

std::string to_csv(const Dataset& ds) {
  ds.validate();
  std::string out = "# allmargin-dataset v1 classes=" + std::to_string(ds.classes) + " split=" + ds.split +
                    " provenance=" + ds.provenance + "\n";
  for (std::size_t c = 0; c < ds.dim(); ++c) out += "x" + std::to_string(c) + ",";
  out += "label\n";
  for (std::size_t e = 0; e < ds.size(); ++e) {
    for (double v : ds.inputs[e]) out += format_double(v) + ",";
    out += std::to_string(ds.labels[e]) + "\n";
  }
  return out;
}

Dataset from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Dataset ds;
  if (!std::getline(in, line) || line.rfind("# allmargin-dataset v1 ", 0) != 0)
    throw Error(ErrorCode::malformed_input, "dataset CSV must start with '# allmargin-dataset v1'");
  const auto field = [&](const std::string& key) -> std::string {
    const auto at = line.find(" " + key + "=");
    if (at == std::string::npos) throw Error(ErrorCode::malformed_input, "dataset CSV header lacks " + key);
    const auto start = at + key.size() + 2;
    if (key == "provenance") return line.substr(start);
    return line.substr(start, line.find(' ', start) - start);
  };
  try {
    ds.classes = std::stoul(field("classes"));
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::malformed_input, "bad class count in dataset CSV header");
  }
  ds.split = field("split");
  ds.provenance = field("provenance");
  if (!std::getline(in, line)) throw Error(ErrorCode::malformed_input, "dataset CSV lacks a column row");
  const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::size_t row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns)
      throw Error(ErrorCode::malformed_input, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                                  " cells, expected " + std::to_string(columns));
    std::vector<double> x;
    try {
      for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
        std::size_t used = 0;
        x.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing text");
      }
      ds.labels.push_back(std::stoul(cells.back()));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::malformed_input, "row " + std::to_string(row) + " has a non-numeric cell");
    }
    ds.inputs.push_back(std::move(x));
  }
  ds.validate();
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << to_csv(ds);
}

Dataset read_csv(const std::filesystem::path& path) { return from_csv(read_file(path)); }

}  // namespace allmargin::data
