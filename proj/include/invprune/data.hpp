#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/network.hpp"
#include "invprune/rng.hpp"
#include "invprune/tensor.hpp"

namespace invprune {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { numeric, categorical };

// Schema file: one `key = value` per line, `#` comments.
//   label = <column name>           (required)
//   kind.<column name> = numeric | categorical
// Columns absent from the kind map default to numeric.
struct TabularSchema {
  std::string label_column;
  std::map<std::string, ColumnKind> kinds;

  static TabularSchema load(const std::string& path);
};

struct TabularDataset {
  std::vector<std::string> feature_names;
  std::vector<ColumnKind> feature_kinds;
  Tensor features;            // N x F
  std::vector<int> labels;    // 0 .. class_count-1
  std::vector<std::string> class_names;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_count() const { return feature_names.size(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Minimal quoted-field CSV row parser; embedded newlines unsupported.
inline std::vector<std::string> split_csv_row(const std::string& line, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted)
    throw IngestError("csv line " + std::to_string(lineno) + ": unterminated quote");
  out.push_back(trim(cur));
  return out;
}

inline bool cell_missing(const std::string& s) {
  return s.empty() || s == "?" || s == "NA" || s == "nan" || s == "NaN";
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n == 0) throw IngestError("median of empty column");
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline TabularSchema TabularSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("schema: cannot open " + path);
  TabularSchema schema;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw IngestError("schema line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string val = detail::trim(t.substr(eq + 1));
    if (key == "label") {
      schema.label_column = val;
    } else if (key.rfind("kind.", 0) == 0) {
      std::string col = key.substr(5);
      if (val == "numeric")
        schema.kinds[col] = ColumnKind::numeric;
      else if (val == "categorical")
        schema.kinds[col] = ColumnKind::categorical;
      else
        throw IngestError("schema line " + std::to_string(lineno) + ": unknown kind '" + val +
                          "' for column " + col);
    } else {
      throw IngestError("schema line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (schema.label_column.empty()) throw IngestError("schema: missing label key in " + path);
  return schema;
}

// Header row names columns; the label column is encoded to dense class ids
// (distinct values sorted lexicographically). Categorical features are
// integer coded the same way, with a dedicated category for missing cells.
// Missing numeric cells take the column median over the ingested file.
inline TabularDataset load_csv(const std::string& path, const TabularSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError("csv: empty file " + path);
  std::vector<std::string> header = detail::split_csv_row(line, 1);

  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == schema.label_column) label_idx = i;
  if (label_idx == header.size())
    throw IngestError("csv: label column '" + schema.label_column + "' not in " + path);
  for (const auto& [col, kind] : schema.kinds)
    if (std::find(header.begin(), header.end(), col) == header.end())
      throw IngestError("csv: schema names unknown column '" + col + "'");

  TabularDataset ds;
  std::vector<std::size_t> feat_src;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == label_idx) continue;
    feat_src.push_back(i);
    ds.feature_names.push_back(header[i]);
    auto it = schema.kinds.find(header[i]);
    ds.feature_kinds.push_back(it == schema.kinds.end() ? ColumnKind::numeric : it->second);
  }

  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells = detail::split_csv_row(line, lineno);
    if (cells.size() != header.size())
      throw IngestError("csv line " + std::to_string(lineno) + ": " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    if (detail::cell_missing(cells[label_idx]))
      throw IngestError("csv line " + std::to_string(lineno) + ": missing label");
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw IngestError("csv: no data rows in " + path);

  const std::size_t n = rows.size(), f = feat_src.size();

  std::vector<std::string> label_values;
  for (const auto& r : rows) label_values.push_back(r[label_idx]);
  ds.class_names = label_values;
  std::sort(ds.class_names.begin(), ds.class_names.end());
  ds.class_names.erase(std::unique(ds.class_names.begin(), ds.class_names.end()),
                       ds.class_names.end());
  ds.class_count = ds.class_names.size();
  for (const auto& v : label_values) {
    auto it = std::lower_bound(ds.class_names.begin(), ds.class_names.end(), v);
    ds.labels.push_back(static_cast<int>(it - ds.class_names.begin()));
  }

  ds.features = Tensor({n, f});
  for (std::size_t j = 0; j < f; ++j) {
    std::size_t src = feat_src[j];
    if (ds.feature_kinds[j] == ColumnKind::numeric) {
      std::vector<double> present;
      std::vector<bool> missing(n, false);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string& cell = rows[i][src];
        if (detail::cell_missing(cell)) {
          missing[i] = true;
          continue;
        }
        try {
          std::size_t used = 0;
          double v = std::stod(cell, &used);
          if (used != cell.size()) throw std::invalid_argument(cell);
          ds.features.at(i, j) = v;
          present.push_back(v);
        } catch (const std::exception&) {
          throw IngestError("csv line " + std::to_string(i + 2) + ", column '" +
                            ds.feature_names[j] + "': cannot parse '" + cell + "' as numeric");
        }
      }
      if (present.empty())
        throw IngestError("csv column '" + ds.feature_names[j] + "': every value missing");
      double med = detail::median_of(present);
      for (std::size_t i = 0; i < n; ++i)
        if (missing[i]) ds.features.at(i, j) = med;
    } else {
      std::vector<std::string> cats;
      for (std::size_t i = 0; i < n; ++i)
        cats.push_back(detail::cell_missing(rows[i][src]) ? "<missing>" : rows[i][src]);
      std::vector<std::string> uniq = cats;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      for (std::size_t i = 0; i < n; ++i) {
        auto it = std::lower_bound(uniq.begin(), uniq.end(), cats[i]);
        ds.features.at(i, j) = static_cast<double>(it - uniq.begin());
      }
    }
  }
  return ds;
}

struct SplitSpec {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
  std::uint64_t seed = 11;
};

struct SplitIndices {
  std::vector<std::size_t> train, valid, test;
};

// Seeded uniform shuffle, then contiguous slices at floored cumulative
// boundaries: |train| = floor(f_tr*N), |valid| = floor((f_tr+f_va)*N) - |train|,
// test takes the rest.
inline SplitIndices split_dataset(std::size_t n, const SplitSpec& spec) {
  if (n < 5) throw std::invalid_argument("split_dataset: need at least 5 samples");
  double sum = spec.train + spec.valid + spec.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions sum to " + std::to_string(sum));
  if (spec.train <= 0.0 || spec.valid < 0.0 || spec.test < 0.0)
    throw std::invalid_argument("split_dataset: fractions must be non-negative, train positive");
  std::size_t b1 = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n)));
  std::size_t b2 =
      static_cast<std::size_t>(std::floor((spec.train + spec.valid) * static_cast<double>(n)));
  if (b1 == 0 || b1 == b2 || b2 == n)
    throw std::invalid_argument("split_dataset: a split would be empty at N = " +
                                std::to_string(n));
  Rng rng(substream(spec.seed, "split", n));
  std::vector<std::size_t> idx = permutation(n, rng);
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + b1);
  out.valid.assign(idx.begin() + b1, idx.begin() + b2);
  out.test.assign(idx.begin() + b2, idx.end());
  return out;
}

inline TabularDataset take(const TabularDataset& ds, const std::vector<std::size_t>& indices) {
  TabularDataset out;
  out.feature_names = ds.feature_names;
  out.feature_kinds = ds.feature_kinds;
  out.class_names = ds.class_names;
  out.class_count = ds.class_count;
  std::size_t f = ds.feature_count();
  out.features = Tensor({indices.size(), f});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::size_t src = indices[i];
    if (src >= ds.size()) throw std::out_of_range("take: index outside dataset");
    for (std::size_t j = 0; j < f; ++j) out.features.at(i, j) = ds.features.at(src, j);
    out.labels.push_back(ds.labels[src]);
  }
  return out;
}

// Per-column affine map fit on the train split only. Population standard
// deviation; zero-variance columns are centered (divisor 1). Categorical
// columns pass through untouched.
struct Scaler {
  std::vector<double> mean, stddev;
  std::vector<bool> active;
};

inline Scaler fit_scaler(const TabularDataset& train) {
  std::size_t n = train.size(), f = train.feature_count();
  if (n == 0) throw std::invalid_argument("fit_scaler: empty train split");
  Scaler sc;
  sc.mean.assign(f, 0.0);
  sc.stddev.assign(f, 1.0);
  sc.active.assign(f, false);
  for (std::size_t j = 0; j < f; ++j) {
    if (train.feature_kinds[j] != ColumnKind::numeric) continue;
    sc.active[j] = true;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += train.features.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double c = train.features.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    sc.mean[j] = mu;
    sc.stddev[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return sc;
}

inline void apply_scaler(const Scaler& sc, TabularDataset& ds) {
  if (sc.mean.size() != ds.feature_count())
    throw std::invalid_argument("apply_scaler: column count mismatch");
  for (std::size_t j = 0; j < ds.feature_count(); ++j) {
    if (!sc.active[j]) continue;
    for (std::size_t i = 0; i < ds.size(); ++i)
      ds.features.at(i, j) = (ds.features.at(i, j) - sc.mean[j]) / sc.stddev[j];
  }
}

inline void standardize(TabularDataset& train, TabularDataset& valid, TabularDataset& test,
                        Scaler* out = nullptr) {
  Scaler sc = fit_scaler(train);
  apply_scaler(sc, train);
  apply_scaler(sc, valid);
  apply_scaler(sc, test);
  if (out) *out = sc;
}

// Per-column value pools drawn verbatim from the given (train) split.
struct EmpiricalMarginal {
  std::vector<std::vector<double>> pools;

  std::size_t column_count() const { return pools.size(); }
};

inline EmpiricalMarginal empirical_marginals(const TabularDataset& train) {
  if (train.size() == 0) throw std::invalid_argument("empirical_marginals: empty split");
  EmpiricalMarginal m;
  m.pools.resize(train.feature_count());
  for (std::size_t j = 0; j < train.feature_count(); ++j) {
    m.pools[j].reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) m.pools[j].push_back(train.features.at(i, j));
  }
  return m;
}

// Per-epoch reshuffled batches. Train mode drops the trailing partial batch;
// eval mode keeps it. The permutation depends only on (seed, epoch).
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t seed, std::uint64_t epoch,
                                                        Mode mode) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: zero batch size");
  Rng rng(substream(seed, "batch", epoch));
  std::vector<std::size_t> idx = permutation(n, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::size_t end = std::min(n, start + batch_size);
    if (mode == Mode::train && end - start < batch_size) break;
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

// Class-proportional interleave: shuffle within each class, spread classes
// evenly by fractional position, then chunk. Keeps every full batch
// multi-class unless the imbalance exceeds the batch size.
inline std::vector<std::vector<std::size_t>> stratified_batch_iter(
    const std::vector<int>& labels, std::size_t batch_size, std::uint64_t seed,
    std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("stratified_batch_iter: zero batch size");
  Rng rng(substream(seed, "stratified", epoch));
  int max_label = -1;
  for (int y : labels) max_label = std::max(max_label, y);
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    per_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (auto& v : per_class) shuffle_inplace(v, rng);

  struct Slot {
    double key;
    std::size_t cls, pos;
  };
  std::vector<Slot> slots;
  slots.reserve(labels.size());
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    std::size_t nc = per_class[c].size();
    for (std::size_t i = 0; i < nc; ++i)
      slots.push_back({(static_cast<double>(i) + 0.5) / static_cast<double>(nc), c, i});
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.cls < b.cls;
  });

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (const Slot& s : slots) {
    cur.push_back(per_class[s.cls][s.pos]);
    if (cur.size() == batch_size) {
      batches.push_back(cur);
      cur.clear();
    }
  }
  return batches;  // trailing partial batch dropped
}

// Raw image container: header of four little-endian u32 (N, C, H, W),
// N*C*H*W pixel bytes scaled to [0,1], then N label bytes.
struct ImageDataset {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> pixels;  // n*c*h*w, row-major
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t sample_size() const { return c * h * w; }
};

inline ImageDataset load_image_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("image tensor: cannot open " + path);
  auto read_u32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw IngestError("image tensor: truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  ImageDataset ds;
  ds.n = read_u32();
  ds.c = read_u32();
  ds.h = read_u32();
  ds.w = read_u32();
  if (ds.n == 0 || ds.c == 0 || ds.h == 0 || ds.w == 0)
    throw IngestError("image tensor: zero dimension in header of " + path);
  std::size_t count = ds.n * ds.sample_size();
  std::vector<unsigned char> raw(count);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count)))
    throw IngestError("image tensor: truncated pixel payload in " + path);
  ds.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) ds.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  std::vector<unsigned char> lab(ds.n);
  if (!in.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(ds.n)))
    throw IngestError("image tensor: truncated label payload in " + path);
  int maxl = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    ds.labels.push_back(static_cast<int>(lab[i]));
    maxl = std::max(maxl, static_cast<int>(lab[i]));
  }
  ds.class_count = static_cast<std::size_t>(maxl) + 1;
  return ds;
}

inline void save_image_tensor(const std::string& path, const ImageDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("image tensor: cannot write " + path);
  auto write_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  write_u32(static_cast<std::uint32_t>(ds.n));
  write_u32(static_cast<std::uint32_t>(ds.c));
  write_u32(static_cast<std::uint32_t>(ds.h));
  write_u32(static_cast<std::uint32_t>(ds.w));
  for (double p : ds.pixels) {
    double clamped = std::min(1.0, std::max(0.0, p));
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  for (int y : ds.labels) out.put(static_cast<char>(static_cast<unsigned char>(y)));
}

}  // namespace invprune
