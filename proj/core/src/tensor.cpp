#include "epde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace epde {

using nlohmann::json;

size_t DataTensor::observed_count() const {
  if (mask.empty()) return size();
  size_t n = 0;
  for (uint8_t m : mask) n += (m != 0);
  return n;
}

void DataTensor::validate() const {
  if (values.size() != size())
    throw Error("DataTensor: values length " + std::to_string(values.size()) +
                " != product of dims " + std::to_string(size()));
  if (!mask.empty() && mask.size() != size())
    throw Error("DataTensor: mask length mismatch");
  for (size_t i = 0; i < values.size(); ++i) {
    if (observed(i) && !std::isfinite(values[i]))
      throw Error("DataTensor: non-finite observed value at flat index " + std::to_string(i));
  }
  for (size_t a = 0; a < 3; ++a) {
    for (const auto& [name, col] : axis_meta[a]) {
      if (col.size() != dims[a])
        throw Error("DataTensor: axis_meta column '" + name + "' length mismatch on axis " +
                    axis_name(static_cast<Axis>(a)));
    }
  }
}

DataTensor DataTensor::zeros(size_t n_p, size_t n_t, size_t n_s) {
  DataTensor t;
  t.dims = {n_p, n_t, n_s};
  t.values.assign(n_p * n_t * n_s, 0.0);
  return t;
}

void ScrambleRecord::validate(const std::array<size_t, 3>& scrambled_dims) const {
  for (size_t a = 0; a < 3; ++a) {
    const auto& p = perm[a];
    if (p.size() != scrambled_dims[a])
      throw Error(std::string("ScrambleRecord: axis ") + axis_name(static_cast<Axis>(a)) +
                  " permutation length " + std::to_string(p.size()) + " != tensor dim " +
                  std::to_string(scrambled_dims[a]));
    std::vector<uint8_t> seen(p.size(), 0);
    for (size_t v : p) {
      if (v >= p.size() || seen[v]) throw Error("ScrambleRecord: permutation is not a bijection");
      seen[v] = 1;
    }
    if (!std::is_sorted(dropped[a].begin(), dropped[a].end()))
      throw Error("ScrambleRecord: dropped indices must be sorted");
  }
}

namespace {

// Gathers tensor channels along one axis: out channel j = in channel src[j].
DataTensor gather_axis(const DataTensor& t, Axis axis, const std::vector<size_t>& src,
                       const std::vector<uint8_t>* channel_observed = nullptr) {
  size_t a = static_cast<size_t>(axis);
  std::array<size_t, 3> nd = t.dims;
  nd[a] = src.size();
  DataTensor out;
  out.dims = nd;
  out.values.resize(nd[0] * nd[1] * nd[2]);
  bool need_mask = !t.mask.empty() || channel_observed != nullptr;
  if (need_mask) out.mask.assign(out.values.size(), 1);

  for (size_t p = 0; p < nd[0]; ++p)
    for (size_t ti = 0; ti < nd[1]; ++ti)
      for (size_t s = 0; s < nd[2]; ++s) {
        std::array<size_t, 3> idx{p, ti, s};
        size_t j = idx[a];
        bool live = !channel_observed || (*channel_observed)[j] != 0;
        std::array<size_t, 3> sidx = idx;
        sidx[a] = live ? src[j] : 0;
        size_t oi = out.index(idx[0], idx[1], idx[2]);
        if (live) {
          size_t ii = t.index(sidx[0], sidx[1], sidx[2]);
          out.values[oi] = t.values[ii];
          if (need_mask) out.mask[oi] = t.mask.empty() ? 1 : t.mask[ii];
        } else {
          out.values[oi] = 0.0;
          out.mask[oi] = 0;
        }
      }

  // axis_meta: gather on this axis, copy on the others.
  out.axis_meta = t.axis_meta;
  AxisMeta gathered;
  for (const auto& [name, col] : t.axis_meta[a]) {
    std::vector<double> ncol(src.size(), 0.0);
    for (size_t j = 0; j < src.size(); ++j) {
      bool live = !channel_observed || (*channel_observed)[j] != 0;
      ncol[j] = live ? col[src[j]] : std::numeric_limits<double>::quiet_NaN();
    }
    gathered[name] = std::move(ncol);
  }
  out.axis_meta[a] = std::move(gathered);
  return out;
}

}  // namespace

ScrambleResult scramble(const DataTensor& t, const ScrambleOptions& opt) {
  t.validate();
  ScrambleRecord rec;
  rec.seed = opt.seed;
  Rng rng(opt.seed);
  for (size_t a = 0; a < 3; ++a) {
    size_t n = t.dims[a];
    double frac = opt.drop_fraction[a];
    if (frac < 0.0 || frac >= 1.0)
      throw UsageError("scramble: drop_fraction must be in [0,1)");
    size_t n_drop = opt.axes[a] ? static_cast<size_t>(std::floor(frac * static_cast<double>(n)))
                                : 0;
    // The >=4 floor applies to axes actually being scrambled or thinned;
    // untouched axes (e.g. a single-parameter tensor) pass through.
    if ((opt.axes[a] || n_drop > 0) && n - n_drop < 4)
      throw UsageError(std::string("scramble: axis ") + axis_name(static_cast<Axis>(a)) +
                       " would retain fewer than 4 channels");
    Rng axis_rng(rng.derive(std::string("scramble.") + axis_name(static_cast<Axis>(a))));
    // Choose dropped original indices.
    std::vector<size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (n_drop > 0) {
      axis_rng.shuffle(all);
      rec.dropped[a].assign(all.begin(), all.begin() + static_cast<long>(n_drop));
      std::sort(rec.dropped[a].begin(), rec.dropped[a].end());
    }
    // Retained originals ascending, then a permutation over their positions.
    size_t n_keep = n - n_drop;
    std::vector<size_t> perm(n_keep);
    std::iota(perm.begin(), perm.end(), 0);
    if (opt.axes[a]) axis_rng.shuffle(perm);
    rec.perm[a] = std::move(perm);
  }
  return {apply_scramble(t, rec), rec};
}

DataTensor apply_scramble(const DataTensor& t, const ScrambleRecord& r) {
  DataTensor cur = t;
  for (size_t a = 0; a < 3; ++a) {
    size_t n = cur.dims[a];
    if (r.perm[a].size() + r.dropped[a].size() != n)
      throw Error("apply_scramble: record does not match tensor dims on axis " +
                  std::string(axis_name(static_cast<Axis>(a))));
    std::vector<uint8_t> is_dropped(n, 0);
    for (size_t d : r.dropped[a]) {
      if (d >= n) throw Error("apply_scramble: dropped index out of range");
      is_dropped[d] = 1;
    }
    std::vector<size_t> retained;
    retained.reserve(n - r.dropped[a].size());
    for (size_t i = 0; i < n; ++i)
      if (!is_dropped[i]) retained.push_back(i);
    std::vector<size_t> src(r.perm[a].size());
    for (size_t j = 0; j < src.size(); ++j) src[j] = retained[r.perm[a][j]];
    cur = gather_axis(cur, static_cast<Axis>(a), src);
  }
  return cur;
}

DataTensor unscramble(const DataTensor& t, const ScrambleRecord& r) {
  r.validate(t.dims);
  DataTensor cur = t;
  for (size_t a = 0; a < 3; ++a) {
    size_t n_keep = r.perm[a].size();
    size_t n_orig = n_keep + r.dropped[a].size();
    std::vector<uint8_t> is_dropped(n_orig, 0);
    for (size_t d : r.dropped[a]) {
      if (d >= n_orig) throw Error("unscramble: dropped index out of range");
      is_dropped[d] = 1;
    }
    std::vector<size_t> retained;
    for (size_t i = 0; i < n_orig; ++i)
      if (!is_dropped[i]) retained.push_back(i);
    // original channel retained[k] currently sits at scrambled position
    // perm^{-1}[k]; dropped channels have no source.
    std::vector<size_t> inv(n_keep);
    for (size_t j = 0; j < n_keep; ++j) inv[r.perm[a][j]] = j;
    std::vector<size_t> src(n_orig, 0);
    std::vector<uint8_t> live(n_orig, 0);
    for (size_t k = 0; k < n_keep; ++k) {
      size_t orig = retained[k];
      src[orig] = inv[k];
      live[orig] = 1;
    }
    cur = gather_axis(cur, static_cast<Axis>(a), src, &live);
  }
  return cur;
}

namespace {

json meta_to_json(const DataTensor& t, const ScrambleRecord* rec) {
  json j;
  json axes = json::object();
  for (size_t a = 0; a < 3; ++a) {
    if (t.axis_meta[a].empty()) continue;
    json cols = json::object();
    for (const auto& [name, col] : t.axis_meta[a]) {
      json arr = json::array();
      for (double v : col) {
        if (std::isnan(v))
          arr.push_back(nullptr);
        else
          arr.push_back(v);
      }
      cols[name] = std::move(arr);
    }
    axes[axis_name(static_cast<Axis>(a))] = std::move(cols);
  }
  j["axis_meta"] = std::move(axes);
  if (rec) {
    json r;
    r["seed"] = rec->seed;
    for (size_t a = 0; a < 3; ++a) {
      const char* an = axis_name(static_cast<Axis>(a));
      r[std::string("perm_") + an] = rec->perm[a];
      r[std::string("dropped_") + an] = rec->dropped[a];
    }
    j["scramble_record"] = std::move(r);
  }
  return j;
}

void meta_from_json(const json& j, DataTensor& t, ScrambleRecord* rec_out) {
  if (j.contains("axis_meta")) {
    for (size_t a = 0; a < 3; ++a) {
      const char* an = axis_name(static_cast<Axis>(a));
      if (!j["axis_meta"].contains(an)) continue;
      for (auto& [name, arr] : j["axis_meta"][an].items()) {
        std::vector<double> col;
        col.reserve(arr.size());
        for (const auto& v : arr)
          col.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                    : v.get<double>());
        t.axis_meta[a][name] = std::move(col);
      }
    }
  }
  if (rec_out && j.contains("scramble_record")) {
    const json& r = j["scramble_record"];
    rec_out->seed = r.value("seed", uint64_t{0});
    for (size_t a = 0; a < 3; ++a) {
      const char* an = axis_name(static_cast<Axis>(a));
      rec_out->perm[a] = r.value(std::string("perm_") + an, std::vector<size_t>{});
      rec_out->dropped[a] = r.value(std::string("dropped_") + an, std::vector<size_t>{});
    }
  }
}

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw Error("tensor file truncated");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

uint64_t double_bits(double d) {
  uint64_t u;
  std::memcpy(&u, &d, sizeof(u));
  return u;
}

double bits_double(uint64_t u) {
  double d;
  std::memcpy(&d, &u, sizeof(d));
  return d;
}

}  // namespace

void save_tensor(const DataTensor& t, const std::string& path, const ScrambleRecord* record) {
  t.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_tensor: cannot open " + path);
  os.write("EPDE", 4);
  write_le<uint16_t>(os, 1);
  os.put(static_cast<char>(3));
  for (size_t a = 0; a < 3; ++a) write_le<uint64_t>(os, t.dims[a]);
  os.put(t.mask.empty() ? '\0' : '\1');
  for (double v : t.values) write_le<uint64_t>(os, double_bits(v));
  if (!t.mask.empty()) {
    size_t nbytes = (t.mask.size() + 7) / 8;
    std::vector<unsigned char> packed(nbytes, 0);
    for (size_t i = 0; i < t.mask.size(); ++i)
      if (t.mask[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(packed.data()), static_cast<long>(nbytes));
  }
  if (!os) throw Error("save_tensor: write failed for " + path);
  os.close();

  std::ofstream ms(path + ".meta.json");
  if (!ms) throw Error("save_tensor: cannot open sidecar for " + path);
  ms << meta_to_json(t, record).dump(2) << "\n";
}

DataTensor load_tensor(const std::string& path, ScrambleRecord* record_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_tensor: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EPDE", 4) != 0)
    throw Error("load_tensor: bad magic in " + path);
  uint16_t version = read_le<uint16_t>(is);
  if (version != 1) throw Error("load_tensor: unsupported version " + std::to_string(version));
  int ndim = is.get();
  if (ndim != 3) throw Error("load_tensor: unsupported ndim");
  DataTensor t;
  for (size_t a = 0; a < 3; ++a) t.dims[a] = read_le<uint64_t>(is);
  int has_mask = is.get();
  if (has_mask != 0 && has_mask != 1) throw Error("load_tensor: corrupt header");
  size_t n = t.dims[0] * t.dims[1] * t.dims[2];
  t.values.resize(n);
  for (size_t i = 0; i < n; ++i) t.values[i] = bits_double(read_le<uint64_t>(is));
  if (has_mask) {
    size_t nbytes = (n + 7) / 8;
    std::vector<unsigned char> packed(nbytes);
    is.read(reinterpret_cast<char*>(packed.data()), static_cast<long>(nbytes));
    if (!is) throw Error("tensor file truncated");
    t.mask.assign(n, 0);
    for (size_t i = 0; i < n; ++i)
      t.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
  }

  std::ifstream ms(path + ".meta.json");
  if (ms) {
    json j;
    try {
      ms >> j;
    } catch (const json::exception& e) {
      throw Error("load_tensor: bad sidecar JSON: " + std::string(e.what()));
    }
    meta_from_json(j, t, record_out);
  }
  return t;
}

DataTensor slice_axis(const DataTensor& t, Axis axis, size_t first, size_t count) {
  size_t a = static_cast<size_t>(axis);
  if (first + count > t.dims[a]) throw Error("slice_axis: window out of range");
  std::vector<size_t> src(count);
  std::iota(src.begin(), src.end(), first);
  return gather_axis(t, axis, src);
}

std::vector<std::vector<double>> axis_channel_vectors(const DataTensor& t, Axis axis) {
  size_t a = static_cast<size_t>(axis);
  size_t n = t.dims[a];
  size_t rest = t.size() / n;
  std::vector<std::vector<double>> out(n, std::vector<double>(rest));
  std::array<size_t, 3> d = t.dims;
  for (size_t p = 0; p < d[0]; ++p)
    for (size_t ti = 0; ti < d[1]; ++ti)
      for (size_t s = 0; s < d[2]; ++s) {
        std::array<size_t, 3> idx{p, ti, s};
        size_t ch = idx[a];
        // position within the channel: natural order of the remaining axes
        size_t pos = 0;
        for (size_t b = 0; b < 3; ++b) {
          if (b == a) continue;
          pos = pos * d[b] + idx[b];
        }
        out[ch][pos] = t.values[t.index(p, ti, s)];
      }
  return out;
}

}  // namespace epde
