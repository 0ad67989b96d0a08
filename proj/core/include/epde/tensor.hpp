#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epde/common.hpp"

namespace epde {

// Tensor axes in storage order. Values are row-major over (param, time, space).
enum class Axis : int { Param = 0, Time = 1, Space = 2 };

constexpr std::array<Axis, 3> kAllAxes = {Axis::Param, Axis::Time, Axis::Space};

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::Param: return "param";
    case Axis::Time: return "time";
    default: return "space";
  }
}

// Optional ground-truth coordinates attached to one axis, e.g. {"D_e": [...],
// "d": [...], "t_s": [...]} for parameters, {"t": [...]} for time,
// {"arclength": [...]} for space. Used for evaluation only; the organization
// algorithms never read it.
using AxisMeta = std::map<std::string, std::vector<double>>;

struct DataTensor {
  std::array<size_t, 3> dims{0, 0, 0};  // (N_p, N_t, N_s)
  std::vector<double> values;           // row-major (p,t,s)
  std::vector<uint8_t> mask;            // empty = fully observed; 1 = observed
  std::array<AxisMeta, 3> axis_meta;

  size_t size() const { return dims[0] * dims[1] * dims[2]; }
  size_t dim(Axis a) const { return dims[static_cast<size_t>(a)]; }

  size_t index(size_t p, size_t t, size_t s) const { return (p * dims[1] + t) * dims[2] + s; }
  double& at(size_t p, size_t t, size_t s) { return values[index(p, t, s)]; }
  double at(size_t p, size_t t, size_t s) const { return values[index(p, t, s)]; }

  bool observed(size_t i) const { return mask.empty() || mask[i] != 0; }
  size_t observed_count() const;

  // Throws Error if dims/values/mask are inconsistent or an observed value is
  // non-finite.
  void validate() const;

  static DataTensor zeros(size_t n_p, size_t n_t, size_t n_s);
};

// The answer key for a scramble: per-axis permutations over the retained
// channels plus the dropped original indices. For axis a,
// scrambled channel j == original retained channel perm[a][j], where the
// retained channels are the original indices not in dropped[a], in ascending
// order.
struct ScrambleRecord {
  std::array<std::vector<size_t>, 3> perm;
  std::array<std::vector<size_t>, 3> dropped;  // sorted original indices
  uint64_t seed = 0;

  void validate(const std::array<size_t, 3>& scrambled_dims) const;
};

struct ScrambleOptions {
  std::array<bool, 3> axes{true, true, true};
  std::array<double, 3> drop_fraction{0.0, 0.0, 0.0};  // each in [0,1)
  uint64_t seed = 0;
};

struct ScrambleResult {
  DataTensor tensor;
  ScrambleRecord record;
};

// Builds a seeded-deterministic record (same seed -> identical record) and
// applies it. Dropped channels are removed entirely (the axis shrinks);
// axis_meta is permuted identically so that ground truth stays attached.
// Rejects configurations that leave fewer than 4 channels on an axis.
ScrambleResult scramble(const DataTensor& t, const ScrambleOptions& opt);

// Applies an existing record (permutation + drops) to a tensor whose dims
// match the record's original dims.
DataTensor apply_scramble(const DataTensor& t, const ScrambleRecord& r);

// Inverse: permutations undone, dropped channels reinserted as masked-missing.
DataTensor unscramble(const DataTensor& t, const ScrambleRecord& r);

// Binary format: magic "EPDE", u16 version=1, u8 ndim=3, 3x u64 dims,
// u8 has_mask, little-endian f64 row-major payload, then the mask as packed
// bits (LSB first) when present. axis_meta and an optional ScrambleRecord go
// to the JSON sidecar "<path>.meta.json".
void save_tensor(const DataTensor& t, const std::string& path,
                 const ScrambleRecord* record = nullptr);
DataTensor load_tensor(const std::string& path, ScrambleRecord* record_out = nullptr);

// Extracts a contiguous channel window [first, first+count) along one axis.
DataTensor slice_axis(const DataTensor& t, Axis axis, size_t first, size_t count);

// Flattens to a channels-by-rest matrix view of one axis: row i holds all
// values whose index along `axis` is i, in the natural order of the other two
// axes. Used by the questionnaire.
std::vector<std::vector<double>> axis_channel_vectors(const DataTensor& t, Axis axis);

}  // namespace epde
