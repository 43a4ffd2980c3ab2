#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixdann/tensor.hpp"

namespace mixdann {

/// Foreground bitmap of shape [H,W] (depth 1) or [D,H,W].
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width) : BinaryMask(1, height, width) {}
  BinaryMask(std::size_t depth, std::size_t height, std::size_t width);

  /// Foreground where value > threshold. Accepts [H,W], [1,H,W] or [D,H,W].
  static BinaryMask from_tensor(const Tensor& t, double threshold = 0.5);

  std::size_t depth() const noexcept { return d_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool at(std::size_t y, std::size_t x) const { return bits_[y * w_ + x] != 0; }
  bool at(std::size_t z, std::size_t y, std::size_t x) const { return bits_[(z * h_ + y) * w_ + x] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  void set(std::size_t y, std::size_t x, bool v) { set(y * w_ + x, v); }

  bool same_shape(const BinaryMask& o) const { return d_ == o.d_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t d_ = 1, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// 2|Y n Yhat| / (|Y| + |Yhat|); 1.0 when both are empty.
double dsc(const BinaryMask& y, const BinaryMask& yhat);

enum class SurfacePoints {
  Boundary,    // foreground voxels with a face-neighbour outside the mask
  Foreground,  // every foreground voxel
};

/// Points of m that H95 measures distances from.
std::vector<std::size_t> surface_points(const BinaryMask& m, SurfacePoints which);

/// Squared Euclidean distance from every voxel to the nearest foreground
/// voxel of m (exact, separable lower-envelope transform). Infinity when m is
/// empty.
std::vector<double> squared_distance_to(const BinaryMask& m);

/// max of the two directed 95th percentiles (nearest rank) of point-to-set
/// distances. nullopt when either mask is empty.
std::optional<double> h95(const BinaryMask& y, const BinaryMask& yhat,
                          SurfacePoints which = SurfacePoints::Boundary);

/// Nearest-rank percentile: the ceil(q*n/100)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, int percent);

/// 100 * ||Yhat| - |Y|| / |Y|; nullopt when Y is empty.
std::optional<double> avd(const BinaryMask& y, const BinaryMask& yhat);

struct Components {
  std::vector<int> labels;  // 0 = background, 1..count in scan order
  int count = 0;
};

/// 8-connectivity in 2D, 26-connectivity in 3D.
Components connected_components(const BinaryMask& m);

struct LesionMatch {
  int tp = 0;       // ground-truth components overlapped by the prediction
  int fn = 0;       // ground-truth components missed
  int fp = 0;       // predicted components overlapping no ground truth
  int tp_pred = 0;  // predicted components overlapping some ground truth
};

struct LesionScores {
  double recall = 0.0;
  double f1 = 0.0;
  LesionMatch match;
};

LesionScores lesion_recall_f1(const BinaryMask& y, const BinaryMask& yhat);

struct CaseMetrics {
  int case_id = 0;
  double dsc = 0.0;
  std::optional<double> h95;
  std::optional<double> avd;
  double recall = 0.0;
  double f1 = 0.0;
};

/// One value per metric; NaN where no case was defined.
struct MetricValues {
  double dsc = 0.0, h95 = 0.0, avd = 0.0, recall = 0.0, f1 = 0.0;
};

inline constexpr const char* kMetricNames[5] = {"DSC", "H95", "AVD", "Recall", "F1"};
double metric_value(const MetricValues& v, int index);

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  MetricValues avg;
  std::optional<MetricValues> gain;
  int n_undefined_h95 = 0;
  int n_undefined_avd = 0;
};

CaseMetrics evaluate_case(int case_id, const BinaryMask& y, const BinaryMask& yhat);

MetricsReport evaluate_all(const std::vector<BinaryMask>& y_set, const std::vector<BinaryMask>& yhat_set,
                           const std::vector<int>& case_ids);

/// gain = avg - baseline.avg, sign preserved (negative H95/AVD gains are
/// improvements).
void attach_gain(MetricsReport& report, const MetricValues& baseline_avg);

MetricValues average(const std::vector<MetricValues>& values);

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report);
/// Reads the "avg" block of a report written by write_metrics_json.
MetricValues read_metrics_avg(const std::filesystem::path& path);

}  // namespace mixdann
