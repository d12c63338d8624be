#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "levelseg/ad/tensor.hpp"

namespace levelseg::metrics {

/// Binary mask: rank-2 tensor of 0/1 bytes.
using Mask = ad::Tensor<uint8_t>;

/// 2 |A.B| / (|A| + |B|); both masks empty counts as 1.
double dice(const Mask& a, const Mask& b);

/// |A.B| / |A+B|; both masks empty counts as 1.
double iou(const Mask& a, const Mask& b);

/// Labels connected foreground regions 1..n in scan order, 0 = background.
/// Connectivity is 4 or 8.
ad::Tensor<int> connected_components(const Mask& mask, int connectivity, int* count);

/// Area-weighted best-IoU coverage of ground-truth instances by predicted
/// instances (8-connected). Asymmetric by design; 1 when gt is empty.
double wcov(const Mask& gt, const Mask& pred);

/// Boundary F-measure. Boundary pixels are mask pixels with a background
/// 4-neighbor (off-grid counts as background); matches within Euclidean
/// distance `tolerance`. Both boundaries empty -> 1; exactly one empty -> 0.
double boundf(const Mask& gt, const Mask& pred, double tolerance = 2.0);

/// Pixelwise root-mean-square error between binary masks, in [0,1].
double rmse(const Mask& gt, const Mask& pred);

struct ImageMetrics {
  std::string id;
  double dice = 0, iou = 0, wcov = 0, boundf = 0, rmse = 0;
  int gt_instances = 0, pred_instances = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> rows;
  double mean_dice = 0, miou = 0, mean_wcov = 0, mean_boundf = 0, mean_rmse = 0;
  double boundf_tolerance = 2.0;

  void add(const std::string& id, const Mask& gt, const Mask& pred);
  /// Recomputes the aggregate means from the rows.
  void finalize();

  void write_csv(std::ostream& os) const;
  /// Aggregate summary as a JSON object string.
  std::string aggregate_json() const;
};

}  // namespace levelseg::metrics
