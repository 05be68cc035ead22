#pragma once

#include <string>
#include <vector>

#include "polarfuse/depth_map.hpp"
#include "polarfuse/polarization.hpp"

namespace polarfuse {

struct DepthMetrics {
    double rmse = 0.0;  // mm
    double mae = 0.0;   // mm
    double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
    std::size_t n_pixels = 0;
};

// Errors over gt's valid mask. delta_i = fraction of pixels with
// max(pred/gt, gt/pred) < base^i (strict); base defaults to the depth
// community's 1.25 convention, exposed because it is a convention, not a law.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt,
                           double threshold_base = 1.25);

struct NormalMetrics {
    double mean_deg = 0.0;
    double median_deg = 0.0;  // lower median for even counts
    double rmse_deg = 0.0;
    double pct_t1 = 0.0, pct_t2 = 0.0, pct_t3 = 0.0;
    std::size_t n_pixels = 0;
};

// Per-pixel angular error acos(clamp(<pred, gt>, -1, 1)) in degrees over the
// mask; pct thresholds default to 11.5 / 22.5 / 30 degrees.
NormalMetrics normal_metrics(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                             double t1_deg = 11.5, double t2_deg = 22.5, double t3_deg = 30.0);

struct Point3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// One point per valid pixel in row-major order:
// p = d(u,w) * [(u-cx)/fx, (w-cy)/fy, 1].
std::vector<Point3> backproject(const DepthMap& depth, const CameraIntrinsics& intrinsics);

void write_ply(const std::string& path, const std::vector<Point3>& points);

}  // namespace polarfuse
