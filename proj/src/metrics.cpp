#include "polarfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "polarfuse/tensor_io.hpp"

namespace polarfuse {

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, double threshold_base) {
    require_same_dims(pred.depth, gt.depth, "depth_metrics");
    if (!(threshold_base > 1.0))
        throw std::invalid_argument("depth_metrics: threshold base must exceed 1");
    const double t1 = threshold_base;
    const double t2 = threshold_base * threshold_base;
    const double t3 = t2 * threshold_base;

    DepthMetrics m;
    double sum_sq = 0.0, sum_abs = 0.0;
    std::size_t c1 = 0, c2 = 0, c3 = 0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        if (gt.valid[i] == 0.0) continue;
        ++m.n_pixels;
        const double p = pred.depth[i];
        const double g = gt.depth[i];
        const double e = p - g;
        sum_sq += e * e;
        sum_abs += std::abs(e);
        const double ratio =
            p > 0.0 ? std::max(p / g, g / p) : std::numeric_limits<double>::infinity();
        if (ratio < t1) ++c1;
        if (ratio < t2) ++c2;
        if (ratio < t3) ++c3;
    }
    if (m.n_pixels == 0) throw std::invalid_argument("depth_metrics: empty valid mask");
    const double n = static_cast<double>(m.n_pixels);
    m.rmse = std::sqrt(sum_sq / n);
    m.mae = sum_abs / n;
    m.delta1 = static_cast<double>(c1) / n;
    m.delta2 = static_cast<double>(c2) / n;
    m.delta3 = static_cast<double>(c3) / n;
    return m;
}

NormalMetrics normal_metrics(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                             double t1_deg, double t2_deg, double t3_deg) {
    if (pred.rank() != 3 || pred.dim(0) != 3)
        throw std::invalid_argument("normal_metrics: pred must be [3,H,W]");
    require_same_dims(pred, gt, "normal_metrics");
    if (mask.rank() != 2 || mask.dim(0) != pred.dim(1) || mask.dim(1) != pred.dim(2))
        throw std::invalid_argument("normal_metrics: mask dims mismatch");

    const std::size_t plane = pred.dim(1) * pred.dim(2);
    std::vector<double> angles;
    angles.reserve(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        if (mask[i] == 0.0) continue;
        const double px = pred[i], py = pred[plane + i], pz = pred[2 * plane + i];
        const double gx = gt[i], gy = gt[plane + i], gz = gt[2 * plane + i];
        const double pn = std::sqrt(px * px + py * py + pz * pz);
        const double gn = std::sqrt(gx * gx + gy * gy + gz * gz);
        if (std::abs(pn - 1.0) > 1e-3 || std::abs(gn - 1.0) > 1e-3)
            throw std::invalid_argument("normal_metrics: non-unit normal inside mask");
        const double dot = std::clamp(px * gx + py * gy + pz * gz, -1.0, 1.0);
        angles.push_back(std::acos(dot) * 180.0 / kPi);
    }
    if (angles.empty()) throw std::invalid_argument("normal_metrics: empty mask");

    NormalMetrics m;
    m.n_pixels = angles.size();
    const double n = static_cast<double>(angles.size());
    double sum = 0.0, sum_sq = 0.0;
    std::size_t c1 = 0, c2 = 0, c3 = 0;
    for (double a : angles) {
        sum += a;
        sum_sq += a * a;
        if (a < t1_deg) ++c1;
        if (a < t2_deg) ++c2;
        if (a < t3_deg) ++c3;
    }
    m.mean_deg = sum / n;
    m.rmse_deg = std::sqrt(sum_sq / n);
    std::vector<double> sorted = angles;
    std::sort(sorted.begin(), sorted.end());
    m.median_deg = sorted[(sorted.size() - 1) / 2];  // lower median
    m.pct_t1 = static_cast<double>(c1) / n;
    m.pct_t2 = static_cast<double>(c2) / n;
    m.pct_t3 = static_cast<double>(c3) / n;
    return m;
}

std::vector<Point3> backproject(const DepthMap& depth, const CameraIntrinsics& intrinsics) {
    intrinsics.validate();
    const std::size_t h = depth.height(), w = depth.width();
    std::vector<Point3> points;
    points.reserve(depth.valid_count());
    for (std::size_t row = 0; row < h; ++row) {
        for (std::size_t col = 0; col < w; ++col) {
            if (depth.valid.at2(row, col) == 0.0) continue;
            const double d = depth.depth.at2(row, col);
            points.push_back(Point3{d * (static_cast<double>(col) - intrinsics.cx) / intrinsics.fx,
                                    d * (static_cast<double>(row) - intrinsics.cy) / intrinsics.fy,
                                    d});
        }
    }
    return points;
}

void write_ply(const std::string& path, const std::vector<Point3>& points) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_ply: cannot open '" + path + "'");
    os << "ply\nformat ascii 1.0\nelement vertex " << points.size()
       << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    char buf[128];
    for (const Point3& p : points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x, p.y, p.z);
        os << buf;
    }
    if (!os) throw IoError("write_ply: write failure on '" + path + "'");
}

}  // namespace polarfuse
