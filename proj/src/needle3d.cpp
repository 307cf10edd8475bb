#include "usn/needle3d.hpp"

#include "usn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>

namespace usn {

ImagePoint intersection_point(const NeedleDetection2D& det) {
  if (!det.valid) throw std::invalid_argument("intersection_point: invalid detection");
  return 0.5 * (det.endpoint_a + det.endpoint_b);
}

PointCloud3 stack_points(const std::vector<TrackedSlice>& slices, const CalibrationMap& cal) {
  PointCloud3 cloud;
  for (const TrackedSlice& s : slices) {
    if (!s.detection.valid) continue;
    const ImagePoint mid = intersection_point(s.detection);
    if (!cal.contains(mid)) continue;
    cloud.push_back(probe_to_base(pixel_to_probe(mid, cal), s.probe_pose));
  }
  return cloud;
}

PointCloud3 dbscan_filter(const PointCloud3& cloud, const DbscanParams& params) {
  const int n = static_cast<int>(cloud.size());
  constexpr int kNoise = -1;
  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  const double eps2 = params.eps_mm * params.eps_mm;

  auto neighbours = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j) {
      if ((cloud[i] - cloud[j]).squaredNorm() <= eps2) out.push_back(j);
    }
    return out;
  };

  int n_clusters = 0;
  for (int i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    auto seed = neighbours(i);
    if (static_cast<int>(seed.size()) < params.min_pts) {
      label[i] = kNoise;
      continue;
    }
    const int cluster = n_clusters++;
    label[i] = cluster;
    std::deque<int> queue(seed.begin(), seed.end());
    while (!queue.empty()) {
      const int j = queue.front();
      queue.pop_front();
      if (label[j] == kNoise) label[j] = cluster;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = cluster;
      auto nb = neighbours(j);
      if (static_cast<int>(nb.size()) >= params.min_pts) {
        queue.insert(queue.end(), nb.begin(), nb.end());
      }
    }
  }

  if (n_clusters == 0) return {};
  std::vector<int> sizes(n_clusters, 0);
  for (const int l : label)
    if (l >= 0) ++sizes[l];
  int best = 0;
  for (int c = 1; c < n_clusters; ++c) {
    if (sizes[c] > sizes[best]) best = c;  // tie keeps the earlier cluster
  }
  PointCloud3 kept;
  for (int i = 0; i < n; ++i)
    if (label[i] == best) kept.push_back(cloud[i]);
  return kept;
}

double point_line_distance(const Vec3& p, const Vec3& line_point, const Vec3& line_dir) {
  return (p - line_point).cross(line_dir).norm() / line_dir.norm();
}

namespace {

struct TlsLine {
  Vec3 centroid;
  Vec3 direction;
};

TlsLine tls_fit(const PointCloud3& cloud, const std::vector<int>& indices) {
  Vec3 centroid = Vec3::Zero();
  for (const int i : indices) centroid += cloud[i];
  centroid /= static_cast<double>(indices.size());
  Mat3 cov = Mat3::Zero();
  for (const int i : indices) {
    const Vec3 d = cloud[i] - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 dir = es.eigenvectors().col(2);  // largest eigenvalue
  int k = 0;
  dir.cwiseAbs().maxCoeff(&k);
  if (dir[k] < 0.0) dir = -dir;
  return {centroid, dir.normalized()};
}

}  // namespace

Line3Fit ransac_line(const PointCloud3& cloud, const RansacParams& params) {
  const int n = static_cast<int>(cloud.size());
  if (n < 2) throw std::invalid_argument("ransac_line: need >= 2 points");

  int best_count = 0;
  double best_rms = std::numeric_limits<double>::infinity();
  std::vector<int> best_inliers;

  std::vector<int> inliers;
  inliers.reserve(n);
  for (int iter = 0; iter < params.iterations; ++iter) {
    auto rng = make_rng(derive_seed(params.seed, static_cast<std::uint64_t>(iter)));
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int ia = pick(rng);
    int ib = pick(rng);
    if (ib == ia) ib = (ib + 1) % n;
    const Vec3 d = cloud[ib] - cloud[ia];
    if (d.norm() < 1e-12) continue;
    const Vec3 dir = d.normalized();

    inliers.clear();
    double sq_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dist = (cloud[i] - cloud[ia]).cross(dir).norm();
      if (dist <= params.inlier_threshold_mm) {
        inliers.push_back(i);
        sq_sum += dist * dist;
      }
    }
    const int count = static_cast<int>(inliers.size());
    const double rms = count > 0 ? std::sqrt(sq_sum / count) : 0.0;
    if (count > best_count || (count == best_count && rms < best_rms)) {
      best_count = count;
      best_rms = rms;
      best_inliers = inliers;
    }
  }

  Line3Fit fit;
  if (best_count < params.min_inliers) return fit;  // no consensus

  const TlsLine refit = tls_fit(cloud, best_inliers);
  double sq_sum = 0.0;
  for (const int i : best_inliers) {
    const double dist = point_line_distance(cloud[i], refit.centroid, refit.direction);
    sq_sum += dist * dist;
  }
  fit.valid = true;
  fit.point = refit.centroid;
  fit.direction = refit.direction;
  fit.inlier_count = best_count;
  fit.inlier_indices = std::move(best_inliers);
  fit.rms_residual_mm = std::sqrt(sq_sum / best_count);
  return fit;
}

}  // namespace usn
