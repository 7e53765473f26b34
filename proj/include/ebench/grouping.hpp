#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ebench {

using Point = std::vector<double>;

struct ClusterAssignment {
  std::vector<int> labels;  // one per point, values in [0, k)
  std::vector<Point> centroids;
  int k = 0;
  std::uint64_t seed = 0;
};

struct KMeansOptions {
  int restarts = 10;
  int max_iters = 300;
  double rel_tol = 1e-6;
};

struct KMeansRun {
  std::vector<int> labels;
  std::vector<Point> centroids;
  double wcss = 0.0;
  // WCSS after each Lloyd iteration of the winning restart (non-increasing).
  std::vector<double> wcss_trace;
};

// One k-means fit: k-means++ seeding, best of `restarts` restarts by WCSS.
KMeansRun run_kmeans(std::span<const Point> points, int k, std::uint64_t seed,
                     const KMeansOptions& opts = {});

// Per-point silhouette values (Euclidean, full pairwise distances).
// Points in singleton clusters get silhouette 0.
std::vector<double> silhouette_values(std::span<const Point> points,
                                      std::span<const int> labels, int k);
double mean_silhouette(std::span<const Point> points,
                       std::span<const int> labels, int k);

// Run k-means for every k in k_range and keep the assignment with the
// highest mean silhouette (ties to the smaller k). Deterministic given seed.
ClusterAssignment cluster_embeddings(std::span<const Point> points,
                                     std::span<const int> k_range,
                                     std::uint64_t seed,
                                     const KMeansOptions& opts = {});

// Dissolve clusters smaller than min_size, smallest first (ties to the lower
// cluster index); members move to the nearest surviving centroid and
// centroids are recomputed. Stops when all clusters reach min_size or one
// cluster remains. Labels are re-indexed compactly, preserving the original
// cluster order.
ClusterAssignment merge_small_groups(std::span<const Point> points,
                                     const ClusterAssignment& assignment,
                                     std::size_t min_size);

}  // namespace ebench
