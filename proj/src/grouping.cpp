#include "ebench/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "ebench/error.hpp"
#include "ebench/rng.hpp"

namespace ebench {

namespace {

double sq_dist(const Point& a, const Point& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

void check_points(std::span<const Point> points) {
  if (points.empty()) throw ArgumentError("no points");
  const std::size_t dim = points.front().size();
  if (dim == 0) throw ArgumentError("zero-dimensional points");
  for (const auto& p : points) {
    if (p.size() != dim) {
      throw SchemaError("points have inconsistent dimensions");
    }
  }
}

bool all_identical(std::span<const Point> points) {
  for (const auto& p : points) {
    if (sq_dist(p, points.front()) > 0.0) return false;
  }
  return true;
}

// k-means++ seeding: first centroid uniform, the rest D^2-weighted.
std::vector<Point> kmeanspp_init(std::span<const Point> points, int k,
                                 Rng& rng) {
  const std::size_t n = points.size();
  std::vector<Point> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points[i], centroids[0]);
  while (static_cast<int>(centroids.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.below(n);
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], centroids.back()));
    }
  }
  return centroids;
}

struct LloydResult {
  std::vector<int> labels;
  std::vector<Point> centroids;
  double wcss = 0.0;
  std::vector<double> trace;
};

LloydResult lloyd(std::span<const Point> points, std::vector<Point> centroids,
                  const KMeansOptions& opts) {
  const std::size_t n = points.size();
  const int k = static_cast<int>(centroids.size());
  const std::size_t dim = points.front().size();
  LloydResult res;
  res.labels.assign(n, 0);
  double prev_wcss = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // Assignment step; ties go to the lower centroid index.
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.labels[i] = best;
      wcss += best_d;
    }
    res.trace.push_back(wcss);
    // Update step.
    std::vector<Point> next(k, Point(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = res.labels[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) next[c][d] += points[i][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(points[i], centroids[res.labels[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next[c] = points[far];
        counts[c] = 1;
        res.labels[far] = c;
      } else {
        for (std::size_t d = 0; d < dim; ++d) {
          next[c][d] /= static_cast<double>(counts[c]);
        }
      }
    }
    centroids = std::move(next);
    const double denom = std::max(prev_wcss, 1e-300);
    if (std::isfinite(prev_wcss) && (prev_wcss - wcss) / denom < opts.rel_tol) {
      res.wcss = wcss;
      res.centroids = std::move(centroids);
      return res;
    }
    prev_wcss = wcss;
    res.wcss = wcss;
  }
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace

KMeansRun run_kmeans(std::span<const Point> points, int k, std::uint64_t seed,
                     const KMeansOptions& opts) {
  check_points(points);
  if (k < 1 || static_cast<std::size_t>(k) > points.size()) {
    throw ArgumentError("run_kmeans: k out of range");
  }
  KMeansRun best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(r));
    auto init = kmeanspp_init(points, k, rng);
    LloydResult run = lloyd(points, std::move(init), opts);
    if (run.wcss < best.wcss) {
      best.labels = std::move(run.labels);
      best.centroids = std::move(run.centroids);
      best.wcss = run.wcss;
      best.wcss_trace = std::move(run.trace);
    }
  }
  return best;
}

std::vector<double> silhouette_values(std::span<const Point> points,
                                      std::span<const int> labels, int k) {
  const std::size_t n = points.size();
  if (labels.size() != n) throw ArgumentError("silhouette: size mismatch");
  std::vector<std::size_t> counts(k, 0);
  for (int l : labels) {
    if (l < 0 || l >= k) throw ArgumentError("silhouette: label out of range");
    ++counts[l];
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[labels[i]] <= 1) continue;  // singleton cluster: s = 0
    std::vector<double> mean_d(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_d[labels[j]] += std::sqrt(sq_dist(points[i], points[j]));
    }
    for (int c = 0; c < k; ++c) {
      const double denom = (c == labels[i])
                               ? static_cast<double>(counts[c] - 1)
                               : static_cast<double>(counts[c]);
      if (denom > 0.0) mean_d[c] /= denom;
    }
    const double a = mean_d[labels[i]];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != labels[i] && counts[c] > 0) b = std::min(b, mean_d[c]);
    }
    const double m = std::max(a, b);
    out[i] = (m > 0.0) ? (b - a) / m : 0.0;
  }
  return out;
}

double mean_silhouette(std::span<const Point> points,
                       std::span<const int> labels, int k) {
  const auto vals = silhouette_values(points, labels, k);
  double sum = 0.0;
  for (double v : vals) sum += v;
  return sum / static_cast<double>(vals.size());
}

ClusterAssignment cluster_embeddings(std::span<const Point> points,
                                     std::span<const int> k_range,
                                     std::uint64_t seed,
                                     const KMeansOptions& opts) {
  check_points(points);
  if (k_range.empty()) throw ArgumentError("cluster_embeddings: empty k range");
  if (all_identical(points)) {
    throw DomainError("cluster_embeddings: all points identical");
  }
  for (int k : k_range) {
    if (k < 2 || static_cast<std::size_t>(k) + 1 > points.size()) {
      throw ArgumentError("cluster_embeddings: k=" + std::to_string(k) +
                          " outside [2, n-1]");
    }
  }
  ClusterAssignment best;
  double best_sil = -std::numeric_limits<double>::infinity();
  std::vector<int> ks(k_range.begin(), k_range.end());
  std::sort(ks.begin(), ks.end());
  for (int k : ks) {
    KMeansRun run = run_kmeans(points, k, splitmix64(seed) ^ k, opts);
    const double sil = mean_silhouette(points, run.labels, k);
    if (sil > best_sil) {
      best_sil = sil;
      best.labels = std::move(run.labels);
      best.centroids = std::move(run.centroids);
      best.k = k;
      best.seed = seed;
    }
  }
  return best;
}

ClusterAssignment merge_small_groups(std::span<const Point> points,
                                     const ClusterAssignment& assignment,
                                     std::size_t min_size) {
  if (min_size < 1) throw ArgumentError("merge_small_groups: min_size < 1");
  check_points(points);
  if (assignment.labels.size() != points.size()) {
    throw ArgumentError("merge_small_groups: labels/points size mismatch");
  }
  const int k = assignment.k;
  const std::size_t dim = points.front().size();

  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < points.size(); ++i) {
    members[assignment.labels[i]].push_back(i);
  }
  std::vector<Point> centroids = assignment.centroids;
  std::vector<bool> alive(k, true);

  auto recompute = [&](int c) {
    centroids[c].assign(dim, 0.0);
    for (std::size_t i : members[c]) {
      for (std::size_t d = 0; d < dim; ++d) centroids[c][d] += points[i][d];
    }
    for (std::size_t d = 0; d < dim; ++d) {
      centroids[c][d] /= static_cast<double>(members[c].size());
    }
  };

  for (;;) {
    int victim = -1;
    std::size_t victim_size = 0;
    int alive_count = 0;
    for (int c = 0; c < k; ++c) {
      if (!alive[c]) continue;
      ++alive_count;
      if (members[c].size() < min_size &&
          (victim < 0 || members[c].size() < victim_size)) {
        victim = c;
        victim_size = members[c].size();
      }
    }
    if (victim < 0 || alive_count <= 1) break;

    alive[victim] = false;
    std::set<int> touched;
    for (std::size_t i : members[victim]) {
      int nearest = -1;
      double nearest_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        if (!alive[c]) continue;
        const double d = sq_dist(points[i], centroids[c]);
        if (d < nearest_d) {
          nearest_d = d;
          nearest = c;
        }
      }
      members[nearest].push_back(i);
      touched.insert(nearest);
    }
    members[victim].clear();
    for (int c : touched) recompute(c);
  }

  // Compact relabeling in original cluster order.
  ClusterAssignment out;
  out.seed = assignment.seed;
  std::vector<int> remap(k, -1);
  for (int c = 0; c < k; ++c) {
    if (alive[c] && !members[c].empty()) {
      remap[c] = out.k++;
      recompute(c);
      out.centroids.push_back(centroids[c]);
    }
  }
  out.labels.assign(points.size(), -1);
  for (int c = 0; c < k; ++c) {
    for (std::size_t i : members[c]) out.labels[i] = remap[c];
  }
  return out;
}

}  // namespace ebench
