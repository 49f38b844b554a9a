#pragma once

// Lloyd's k-means with k-means++ seeding, multiple restarts and a
// deterministic label canonicalization (clusters ordered by size, ties by
// first row index) so repeated runs with the same seed agree exactly.

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "kolmo/rng.hpp"

namespace kolmo {

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x dim
  double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& X, int row, const Eigen::MatrixXd& C, int c) {
  return (X.row(row) - C.row(c)).squaredNorm();
}

}  // namespace detail

inline KMeansResult kmeans(const Eigen::MatrixXd& X, int k, int restarts = 20, std::uint64_t seed = 0,
                           int max_iter = 100) {
  const int n = static_cast<int>(X.rows());
  if (k < 1 || n < k) throw std::invalid_argument("kmeans: need at least k rows");
  Rng rng(splitmix64(seed ^ 0x6b6d65616e73ULL));

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int trial = 0; trial < restarts; ++trial) {
    Rng r = rng.split(trial);
    Eigen::MatrixXd C(k, X.cols());
    // k-means++ seeding
    C.row(0) = X.row(static_cast<int>(r.uniform_int(n)));
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int cc = 0; cc < c; ++cc) m = std::min(m, detail::sq_dist(X, i, C, cc));
        d2[i] = m;
        total += m;
      }
      int pick = 0;
      if (total > 0.0) {
        double u = r.uniform01() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += d2[i];
          if (u <= acc) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<int>(r.uniform_int(n));
      }
      C.row(c) = X.row(pick);
    }

    std::vector<int> labels(n, -1);
    for (int iter = 0; iter < max_iter; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        double m = detail::sq_dist(X, i, C, 0);
        for (int c = 1; c < k; ++c) {
          const double d = detail::sq_dist(X, i, C, c);
          if (d < m) {
            m = d;
            arg = c;
          }
        }
        if (labels[i] != arg) {
          labels[i] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
      std::vector<int> counts(k, 0);
      for (int i = 0; i < n; ++i) {
        sums.row(labels[i]) += X.row(i);
        ++counts[labels[i]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) {
          C.row(c) = sums.row(c) / counts[c];
        } else {
          // empty cluster: grab the point farthest from its centroid
          int far = 0;
          double m = -1.0;
          for (int i = 0; i < n; ++i) {
            const double d = detail::sq_dist(X, i, C, labels[i]);
            if (d > m) {
              m = d;
              far = i;
            }
          }
          C.row(c) = X.row(far);
        }
      }
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i) inertia += detail::sq_dist(X, i, C, labels[i]);
    if (inertia < best.inertia - 1e-12) {
      best.inertia = inertia;
      best.labels = labels;
      best.centroids = C;
    }
  }

  // Canonical label order: by cluster size descending, ties by the smallest
  // member row index.
  const int kk = k;
  std::vector<int> size(kk, 0), first(kk, std::numeric_limits<int>::max());
  for (int i = 0; i < n; ++i) {
    ++size[best.labels[i]];
    first[best.labels[i]] = std::min(first[best.labels[i]], i);
  }
  std::vector<int> order(kk);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (size[a] != size[b]) return size[a] > size[b];
    return first[a] < first[b];
  });
  std::vector<int> remap(kk);
  for (int c = 0; c < kk; ++c) remap[order[c]] = c;
  Eigen::MatrixXd C2(kk, X.cols());
  for (int c = 0; c < kk; ++c) C2.row(remap[c]) = best.centroids.row(c);
  best.centroids = C2;
  for (int i = 0; i < n; ++i) best.labels[i] = remap[best.labels[i]];
  return best;
}

}  // namespace kolmo
