#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "kolmo/kmeans.hpp"
#include "kolmo/rng.hpp"

using namespace kolmo;

TEST_CASE("two separated blobs are recovered exactly") {
  Rng rng(11);
  Eigen::MatrixXd X(50, 2);
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
  }
  for (int i = 30; i < 50; ++i) {
    X(i, 0) = 10.0 + rng.normal();
    X(i, 1) = 10.0 + rng.normal();
  }
  auto res = kmeans(X, 2);
  // the larger cluster is canonically label 0
  for (int i = 0; i < 30; ++i) REQUIRE(res.labels[i] == 0);
  for (int i = 30; i < 50; ++i) REQUIRE(res.labels[i] == 1);
  REQUIRE(res.centroids(0, 0) == Catch::Approx(0.0).margin(1.0));
  REQUIRE(res.centroids(1, 0) == Catch::Approx(10.0).margin(1.0));
}

TEST_CASE("k=1 returns the column means and the total squared deviation") {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 2, 0, 0, 2, 2, 2;
  auto res = kmeans(X, 1);
  REQUIRE(res.centroids(0, 0) == Catch::Approx(1.0));
  REQUIRE(res.centroids(0, 1) == Catch::Approx(1.0));
  REQUIRE(res.inertia == Catch::Approx(8.0));
  for (int l : res.labels) REQUIRE(l == 0);
}

TEST_CASE("duplicated points share a label") {
  Eigen::MatrixXd X(5, 1);
  X << 0, 0, 0, 7, 7;
  auto res = kmeans(X, 2);
  REQUIRE(res.labels[0] == res.labels[1]);
  REQUIRE(res.labels[1] == res.labels[2]);
  REQUIRE(res.labels[3] == res.labels[4]);
  REQUIRE(res.labels[0] != res.labels[3]);
  REQUIRE(res.inertia == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("same seed reproduces the clustering bitwise") {
  Rng rng(3);
  Eigen::MatrixXd X(40, 3);
  for (int i = 0; i < X.size(); ++i) X(i / 3, i % 3) = rng.uniform(-1.0, 1.0);
  auto a = kmeans(X, 4, 10, 99);
  auto b = kmeans(X, 4, 10, 99);
  REQUIRE(a.labels == b.labels);
  REQUIRE(a.inertia == b.inertia);
  REQUIRE((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rejects fewer rows than clusters") {
  Eigen::MatrixXd X(2, 2);
  X.setZero();
  REQUIRE_THROWS_AS(kmeans(X, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(kmeans(X, 0), std::invalid_argument);
}
