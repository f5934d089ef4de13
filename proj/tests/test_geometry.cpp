#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "core/errors.hpp"
#include "core/geometry.hpp"
#include "core/io_util.hpp"
#include "core/rng.hpp"
#include "test_helpers.hpp"

using namespace scpc;
using namespace scpc::geometry;
using scpc::testing::fps_oracle;
using scpc::testing::knn_oracle;
using scpc::testing::random_cloud;

namespace {

PointCloud square_cloud() {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  return cloud;
}

// Finds a seed whose random start lands on the wanted index.
std::uint64_t seed_picking(const PointCloud& cloud, std::size_t wanted) {
  for (std::uint64_t seed = 1; seed < 10000; ++seed) {
    if (farthest_point_sample(cloud, 1, seed)[0] == wanted) return seed;
  }
  FAIL("no seed found");
  return 0;
}

}  // namespace

TEST_CASE("fps covers every index when m equals n") {
  const auto cloud = random_cloud(17, 11);
  const auto centers = farthest_point_sample(cloud, 17, 5);
  std::set<std::size_t> unique(centers.begin(), centers.end());
  CHECK(unique.size() == 17);
}

TEST_CASE("fps picks the unique farthest point on the unit square") {
  const auto cloud = square_cloud();
  const auto seed = seed_picking(cloud, 0);
  const auto centers = farthest_point_sample(cloud, 2, seed);
  CHECK(centers == std::vector<std::size_t>{0, 3});
}

TEST_CASE("fps breaks max-min ties by lowest index") {
  auto cloud = square_cloud();
  cloud.points.push_back({0.5, 0.5, 0});
  const auto seed = seed_picking(cloud, 0);
  const auto centers = farthest_point_sample(cloud, 3, seed);
  const auto expected = fps_oracle(cloud, 3, 0);
  CHECK(centers == expected);
  CHECK(centers == std::vector<std::size_t>{0, 3, 1});
}

TEST_CASE("fps seed zero starts nearest the centroid") {
  auto cloud = square_cloud();
  cloud.points.push_back({0.6, 0.5, 0});  // unique nearest to centroid
  const auto centers = farthest_point_sample(cloud, 1, 0);
  CHECK(centers[0] == 4);
}

TEST_CASE("fps rejects invalid sample counts") {
  const auto cloud = square_cloud();
  CHECK_THROWS_AS(farthest_point_sample(cloud, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(farthest_point_sample(cloud, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(farthest_point_sample(PointCloud{}, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("fps matches the exhaustive oracle on random clouds") {
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed * 977);
    const std::size_t n = 2 + rng.uniform_index(63);
    const auto cloud = random_cloud(n, seed * 13 + 1);
    const std::size_t m = 1 + rng.uniform_index(n);
    for (std::uint64_t pick : {std::uint64_t{0}, seed}) {
      const auto centers = farthest_point_sample(cloud, m, pick);
      const auto expected = fps_oracle(cloud, m, centers[0]);
      REQUIRE(centers == expected);
      ++instances;
    }
  }
  CHECK(instances >= 100);
}

TEST_CASE("knn returns all other points when k is n-1") {
  const auto cloud = random_cloud(12, 3);
  const auto neighbors = knn(cloud, 4, 11);
  CHECK(neighbors.size() == 11);
  CHECK(neighbors == knn_oracle(cloud, 4, 11));
}

TEST_CASE("knn ordering on colinear points") {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  CHECK(knn(cloud, 0, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("knn rejects out-of-range k") {
  const auto cloud = random_cloud(6, 9);
  CHECK_THROWS_AS(knn(cloud, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(knn(cloud, 0, 6), std::invalid_argument);
}

TEST_CASE("knn matches the exhaustive oracle across tree and linear paths") {
  // N straddles the kd-tree threshold so both code paths are exercised.
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    Rng rng(seed * 31 + 7);
    const std::size_t n = 8 + rng.uniform_index(57);  // 8..64
    const auto cloud = random_cloud(n, seed * 101);
    for (int rep = 0; rep < 3; ++rep) {
      const std::size_t query = rng.uniform_index(n);
      const std::size_t k = 1 + rng.uniform_index(n - 1);
      REQUIRE(knn(cloud, query, k) == knn_oracle(cloud, query, k));
      ++instances;
    }
  }
  CHECK(instances == 120);
}

TEST_CASE("knn handles duplicate coordinates with index tie-breaks") {
  PointCloud cloud;
  for (int i = 0; i < 40; ++i)
    cloud.points.push_back({static_cast<double>(i % 4), 0, 0});
  for (std::size_t query : {std::size_t{0}, std::size_t{17}, std::size_t{39}})
    CHECK(knn(cloud, query, 10) == knn_oracle(cloud, query, 10));
}

TEST_CASE("build_patch wraps knn with the center first") {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {2, 0, 0}};
  const auto patch = build_patch(cloud, 0, 1);
  CHECK(patch.members == std::vector<std::size_t>{0, 1});
  CHECK(patch.dilation == 1);

  const auto big = random_cloud(128, 21);
  const auto p = build_patch(big, 17, 20);
  CHECK(p.members[0] == 17);
  const auto expected = knn_oracle(big, 17, 20);
  CHECK(std::vector<std::size_t>(p.members.begin() + 1, p.members.end()) ==
        expected);
}

TEST_CASE("dilated_patch keeps every d-th neighbor") {
  PointCloud cloud;
  for (int x = 0; x <= 6; ++x)
    cloud.points.push_back({static_cast<double>(x), 0, 0});
  const auto patch = dilated_patch(cloud, 0, 3, 2);
  CHECK(patch.members == std::vector<std::size_t>{0, 2, 4, 6});
  CHECK(patch.dilation == 2);
}

TEST_CASE("dilated_patch with d=1 equals build_patch") {
  const auto cloud = random_cloud(40, 77);
  CHECK(dilated_patch(cloud, 5, 7, 1).members ==
        build_patch(cloud, 5, 7).members);
}

TEST_CASE("dilated_patch ranks match the oracle on random clouds") {
  const auto cloud = random_cloud(64, 5);
  for (std::size_t center : {std::size_t{0}, std::size_t{20}}) {
    const auto patch = dilated_patch(cloud, center, 10, 2);
    const auto ranked = knn_oracle(cloud, center, 20);
    for (std::size_t i = 0; i < 10; ++i)
      CHECK(patch.members[i + 1] == ranked[2 * i + 1]);
  }
}

TEST_CASE("dilated_patch validates the reach") {
  const auto cloud = random_cloud(10, 1);
  CHECK_THROWS_AS(dilated_patch(cloud, 0, 5, 2), std::invalid_argument);
  CHECK_NOTHROW(dilated_patch(cloud, 0, 4, 2));
}

TEST_CASE("rotations are orthonormal with unit determinant") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto rot = random_rotation(seed, {0.5, -1, 2});
    const auto& m = rot.matrix;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += m[k][i] * m[k][j];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    }
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    CHECK(std::abs(det - 1.0) < 1e-12);
  }
}

TEST_CASE("zero angle gives the identity rotation") {
  const auto rot = rotation_from_axis_angle({0.3, 0.4, 0.5}, 0.0, {0, 0, 0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(rot.matrix[i][j] == doctest::Approx(i == j ? 1.0 : 0.0));
}

TEST_CASE("random_rotation is deterministic in the seed") {
  const auto a = random_rotation(42, {0, 0, 0});
  const auto b = random_rotation(42, {0, 0, 0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(a.matrix[i][j] == b.matrix[i][j]);
}

TEST_CASE("apply_rotation preserves pairwise distances") {
  const auto cloud = random_cloud(30, 4);
  const auto patch = build_patch(cloud, 3, 8);
  const auto coords = patch_coordinates(cloud, patch);
  const auto rot = random_rotation(9, centroid(coords));
  const auto rotated = apply_rotation(cloud, patch, rot);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (std::size_t j = i + 1; j < coords.size(); ++j) {
      CHECK(std::abs(distance(coords[i], coords[j]) -
                     distance(rotated[i], rotated[j])) < 1e-9);
    }
  }
}

TEST_CASE("apply_rotation with identity keeps coordinates") {
  const auto cloud = random_cloud(10, 2);
  const auto patch = build_patch(cloud, 0, 4);
  const auto rot = rotation_from_axis_angle({0, 0, 1}, 0.0, {0, 0, 0});
  const auto rotated = apply_rotation(cloud, patch, rot);
  const auto coords = patch_coordinates(cloud, patch);
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (int d = 0; d < 3; ++d) CHECK(rotated[i][d] == coords[i][d]);
}

TEST_CASE("half-turn about the centroid swaps a two-point patch") {
  PointCloud cloud;
  cloud.points = {{1, 0, 0}, {3, 0, 0}};
  Patch patch;
  patch.center = 0;
  patch.members = {0, 1};
  const auto rot = rotation_from_axis_angle(
      {0, 0, 1}, 3.141592653589793238462643, {2, 0, 0});
  const auto rotated = apply_rotation(cloud, patch, rot);
  CHECK(rotated[0][0] == doctest::Approx(3.0));
  CHECK(rotated[1][0] == doctest::Approx(1.0));
}

TEST_CASE("sphere samples sit on the unit sphere") {
  ShapeSpec spec{ShapeKind::sphere, 128, 0.0, 7};
  const auto cloud = generate_shape(spec);
  for (const auto& p : cloud.points) {
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    CHECK(std::abs(r - 1.0) < 1e-9);
  }
  CHECK_FALSE(cloud.has_labels());
}

TEST_CASE("cylinder labels follow the documented height rule") {
  ShapeSpec spec{ShapeKind::cylinder, 256, 0.0, 3};
  const auto cloud = generate_shape(spec);
  REQUIRE(cloud.has_labels());
  double max_abs_z = 0.0;
  for (const auto& p : cloud.points)
    max_abs_z = std::max(max_abs_z, std::abs(p[2]));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const bool cap = std::abs(cloud.points[i][2]) > 0.925 * max_abs_z;
    if (cap) {
      CHECK((cloud.labels[i] == 1 || cloud.labels[i] == 2));
      CHECK((cloud.points[i][2] > 0 ? cloud.labels[i] == 1
                                    : cloud.labels[i] == 2));
    } else {
      CHECK(cloud.labels[i] == 0);
    }
  }
}

TEST_CASE("cross carries five parts") {
  ShapeSpec spec{ShapeKind::cross, 320, 0.0, 5};
  const auto cloud = generate_shape(spec);
  REQUIRE(cloud.has_labels());
  std::set<int> parts(cloud.labels.begin(), cloud.labels.end());
  CHECK(parts == std::set<int>{0, 1, 2, 3, 4});
}

TEST_CASE("generate_shape is deterministic and centered to unit radius") {
  for (auto kind : {ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder,
                    ShapeKind::torus, ShapeKind::cross}) {
    ShapeSpec spec{kind, 64, 0.01, 99};
    const auto a = generate_shape(spec);
    const auto b = generate_shape(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (int d = 0; d < 3; ++d) REQUIRE(a.points[i][d] == b.points[i][d]);

    ShapeSpec clean{kind, 64, 0.0, 99};
    const auto c = generate_shape(clean);
    double max_norm = 0.0;
    for (const auto& p : c.points) {
      max_norm = std::max(
          max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("generate_shape validates its spec") {
  CHECK_THROWS_AS(generate_shape({ShapeKind::sphere, 4, 0.0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_shape({ShapeKind::sphere, 32, -0.1, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(shape_kind_from_string("pyramid"), std::invalid_argument);
}

TEST_CASE("xyz round-trips exactly") {
  auto cloud = random_cloud(33, 15);
  cloud.points[0] = {1.0 / 3.0, -2.0e-17, 123456.789};
  const auto dir = std::filesystem::temp_directory_path() / "scpc_geo_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "round.xyz";

  write_xyz(cloud, path);
  const auto back = read_xyz(path);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d) CHECK(back.points[i][d] == cloud.points[i][d]);

  cloud.labels.assign(cloud.size(), 0);
  cloud.labels[7] = 3;
  write_xyz(cloud, path);
  const auto labeled = read_xyz(path);
  CHECK(labeled.labels == cloud.labels);
  std::filesystem::remove_all(dir);
}

TEST_CASE("xyz parses plain and labeled lines") {
  const auto plain = parse_xyz("0 0 0\n", "test");
  CHECK(plain.size() == 1);
  CHECK_FALSE(plain.has_labels());

  const auto labeled = parse_xyz("1 2 3 7\n", "test");
  CHECK(labeled.points[0][0] == 1.0);
  CHECK(labeled.labels[0] == 7);

  const auto commented = parse_xyz("# header\n0 0 1\n\n2 0 0\n", "test");
  CHECK(commented.size() == 2);
}

TEST_CASE("xyz reports malformed lines with their number") {
  try {
    parse_xyz("0 0 0\n0 0\n", "bad.xyz");
    FAIL("expected parse error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("bad.xyz:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_xyz("1 2 3 x\n", "t"), IoError);
  CHECK_THROWS_AS(parse_xyz("1 2 3 4 5\n", "t"), IoError);
  CHECK_THROWS_AS(parse_xyz("1 2 3\n1 2 3 4\n", "t"), IoError);
  CHECK_THROWS_AS(parse_xyz("# only comments\n", "t"), IoError);
}

TEST_CASE("format_double survives a 17-digit round trip") {
  for (double v : {1.0 / 3.0, 2.0e-300, -7.123456789012345e8, 0.1}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}
