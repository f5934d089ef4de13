#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scpc::geometry {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double distance(const Vec3& a, const Vec3& b);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> labels;  // empty, or exactly one label per point

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return !labels.empty(); }

  // N >= 1, finite coordinates, label count matches when present.
  void validate() const;
};

// Local neighborhood: members[0] is the center, the rest are neighbors in
// ascending distance order (ties by ascending point index).
struct Patch {
  std::size_t center = 0;
  std::vector<std::size_t> members;
  int dilation = 1;

  std::size_t neighbor_count() const { return members.size() - 1; }
};

struct RigidRotation {
  std::array<std::array<double, 3>, 3> matrix;
  Vec3 pivot;
};

enum class ShapeKind { sphere, cube, cylinder, torus, cross };

ShapeKind shape_kind_from_string(const std::string& name);
const char* to_string(ShapeKind kind);

// Number of part labels a generated shape of this kind carries (0 = none).
int part_count(ShapeKind kind);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  std::size_t n_points = 256;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

// Iterative farthest point sampling. seed == 0 starts from the point nearest
// the centroid; any other seed picks a uniform random start. Ties always go
// to the lowest index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t m,
                                               std::uint64_t seed);

// k nearest neighbors of cloud.points[query], query excluded, sorted by
// (distance, index). Uses a kd-tree for N >= 32, exhaustive search below.
std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query,
                             std::size_t k);

Patch build_patch(const PointCloud& cloud, std::size_t center, std::size_t k);

// Keeps neighbors at ranks d, 2d, ..., kd of the k*d nearest.
Patch dilated_patch(const PointCloud& cloud, std::size_t center, std::size_t k,
                    int d);

RigidRotation rotation_from_axis_angle(const Vec3& axis, double angle,
                                       const Vec3& pivot);

// Axis uniform on the unit sphere, angle uniform in [0, 2pi).
RigidRotation random_rotation(std::uint64_t seed, const Vec3& pivot);

// Member coordinates mapped through p -> R (p - pivot) + pivot.
std::vector<Vec3> apply_rotation(const PointCloud& cloud, const Patch& patch,
                                 const RigidRotation& rotation);

Vec3 centroid(const std::vector<Vec3>& points);

std::vector<Vec3> patch_coordinates(const PointCloud& cloud,
                                    const Patch& patch);

// Deterministic surface sampling. Shapes are constructed centered at the
// origin and scaled so the farthest sampled point has norm 1, then jittered
// with Gaussian noise of the requested sigma.
//
// Labeled kinds:
//   cylinder: 0 = lateral body, 1 = top cap, 2 = bottom cap. Body points are
//     sampled with |z| <= 0.45 h and caps sit at |z| = 0.5 h, so for
//     sigma = 0 a point is a cap point iff |z| > 0.925 * max |z| of the cloud.
//   cross: 0 = hub, 1..4 = +x/-x/+y/-y arms, sampled on the component boxes.
PointCloud generate_shape(const ShapeSpec& spec);

// XYZ text format: one point per line, "x y z" or "x y z label", lines
// starting with '#' are comments, floats printed with 17 significant digits.
PointCloud read_xyz(const std::filesystem::path& path);
void write_xyz(const PointCloud& cloud, const std::filesystem::path& path);
std::string render_xyz(const PointCloud& cloud);
PointCloud parse_xyz(const std::string& text, const std::string& origin);

}  // namespace scpc::geometry
