#include "core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "core/errors.hpp"
#include "core/io_util.hpp"
#include "core/rng.hpp"

namespace scpc::geometry {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Exhaustive kNN is used below this size; the kd-tree above it.
constexpr std::size_t kKdTreeThreshold = 32;

// Ascending (squared distance, index); the global tie-break rule.
struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& other) const {
    if (d2 != other.d2) return d2 < other.d2;
    return index < other.index;
  }
};

// Bounded, sorted candidate buffer. k stays small here, so ordered
// insertion beats a heap and keeps the tie-break explicit.
class NearestSet {
 public:
  explicit NearestSet(std::size_t k) : k_(k) { items_.reserve(k); }

  void offer(const Candidate& c) {
    if (items_.size() == k_ && !(c < items_.back())) return;
    auto pos = std::upper_bound(items_.begin(), items_.end(), c);
    items_.insert(pos, c);
    if (items_.size() > k_) items_.pop_back();
  }

  bool full() const { return items_.size() == k_; }
  double worst_d2() const { return items_.back().d2; }
  const std::vector<Candidate>& items() const { return items_; }

 private:
  std::size_t k_;
  std::vector<Candidate> items_;
};

class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
    order_.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * points.size() / kLeafSize + 2);
    root_ = build(0, points.size(), 0);
  }

  void query(const Vec3& target, std::size_t exclude, NearestSet& out) const {
    search(root_, target, exclude, out);
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    int left = -1;
    int right = -1;
    int dim = -1;              // -1 marks a leaf
    double split = 0.0;
    std::size_t begin = 0, end = 0;  // leaf range into order_
  };

  int build(std::size_t begin, std::size_t end, int depth) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    const int dim = depth % 3;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       if (points_[a][dim] != points_[b][dim])
                         return points_[a][dim] < points_[b][dim];
                       return a < b;
                     });
    node.dim = dim;
    node.split = points_[order_[mid]][dim];
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int id, const Vec3& target, std::size_t exclude,
              NearestSet& out) const {
    const Node& node = nodes_[id];
    if (node.dim < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        out.offer({squared_distance(points_[idx], target), idx});
      }
      return;
    }
    const double delta = target[node.dim] - node.split;
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, target, exclude, out);
    // An equal-distance candidate with a lower index can still displace the
    // current worst, so the far side is pruned only on strict excess.
    if (!out.full() || delta * delta <= out.worst_d2())
      search(far, target, exclude, out);
  }

  const std::vector<Vec3>& points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

std::vector<std::size_t> knn_exhaustive(const PointCloud& cloud,
                                        std::size_t query, std::size_t k) {
  std::vector<Candidate> all;
  all.reserve(cloud.size() - 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (i == query) continue;
    all.push_back({squared_distance(cloud.points[i], cloud.points[query]), i});
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = all[i].index;
  return out;
}

void normalize_in_place(Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n < 1e-300) throw std::invalid_argument("rotation axis has zero norm");
  v[0] /= n;
  v[1] /= n;
  v[2] /= n;
}

void center_and_scale(std::vector<Vec3>& pts) {
  double max_norm = 0.0;
  for (const auto& p : pts) {
    max_norm = std::max(max_norm,
                        std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (max_norm < 1e-300) return;
  for (auto& p : pts) {
    p[0] /= max_norm;
    p[1] /= max_norm;
    p[2] /= max_norm;
  }
}

void add_jitter(std::vector<Vec3>& pts, double sigma, Rng& rng) {
  for (auto& p : pts) {
    p[0] += sigma * rng.normal();
    p[1] += sigma * rng.normal();
    p[2] += sigma * rng.normal();
  }
}

// Uniform point on the surface of an axis-aligned box with half extents he,
// centered at c. Faces are chosen proportionally to their area.
Vec3 sample_box_surface(const Vec3& c, const Vec3& he, Rng& rng) {
  const double ax = he[1] * he[2];  // x-normal face area / 4
  const double ay = he[0] * he[2];
  const double az = he[0] * he[1];
  const double total = 2.0 * (ax + ay + az);
  const double u = rng.uniform() * total;
  const double su = rng.uniform(-1.0, 1.0);
  const double sv = rng.uniform(-1.0, 1.0);
  Vec3 p = c;
  if (u < 2.0 * ax) {
    p[0] += (u < ax ? he[0] : -he[0]);
    p[1] += su * he[1];
    p[2] += sv * he[2];
  } else if (u < 2.0 * (ax + ay)) {
    p[1] += (u < 2.0 * ax + ay ? he[1] : -he[1]);
    p[0] += su * he[0];
    p[2] += sv * he[2];
  } else {
    p[2] += (u < 2.0 * (ax + ay) + az ? he[2] : -he[2]);
    p[0] += su * he[0];
    p[1] += sv * he[1];
  }
  return p;
}

PointCloud make_sphere(std::size_t n, Rng& rng) {
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    cloud.points.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return cloud;
}

PointCloud make_cube(std::size_t n, Rng& rng) {
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cloud.points.push_back(sample_box_surface({0, 0, 0}, {1, 1, 1}, rng));
  return cloud;
}

PointCloud make_cylinder(std::size_t n, Rng& rng) {
  // Radius 0.5, height 2. The lateral band stops at |z| = 0.45 h, leaving a
  // clear margin to the caps at |z| = 0.5 h (see header for the label rule).
  const double radius = 0.5;
  const double half_h = 1.0;
  const double band = 0.9 * half_h;
  const double lateral_area = 2.0 * kPi * radius * 2.0 * band;
  const double cap_area = kPi * radius * radius;
  const double total = lateral_area + 2.0 * cap_area;
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    if (u < lateral_area) {
      const double z = rng.uniform(-band, band);
      cloud.points.push_back(
          {radius * std::cos(theta), radius * std::sin(theta), z});
      cloud.labels.push_back(0);
    } else {
      const bool top = u < lateral_area + cap_area;
      const double rho = radius * std::sqrt(rng.uniform());
      cloud.points.push_back({rho * std::cos(theta), rho * std::sin(theta),
                              top ? half_h : -half_h});
      cloud.labels.push_back(top ? 1 : 2);
    }
  }
  return cloud;
}

PointCloud make_torus(std::size_t n, Rng& rng) {
  const double major = 0.7;
  const double minor = 0.3;
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Rejection on the tube angle corrects for the area distortion.
    double phi;
    for (;;) {
      phi = rng.uniform(0.0, 2.0 * kPi);
      const double accept = (major + minor * std::cos(phi)) / (major + minor);
      if (rng.uniform() < accept) break;
    }
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double ring = major + minor * std::cos(phi);
    cloud.points.push_back({ring * std::cos(theta), ring * std::sin(theta),
                            minor * std::sin(phi)});
  }
  return cloud;
}

PointCloud make_cross(std::size_t n, Rng& rng) {
  // Hub cube plus four arms in the xy plane; points are sampled on each
  // component's own box surface, labeled by component.
  struct Part {
    Vec3 center;
    Vec3 half_extent;
    int label;
  };
  const double arm_half = 0.375;  // arms span [0.25, 1.0]
  const double arm_sect = 0.175;
  const std::vector<Part> parts = {
      {{0, 0, 0}, {0.25, 0.25, 0.25}, 0},
      {{0.25 + arm_half, 0, 0}, {arm_half, arm_sect, arm_sect}, 1},
      {{-0.25 - arm_half, 0, 0}, {arm_half, arm_sect, arm_sect}, 2},
      {{0, 0.25 + arm_half, 0}, {arm_sect, arm_half, arm_sect}, 3},
      {{0, -0.25 - arm_half, 0}, {arm_sect, arm_half, arm_sect}, 4},
  };
  double total_area = 0.0;
  std::vector<double> cumulative;
  for (const auto& part : parts) {
    const auto& he = part.half_extent;
    total_area +=
        8.0 * (he[0] * he[1] + he[1] * he[2] + he[0] * he[2]);
    cumulative.push_back(total_area);
  }
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total_area;
    std::size_t pick = 0;
    while (pick + 1 < parts.size() && u >= cumulative[pick]) ++pick;
    cloud.points.push_back(
        sample_box_surface(parts[pick].center, parts[pick].half_extent, rng));
    cloud.labels.push_back(parts[pick].label);
  }
  return cloud;
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt(squared_distance(a, b));
}

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud is empty");
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw std::invalid_argument("point cloud has non-finite coordinates");
  }
  if (!labels.empty() && labels.size() != points.size()) {
    throw std::invalid_argument(
        "label count " + std::to_string(labels.size()) +
        " does not match point count " + std::to_string(points.size()));
  }
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "cube") return ShapeKind::cube;
  if (name == "cylinder") return ShapeKind::cylinder;
  if (name == "torus") return ShapeKind::torus;
  if (name == "cross") return ShapeKind::cross;
  throw std::invalid_argument("unknown shape kind: " + name);
}

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cross: return "cross";
  }
  return "?";
}

int part_count(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::cylinder: return 3;
    case ShapeKind::cross: return 5;
    default: return 0;
  }
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t m,
                                               std::uint64_t seed) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) {
    throw std::invalid_argument("farthest_point_sample: m = " +
                                std::to_string(m) + " outside [1, " +
                                std::to_string(n) + "]");
  }

  std::size_t first;
  if (seed == 0) {
    const Vec3 c = centroid(cloud.points);
    first = 0;
    double best = squared_distance(cloud.points[0], c);
    for (std::size_t i = 1; i < n; ++i) {
      const double d2 = squared_distance(cloud.points[i], c);
      if (d2 < best) {
        best = d2;
        first = i;
      }
    }
  } else {
    Rng rng(seed);
    first = rng.uniform_index(n);
  }

  std::vector<std::size_t> centers;
  centers.reserve(m);
  centers.push_back(first);
  std::vector<double> min_d2(n);
  std::vector<char> chosen(n, 0);
  chosen[first] = 1;
  for (std::size_t i = 0; i < n; ++i)
    min_d2[i] = squared_distance(cloud.points[i], cloud.points[first]);

  while (centers.size() < m) {
    // Argmax over the not-yet-chosen points keeps the result distinct even
    // when coincident points drive the remaining distances to zero.
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i] && min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    centers.push_back(best);
    chosen[best] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(
          min_d2[i], squared_distance(cloud.points[i], cloud.points[best]));
    }
  }
  return centers;
}

std::vector<std::size_t> knn(const PointCloud& cloud, std::size_t query,
                             std::size_t k) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (query >= n)
    throw std::invalid_argument("knn: query index out of range");
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn: k = " + std::to_string(k) +
                                " outside [1, " + std::to_string(n - 1) + "]");
  }
  if (n < kKdTreeThreshold) return knn_exhaustive(cloud, query, k);

  KdTree3 tree(cloud.points);
  NearestSet nearest(k);
  tree.query(cloud.points[query], query, nearest);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (const auto& c : nearest.items()) out.push_back(c.index);
  return out;
}

Patch build_patch(const PointCloud& cloud, std::size_t center, std::size_t k) {
  Patch patch;
  patch.center = center;
  patch.members.reserve(k + 1);
  patch.members.push_back(center);
  const auto neighbors = knn(cloud, center, k);
  patch.members.insert(patch.members.end(), neighbors.begin(),
                       neighbors.end());
  patch.dilation = 1;
  return patch;
}

Patch dilated_patch(const PointCloud& cloud, std::size_t center, std::size_t k,
                    int d) {
  if (d < 1) throw std::invalid_argument("dilated_patch: dilation must be >= 1");
  if (k < 1) throw std::invalid_argument("dilated_patch: k must be >= 1");
  const std::size_t span = k * static_cast<std::size_t>(d);
  if (span > cloud.size() - 1) {
    throw std::invalid_argument(
        "dilated_patch: k*d = " + std::to_string(span) + " exceeds N-1 = " +
        std::to_string(cloud.size() - 1));
  }
  const auto neighbors = knn(cloud, center, span);
  Patch patch;
  patch.center = center;
  patch.members.reserve(k + 1);
  patch.members.push_back(center);
  for (std::size_t rank = d; rank <= span;
       rank += static_cast<std::size_t>(d)) {
    patch.members.push_back(neighbors[rank - 1]);
  }
  patch.dilation = d;
  return patch;
}

RigidRotation rotation_from_axis_angle(const Vec3& axis, double angle,
                                       const Vec3& pivot) {
  Vec3 u = axis;
  normalize_in_place(u);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double t = 1.0 - c;
  RigidRotation rot;
  rot.matrix = {{{c + u[0] * u[0] * t, u[0] * u[1] * t - u[2] * s,
                  u[0] * u[2] * t + u[1] * s},
                 {u[1] * u[0] * t + u[2] * s, c + u[1] * u[1] * t,
                  u[1] * u[2] * t - u[0] * s},
                 {u[2] * u[0] * t - u[1] * s, u[2] * u[1] * t + u[0] * s,
                  c + u[2] * u[2] * t}}};
  rot.pivot = pivot;
  return rot;
}

RigidRotation random_rotation(std::uint64_t seed, const Vec3& pivot) {
  Rng rng(seed);
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 axis = {r * std::cos(phi), r * std::sin(phi), z};
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  return rotation_from_axis_angle(axis, angle, pivot);
}

std::vector<Vec3> apply_rotation(const PointCloud& cloud, const Patch& patch,
                                 const RigidRotation& rotation) {
  std::vector<Vec3> out;
  out.reserve(patch.members.size());
  for (std::size_t idx : patch.members) {
    if (idx >= cloud.size())
      throw std::invalid_argument("apply_rotation: patch index out of range");
    const Vec3& p = cloud.points[idx];
    const Vec3 rel = {p[0] - rotation.pivot[0], p[1] - rotation.pivot[1],
                      p[2] - rotation.pivot[2]};
    Vec3 q;
    for (int row = 0; row < 3; ++row) {
      q[row] = rotation.matrix[row][0] * rel[0] +
               rotation.matrix[row][1] * rel[1] +
               rotation.matrix[row][2] * rel[2] + rotation.pivot[row];
    }
    out.push_back(q);
  }
  return out;
}

Vec3 centroid(const std::vector<Vec3>& points) {
  Vec3 c = {0, 0, 0};
  for (const auto& p : points) {
    c[0] += p[0];
    c[1] += p[1];
    c[2] += p[2];
  }
  const double n = static_cast<double>(points.size());
  return {c[0] / n, c[1] / n, c[2] / n};
}

std::vector<Vec3> patch_coordinates(const PointCloud& cloud,
                                    const Patch& patch) {
  std::vector<Vec3> out;
  out.reserve(patch.members.size());
  for (std::size_t idx : patch.members) out.push_back(cloud.points[idx]);
  return out;
}

PointCloud generate_shape(const ShapeSpec& spec) {
  if (spec.n_points < 8)
    throw std::invalid_argument("generate_shape: n_points must be >= 8");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("generate_shape: noise_sigma must be >= 0");
  Rng rng(mix_seed(spec.seed, 0x5ca9e5u, static_cast<int>(spec.kind)));
  PointCloud cloud;
  switch (spec.kind) {
    case ShapeKind::sphere: cloud = make_sphere(spec.n_points, rng); break;
    case ShapeKind::cube: cloud = make_cube(spec.n_points, rng); break;
    case ShapeKind::cylinder: cloud = make_cylinder(spec.n_points, rng); break;
    case ShapeKind::torus: cloud = make_torus(spec.n_points, rng); break;
    case ShapeKind::cross: cloud = make_cross(spec.n_points, rng); break;
  }
  center_and_scale(cloud.points);
  add_jitter(cloud.points, spec.noise_sigma, rng);
  cloud.validate();
  return cloud;
}

std::string render_xyz(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 60);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out += format_double(p[0]);
    out += ' ';
    out += format_double(p[1]);
    out += ' ';
    out += format_double(p[2]);
    if (cloud.has_labels()) {
      out += ' ';
      out += std::to_string(cloud.labels[i]);
    }
    out += '\n';
  }
  return out;
}

PointCloud parse_xyz(const std::string& text, const std::string& origin) {
  PointCloud cloud;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_labeled = false;
  bool saw_unlabeled = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x >> y >> z)) {
      throw IoError(origin + ":" + std::to_string(line_no) +
                    ": expected at least 3 numeric fields");
    }
    long label = 0;
    bool has_label = false;
    std::string rest;
    if (fields >> rest) {
      std::size_t consumed = 0;
      try {
        label = std::stol(rest, &consumed);
      } catch (const std::exception&) {
        consumed = 0;
      }
      if (consumed != rest.size()) {
        throw IoError(origin + ":" + std::to_string(line_no) +
                      ": malformed label field '" + rest + "'");
      }
      has_label = true;
      std::string extra;
      if (fields >> extra) {
        throw IoError(origin + ":" + std::to_string(line_no) +
                      ": unexpected trailing field '" + extra + "'");
      }
    }
    if (has_label) {
      saw_labeled = true;
      cloud.labels.push_back(static_cast<int>(label));
    } else {
      saw_unlabeled = true;
    }
    if (saw_labeled && saw_unlabeled) {
      throw IoError(origin + ":" + std::to_string(line_no) +
                    ": mixed labeled and unlabeled lines");
    }
    cloud.points.push_back({x, y, z});
  }
  if (cloud.points.empty()) throw IoError(origin + ": no points");
  cloud.validate();
  return cloud;
}

PointCloud read_xyz(const std::filesystem::path& path) {
  return parse_xyz(read_text_file(path), path.string());
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  cloud.validate();
  atomic_write_file(path, render_xyz(cloud));
}

}  // namespace scpc::geometry
