#include "mapmerge/scenario.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mapmerge/errors.hpp"
#include "mapmerge/kd_tree.hpp"
#include "mapmerge/random.hpp"
#include "mapmerge/threading.hpp"

namespace mapmerge {

namespace {

constexpr double kPi = std::numbers::pi;

// Substream ids under the scenario seed. Adding a consumer must never shift
// another's draws, so every randomized aspect owns a fixed stream.
constexpr uint64_t kStreamGround = 1;
constexpr uint64_t kStreamCells = 2;
constexpr uint64_t kStreamDriftCentral = 3;
constexpr uint64_t kStreamDriftQuery = 4;
constexpr uint64_t kStreamScansCentral = 5;
constexpr uint64_t kStreamScansQuery = 6;
constexpr uint64_t kStreamDynamics = 7;
constexpr uint64_t kStreamLoopsCentral = 8;
constexpr uint64_t kStreamLoopsQuery = 9;
constexpr uint64_t kStreamTransients = 10;

// Uniform in (0, 1] from a hash value; the +1 keeps log() finite.
double hash_u01(uint64_t h) {
  return static_cast<double>((h >> 11) + 1) * 0x1.0p-53;
}

// Three standard normals keyed by `key` alone (Box-Muller over hashed
// uniforms). Order-independent, so a point's noise does not depend on which
// other points a scan kept.
Eigen::Vector3d hash_gauss3(uint64_t key) {
  const double ua = hash_u01(derive_seed(key, 0));
  const double ub = hash_u01(derive_seed(key, 1));
  const double uc = hash_u01(derive_seed(key, 2));
  const double ud = hash_u01(derive_seed(key, 3));
  const double ra = std::sqrt(-2.0 * std::log(ua));
  const double rc = std::sqrt(-2.0 * std::log(uc));
  return {ra * std::cos(2.0 * kPi * ub), ra * std::sin(2.0 * kPi * ub),
          rc * std::cos(2.0 * kPi * ud)};
}

// --- world construction -----------------------------------------------------

void append_box(Rng& rng, const Eigen::Vector2d& center,
                std::vector<Eigen::Vector3d>& out) {
  const double yaw = rng.uniform(0.0, 2.0 * kPi);
  const double hx = rng.uniform(1.0, 2.5);
  const double hy = rng.uniform(1.0, 2.5);
  const double height = rng.uniform(2.5, 4.5);
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(yaw).toRotationMatrix();
  const double step = 0.45;

  const auto emit = [&](double lx, double ly, double lz) {
    // Small jitter breaks the lattice regularity that makes pair-angle
    // histograms degenerate.
    const Eigen::Vector2d local(lx + rng.uniform(-0.05, 0.05),
                                ly + rng.uniform(-0.05, 0.05));
    const Eigen::Vector2d w = center + rot * local;
    out.emplace_back(w.x(), w.y(), lz + rng.uniform(-0.05, 0.05));
  };

  // Four side faces.
  for (double z = 0.2; z <= height; z += step) {
    for (double x = -hx; x <= hx; x += step) {
      emit(x, -hy, z);
      emit(x, hy, z);
    }
    for (double y = -hy + step; y <= hy - step; y += step) {
      emit(-hx, y, z);
      emit(hx, y, z);
    }
  }
  // Roof.
  for (double x = -hx; x <= hx; x += 0.5) {
    for (double y = -hy; y <= hy; y += 0.5) {
      emit(x, y, height);
    }
  }
}

void append_wall(Rng& rng, const Eigen::Vector2d& center,
                 std::vector<Eigen::Vector3d>& out) {
  const double yaw = rng.uniform(0.0, 2.0 * kPi);
  const double half_len = rng.uniform(2.0, 3.5);
  const double height = rng.uniform(2.0, 3.5);
  const Eigen::Vector2d dir(std::cos(yaw), std::sin(yaw));
  const double step = 0.4;
  for (double s = -half_len; s <= half_len; s += step) {
    for (double z = 0.2; z <= height; z += step) {
      const Eigen::Vector2d w =
          center + dir * (s + rng.uniform(-0.05, 0.05));
      out.emplace_back(w.x(), w.y(), z + rng.uniform(-0.05, 0.05));
    }
  }
}

void append_poles(Rng& rng, const Eigen::Vector2d& center,
                  std::vector<Eigen::Vector3d>& out) {
  const int n = 3 + static_cast<int>(rng.index(4));
  for (int p = 0; p < n; ++p) {
    const Eigen::Vector2d c =
        center + Eigen::Vector2d(rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5));
    const double radius = rng.uniform(0.12, 0.3);
    const double height = rng.uniform(2.5, 4.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    for (double z = 0.2; z <= height; z += 0.35) {
      for (int a = 0; a < 6; ++a) {
        const double ang = phase + 2.0 * kPi * a / 6.0 + rng.uniform(-0.1, 0.1);
        out.emplace_back(c.x() + radius * std::cos(ang),
                         c.y() + radius * std::sin(ang),
                         z + rng.uniform(-0.05, 0.05));
      }
    }
  }
}

// Small dense blob (parked-vehicle scale) used for transient clutter.
void append_blob(Rng& rng, const Eigen::Vector2d& center,
                 std::vector<Eigen::Vector3d>& out) {
  const double yaw = rng.uniform(0.0, 2.0 * kPi);
  const double hx = rng.uniform(0.5, 1.0);
  const double hy = rng.uniform(0.4, 0.8);
  const double height = rng.uniform(1.0, 1.8);
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(yaw).toRotationMatrix();
  for (double x = -hx; x <= hx; x += 0.3) {
    for (double y = -hy; y <= hy; y += 0.3) {
      for (double z = 0.15; z <= height; z += 0.3) {
        const Eigen::Vector2d w =
            center + rot * Eigen::Vector2d(x + rng.uniform(-0.04, 0.04),
                                           y + rng.uniform(-0.04, 0.04));
        out.emplace_back(w.x(), w.y(), z + rng.uniform(-0.04, 0.04));
      }
    }
  }
}

void append_structure(uint64_t structure_seed, const Eigen::Vector2d& center,
                      std::vector<Eigen::Vector3d>& out) {
  Rng rng(structure_seed);
  const Eigen::Vector2d c =
      center + Eigen::Vector2d(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
  const double type = rng.uniform01();
  if (type < 0.45) {
    append_box(rng, c, out);
  } else if (type < 0.75) {
    append_wall(rng, c, out);
  } else {
    append_poles(rng, c, out);
  }
}

struct Bounds {
  double x_lo, x_hi, y_lo, y_hi;
};

struct CellStructure {
  uint64_t seed = 0;       // randomization stream of this structure
  Eigen::Vector2d center;  // cell center; the structure jitters around it
};

std::vector<CellStructure> plan_structures(const ScenarioSpec& spec,
                                           const Bounds& b, uint64_t seed) {
  const uint64_t cell_seed = derive_seed(seed, kStreamCells);
  const int nx = static_cast<int>(std::ceil((b.x_hi - b.x_lo) / spec.structure_cell));
  const int ny = static_cast<int>(std::ceil((b.y_hi - b.y_lo) / spec.structure_cell));
  std::vector<CellStructure> cells;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const uint64_t s =
          derive_seed(cell_seed, static_cast<uint64_t>(j) * nx + i);
      if (hash_u01(derive_seed(s, 0)) > spec.structure_density) continue;
      CellStructure cs;
      cs.seed = derive_seed(s, 1);
      cs.center = Eigen::Vector2d(b.x_lo + (i + 0.5) * spec.structure_cell,
                                  b.y_lo + (j + 0.5) * spec.structure_cell);
      cells.push_back(cs);
    }
  }
  return cells;
}

std::vector<Eigen::Vector3d> make_ground(const ScenarioSpec& spec,
                                         const Bounds& b, uint64_t seed) {
  const uint64_t ground_seed = derive_seed(seed, kStreamGround);
  const int nx = static_cast<int>(std::ceil((b.x_hi - b.x_lo) / spec.ground_spacing));
  const int ny = static_cast<int>(std::ceil((b.y_hi - b.y_lo) / spec.ground_spacing));
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<std::size_t>(nx) * ny);
  const double jitter = 0.3 * spec.ground_spacing;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const uint64_t h =
          derive_seed(ground_seed, static_cast<uint64_t>(j) * nx + i);
      const double jx = (hash_u01(derive_seed(h, 0)) - 0.5) * 2.0 * jitter;
      const double jy = (hash_u01(derive_seed(h, 1)) - 0.5) * 2.0 * jitter;
      out.emplace_back(b.x_lo + (i + 0.5) * spec.ground_spacing + jx,
                       b.y_lo + (j + 0.5) * spec.ground_spacing + jy, 0.0);
    }
  }
  return out;
}

// --- overlap control ---------------------------------------------------------

// Area fraction shared by two equal disks of radius rho at center distance s.
double lens_fraction(double s, double rho) {
  if (s <= 0.0) return 1.0;
  if (s >= 2.0 * rho) return 0.0;
  const double area = 2.0 * rho * rho * std::acos(s / (2.0 * rho)) -
                      0.5 * s * std::sqrt(4.0 * rho * rho - s * s);
  return area / (kPi * rho * rho);
}

// Center separation of the two coverage disks that yields the requested
// overlap fraction; each session covers roughly a disk of radius
// path_radius + sensor_range around its path center.
double separation_for_overlap(const ScenarioSpec& spec) {
  const double rho = spec.path_radius + spec.sensor_range;
  if (spec.overlap >= 1.0) return 0.0;
  if (spec.overlap <= 0.0) return 2.0 * rho + spec.sensor_range;
  double lo = 0.0, hi = 2.0 * rho;  // lens_fraction is decreasing in s
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (lens_fraction(mid, rho) > spec.overlap ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// --- trajectories ------------------------------------------------------------

// One counterclockwise lap; heading along the tangent.
std::vector<Pose> circle_trajectory(const Eigen::Vector2d& center,
                                    double radius, int nodes) {
  std::vector<Pose> out(nodes);
  for (int i = 0; i < nodes; ++i) {
    const double theta = 2.0 * kPi * i / nodes;
    Pose p;
    p.R = yaw_rotation(theta + kPi / 2.0);
    p.t = Eigen::Vector3d(center.x() + radius * std::cos(theta),
                          center.y() + radius * std::sin(theta), 0.0);
    out[i] = p;
  }
  return out;
}

// Dead-reckoned estimates: the true relative motion of each step corrupted by
// noise proportional to the step length.
std::vector<Pose> apply_drift(const std::vector<Pose>& gt, double drift,
                              uint64_t seed) {
  if (drift <= 0.0) return gt;
  std::vector<Pose> est(gt.size());
  est[0] = gt[0];
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
    const Pose d = between(gt[i], gt[i + 1]);
    const double len = d.t.norm();
    Tangent xi;
    const double sigma_rot = drift * len * 0.02;
    const double sigma_trans = drift * len;
    for (int k = 0; k < 3; ++k) xi[k] = rng.normal(0.0, sigma_rot);
    for (int k = 3; k < 6; ++k) xi[k] = rng.normal(0.0, sigma_trans);
    est[i + 1] = compose(est[i], compose(d, exp_se3(xi)));
  }
  return est;
}

// --- scans -------------------------------------------------------------------

// Scan of `world` taken at the true global pose: range-limited, sector-masked,
// per-point keep/noise keyed by (node, world point index) so a wider field of
// view yields a strict superset of the sector scan.
PointCloud take_scan(const KdTree3& world, const Pose& gt_global,
                     const ScenarioSpec& spec, double fov_deg,
                     uint64_t node_seed) {
  const auto visible = world.radius(gt_global.t, spec.sensor_range);
  const bool omni = fov_deg >= 360.0;
  const double half_fov = 0.5 * fov_deg * kPi / 180.0;
  const Eigen::Matrix3d rt = gt_global.R.transpose();

  PointCloud scan;
  scan.points.reserve(visible.size());
  for (const uint32_t idx : visible) {
    const Eigen::Vector3d body = rt * (world.points()[idx] - gt_global.t);
    if (!omni && std::abs(std::atan2(body.y(), body.x())) > half_fov) continue;
    const uint64_t key = derive_seed(node_seed, 2ull * idx);
    if (hash_u01(key) > spec.scan_keep_fraction) continue;
    const Eigen::Vector3d noise =
        spec.scan_noise_sigma * hash_gauss3(derive_seed(node_seed, 2ull * idx + 1));
    scan.points.push_back(body + noise);
  }
  return scan;
}

std::vector<IntraLoop> make_intra_loops(const std::vector<Pose>& gt,
                                        const ScenarioSpec& spec,
                                        uint64_t seed) {
  const int n = static_cast<int>(gt.size());
  const int min_gap =
      spec.intra_loop_min_gap > 0 ? spec.intra_loop_min_gap : n / 2;
  Rng rng(seed);
  std::vector<IntraLoop> loops;
  for (int i = 0; i < n; i += spec.intra_loop_stride) {
    for (int j = i + min_gap + 1; j < n; ++j) {
      if ((gt[i].t - gt[j].t).norm() >= spec.intra_loop_radius) continue;
      Tangent xi;
      for (int k = 0; k < 3; ++k) xi[k] = rng.normal(0.0, spec.intra_loop_sigma_rot);
      for (int k = 3; k < 6; ++k) xi[k] = rng.normal(0.0, spec.intra_loop_sigma_trans);
      IntraLoop loop;
      loop.a = static_cast<uint32_t>(i);
      loop.b = static_cast<uint32_t>(j);
      loop.z = compose(between(gt[i], gt[j]), exp_se3(xi));
      loop.covariance =
          diagonal_covariance(spec.intra_loop_sigma_rot * spec.intra_loop_sigma_rot,
                              spec.intra_loop_sigma_trans * spec.intra_loop_sigma_trans);
      loops.push_back(loop);
    }
  }
  return loops;
}

void validate(const ScenarioSpec& spec) {
  const auto fail = [](const char* what) { throw std::invalid_argument(what); };
  if (spec.nodes_per_session < 2) fail("scenario: need at least 2 nodes per session");
  if (!(spec.path_radius > 0.0)) fail("scenario: path_radius must be positive");
  if (!(spec.sensor_range > 0.0)) fail("scenario: sensor_range must be positive");
  if (!(spec.ground_spacing > 0.0)) fail("scenario: ground_spacing must be positive");
  if (!(spec.structure_cell > 0.0)) fail("scenario: structure_cell must be positive");
  if (spec.structure_density < 0.0 || spec.structure_density > 1.0)
    fail("scenario: structure_density must lie in [0, 1]");
  if (!(spec.scan_keep_fraction > 0.0) || spec.scan_keep_fraction > 1.0)
    fail("scenario: scan_keep_fraction must lie in (0, 1]");
  if (spec.scan_noise_sigma < 0.0) fail("scenario: scan_noise_sigma must be non-negative");
  if (spec.overlap < 0.0 || spec.overlap > 1.0)
    fail("scenario: overlap must lie in [0, 1]");
  if (spec.drift_per_meter < 0.0) fail("scenario: drift must be non-negative");
  if (!(spec.central_fov_deg > 0.0) || !(spec.query_fov_deg > 0.0))
    fail("scenario: fields of view must be positive");
  if (spec.changed_structure_fraction < 0.0 || spec.changed_structure_fraction > 1.0)
    fail("scenario: changed_structure_fraction must lie in [0, 1]");
  if (spec.transient_clusters < 0) fail("scenario: transient_clusters must be non-negative");
  if (spec.intra_loop_stride < 1) fail("scenario: intra_loop_stride must be positive");
  if (!(spec.intra_loop_radius > 0.0)) fail("scenario: intra_loop_radius must be positive");
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec) {
  validate(spec);

  const double separation = separation_for_overlap(spec);
  const double rho = spec.path_radius + spec.sensor_range;
  const double margin = 2.0;
  const Bounds bounds{-rho - margin, separation + rho + margin, -rho - margin,
                      rho + margin};

  // World content shared by both sessions, then the query-session variant
  // with swapped structures and transient clutter.
  const std::vector<Eigen::Vector3d> ground = make_ground(spec, bounds, spec.seed);
  const std::vector<CellStructure> cells = plan_structures(spec, bounds, spec.seed);

  Scenario out;
  out.world_central.points = ground;
  for (const CellStructure& c : cells) {
    append_structure(c.seed, c.center, out.world_central.points);
  }

  const uint64_t dyn_seed = derive_seed(spec.seed, kStreamDynamics);
  out.world_query.points = ground;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const bool swap =
        hash_u01(derive_seed(dyn_seed, i)) <= spec.changed_structure_fraction;
    const uint64_t seed = swap ? derive_seed(cells[i].seed, 777) : cells[i].seed;
    append_structure(seed, cells[i].center, out.world_query.points);
  }
  if (spec.transient_clusters > 0) {
    Rng rng(derive_seed(spec.seed, kStreamTransients));
    const Eigen::Vector2d query_center(separation, 0.0);
    for (int j = 0; j < spec.transient_clusters; ++j) {
      const double ang = 2.0 * kPi * j / spec.transient_clusters +
                         rng.uniform(-0.3, 0.3);
      const double r = spec.path_radius + rng.uniform(-6.0, 6.0);
      const Eigen::Vector2d c =
          query_center + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
      append_blob(rng, c, out.world_query.points);
    }
  }

  // Ground truth: both paths in the central GT world frame; the query
  // session's own frame differs by t_gt.
  out.t_gt.R = yaw_rotation(spec.query_yaw_deg * kPi / 180.0);
  out.t_gt.t = spec.query_offset;

  const std::vector<Pose> gt_central_global = circle_trajectory(
      Eigen::Vector2d(0.0, 0.0), spec.path_radius, spec.nodes_per_session);
  const std::vector<Pose> gt_query_global = circle_trajectory(
      Eigen::Vector2d(separation, 0.0), spec.path_radius, spec.nodes_per_session);

  out.gt_central = gt_central_global;
  out.gt_query.resize(gt_query_global.size());
  const Pose t_gt_inv = inverse(out.t_gt);
  for (std::size_t i = 0; i < gt_query_global.size(); ++i) {
    out.gt_query[i] = compose(t_gt_inv, gt_query_global[i]);
  }

  const std::vector<Pose> est_central =
      apply_drift(out.gt_central, spec.drift_per_meter,
                  derive_seed(spec.seed, kStreamDriftCentral));
  const std::vector<Pose> est_query =
      apply_drift(out.gt_query, spec.drift_per_meter,
                  derive_seed(spec.seed, kStreamDriftQuery));

  const KdTree3 tree_central(out.world_central.points);
  const KdTree3 tree_query(out.world_query.points);

  const auto build_session = [&](Session& session, const char* id,
                                 SessionRole role, const KdTree3& world,
                                 const std::vector<Pose>& gt_global,
                                 const std::vector<Pose>& est, double fov,
                                 uint64_t scan_stream) {
    session.id = id;
    session.role = role;
    session.nodes.resize(est.size());
    const uint64_t scan_seed = derive_seed(spec.seed, scan_stream);
    parallel_for(0, est.size(), [&](std::size_t i) {
      session.nodes[i].pose = est[i];
      session.nodes[i].scan =
          take_scan(world, gt_global[i], spec, fov, derive_seed(scan_seed, i));
    });
  };

  build_session(out.central, "central", SessionRole::kCentral, tree_central,
                gt_central_global, est_central, spec.central_fov_deg,
                kStreamScansCentral);
  build_session(out.query, "query", SessionRole::kQuery, tree_query,
                gt_query_global, est_query, spec.query_fov_deg,
                kStreamScansQuery);

  out.central.intra_loops = make_intra_loops(
      out.gt_central, spec, derive_seed(spec.seed, kStreamLoopsCentral));
  out.query.intra_loops = make_intra_loops(
      out.gt_query, spec, derive_seed(spec.seed, kStreamLoopsQuery));

  return out;
}

}  // namespace mapmerge
