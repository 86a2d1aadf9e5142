// SPDX-License-Identifier: Apache-2.0
#include "ocular/calib.hpp"

#include "ocular/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

namespace ocular::calib {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using geom::Ray;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Mat3 normalizing_transform(std::span<const Vec2> pts) {
  Vec2 mean = Vec2::Zero();
  for (const Vec2& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const Vec2& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Mat3 t;
  t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return t;
}

Vec2 apply_h(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * p.homogeneous();
  return q.hnormalized();
}

// Rotation/translation packed as [axis-angle(3), t(3)].
void pack_pose(const RigidTransform& t, Eigen::Ref<VectorXd> out) {
  out.segment<3>(0) = geom::log_so3(t.rotation_matrix());
  out.segment<3>(3) = t.translation();
}

RigidTransform unpack_pose(const Eigen::Ref<const VectorXd>& x, const FrameId& from,
                           const FrameId& to) {
  return RigidTransform(geom::exp_so3(x.segment<3>(0)), x.segment<3>(3), from, to);
}

// Board pose from a homography mapping board (x, y) to normalized perspective
// coordinates.
RigidTransform pose_from_homography(const Mat3& h, const FrameId& from, const FrameId& to) {
  Vec3 h1 = h.col(0), h2 = h.col(1), h3 = h.col(2);
  double scale = 2.0 / (h1.norm() + h2.norm());
  if (h3.z() * scale < 0.0) scale = -scale;
  const Vec3 r1 = scale * h1, r2 = scale * h2, t = scale * h3;
  Mat3 r;
  r.col(0) = r1;
  r.col(1) = r2;
  r.col(2) = r1.cross(r2);
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return RigidTransform(Mat3(svd.matrixU() * fix * svd.matrixV().transpose()), t, from, to);
}

// Perspective-normalized coordinates of the viewing rays of pixels, keeping
// only rays comfortably in front of the camera.
struct NormalizedPoints {
  std::vector<Vec2> board;
  std::vector<Vec2> normalized;
};

NormalizedPoints normalize_for_homography(std::span<const Vec3> object, std::span<const Vec2> image,
                                          const CameraModel& cam) {
  NormalizedPoints out;
  for (std::size_t i = 0; i < object.size(); ++i) {
    Vec3 ray;
    try {
      ray = geom::unproject(cam, image[i]);
    } catch (const UndistortError&) {
      continue;
    }
    if (ray.z() < 0.05) continue;
    out.board.emplace_back(object[i].x(), object[i].y());
    out.normalized.push_back(ray.hnormalized());
  }
  return out;
}

double rms_from_cost(double cost, std::size_t points) {
  return points == 0 ? 0.0 : std::sqrt(2.0 * cost / static_cast<double>(points));
}

// Residual block of one projected board point under a pose increment:
// writes d r / d (delta_rot, t) given d pixel / d camera point.
void pose_jacobian(const Eigen::Matrix<double, 2, 3>& d_point, const Vec3& rotated,
                   Eigen::Ref<Eigen::Matrix<double, 2, 6>> out) {
  out.leftCols<3>() = -d_point * geom::skew(rotated);
  out.rightCols<3>() = d_point;
}

double board_normal_spread(std::span<const RigidTransform> poses) {
  double widest = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      widest = std::max(widest, geom::angle_between(poses[i].apply_direction(Vec3::UnitZ()),
                                                    poses[j].apply_direction(Vec3::UnitZ())));
    }
  }
  return widest;
}

// Fisheye focal initialization: for a pure equidistant model the correct
// focal length makes every view an exact projective image of the board.
double fisheye_focal_scan(std::span<const BoardView> views, int width, int height) {
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  auto homography_error = [&](double f) {
    CameraModel cam{geom::ModelKind::equidistant_fisheye, f, f, cx, cy, {0, 0, 0, 0}, width, height};
    double total = 0.0;
    std::size_t used = 0;
    for (const BoardView& v : views) {
      std::vector<Vec3> obj;
      std::vector<Vec2> img;
      for (const auto& c : v.correspondences) {
        obj.push_back(c.board);
        img.push_back(c.image);
      }
      const NormalizedPoints np = normalize_for_homography(obj, img, cam);
      if (np.board.size() < 6) {
        total += 1e6;
        continue;
      }
      Mat3 h;
      try {
        h = estimate_homography(np.board, np.normalized);
      } catch (const DegenerateError&) {
        total += 1e6;
        continue;
      }
      for (std::size_t i = 0; i < np.board.size(); ++i) {
        const Vec2 pred = apply_h(h, np.board[i]);
        // Compare on the unit sphere so wide-angle points are not over-weighted.
        const Vec3 a = pred.homogeneous().normalized();
        const Vec3 b = np.normalized[i].homogeneous().normalized();
        total += f * f * (a - b).squaredNorm();
        ++used;
      }
    }
    return used == 0 ? 1e300 : total / static_cast<double>(used);
  };

  double best_f = 0.0, best_err = std::numeric_limits<double>::infinity();
  const double lo = 0.1 * std::max(width, height), hi = 4.0 * std::max(width, height);
  const double ratio = 1.04;
  for (double f = lo; f <= hi; f *= ratio) {
    const double e = homography_error(f);
    if (e < best_err) {
      best_err = e;
      best_f = f;
    }
  }
  // Golden-section refinement within one grid step.
  double a = best_f / ratio, b = best_f * ratio;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = homography_error(c), fd = homography_error(d);
  for (int i = 0; i < 60 && (b - a) > 1e-9 * best_f; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = homography_error(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = homography_error(d);
    }
  }
  return 0.5 * (a + b);
}

std::pair<std::vector<Vec3>, std::vector<Vec2>> split(const BoardView& v) {
  std::vector<Vec3> obj;
  std::vector<Vec2> img;
  obj.reserve(v.correspondences.size());
  img.reserve(v.correspondences.size());
  for (const auto& c : v.correspondences) {
    obj.push_back(c.board);
    img.push_back(c.image);
  }
  return {std::move(obj), std::move(img)};
}

void require_view(const BoardView& v) {
  if (v.correspondences.size() < BoardView::kMinCorrespondences) {
    throw InputError("board view of camera '" + v.camera_id + "' has " +
                     std::to_string(v.correspondences.size()) + " correspondences, need at least " +
                     std::to_string(BoardView::kMinCorrespondences));
  }
}

}  // namespace

// --- data types --------------------------------------------------------------

std::string LedId::str() const { return eye + ":" + std::to_string(index); }

LedId LedId::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= text.size()) {
    throw InputError("malformed LED id '" + text + "'");
  }
  LedId id;
  id.eye = text.substr(0, colon);
  try {
    std::size_t used = 0;
    id.index = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw InputError("malformed LED id '" + text + "'");
  }
  return id;
}

Vec3 CalibratedCamera::center() const { return invert(pose).translation(); }

Ray CalibratedCamera::ray(const Vec2& px) const {
  const RigidTransform cam_to_world = invert(pose);
  return Ray::make(cam_to_world.translation(),
                   cam_to_world.apply_direction(geom::unproject(model, px)),
                   cam_to_world.to_frame());
}

void RigCalibration::validate() const {
  auto root_it = cameras.find(root_camera);
  if (root_it == cameras.end()) {
    throw InputError("root camera '" + root_camera + "' missing from calibration");
  }
  const RigidTransform& root_pose = root_it->second.pose;
  if (root_pose.translation().norm() > 1e-9 ||
      geom::rotation_angle(root_pose.rotation_matrix()) > 1e-9) {
    throw InputError("root camera pose must be identity");
  }
  for (const auto& [id, cam] : cameras) {
    cam.model.validate();
    if (cam.pose.from_frame() != root_camera || cam.pose.to_frame() != id) {
      throw InputError("camera '" + id + "' pose must map " + root_camera + " -> " + id);
    }
  }
  for (const auto& [eye, leds_of_eye] : leds) {
    if (leds_of_eye.size() != 4) {
      throw InputError("eye '" + eye + "' has " + std::to_string(leds_of_eye.size()) +
                       " LEDs, expected 4");
    }
  }
}

const CalibratedCamera& RigCalibration::camera(const CameraId& id) const {
  auto it = cameras.find(id);
  if (it == cameras.end()) throw InputError("camera '" + id + "' not in calibration");
  return it->second;
}

RigCalibration RigCalibration::rerooted(const RigidTransform& new_from_old,
                                        const CameraId& new_root) const {
  RigCalibration out = *this;
  out.root_camera = new_root;
  const RigidTransform old_from_new = invert(new_from_old).relabeled(new_root, root_camera);
  for (auto& [id, cam] : out.cameras) {
    cam.pose = compose(old_from_new, cam.pose);
    if (id == new_root) cam.pose = RigidTransform::identity(new_root);
  }
  for (auto& [eye, leds_of_eye] : out.leds) {
    for (auto& [idx, p] : leds_of_eye) p = new_from_old.apply(p);
  }
  return out;
}

// --- planar calibration ------------------------------------------------------

Mat3 estimate_homography(std::span<const Vec2> board, std::span<const Vec2> image) {
  if (board.size() != image.size()) throw InputError("homography needs paired points");
  if (board.size() < 4) throw DegenerateError("homography needs at least 4 point pairs");

  const Mat3 tb = normalizing_transform(board);
  const Mat3 ti = normalizing_transform(image);
  const auto n = static_cast<Eigen::Index>(board.size());
  MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 p = apply_h(tb, board[static_cast<std::size_t>(i)]);
    const Vec2 q = apply_h(ti, image[static_cast<std::size_t>(i)]);
    a.row(2 * i) << -p.x(), -p.y(), -1.0, 0.0, 0.0, 0.0, q.x() * p.x(), q.x() * p.y(), q.x();
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -1.0, q.y() * p.x(), q.y() * p.y(), q.y();
  }
  // Work with A^T A (9x9) so the null vector is always available.
  const MatrixXd ata = a.transpose() * a;
  Eigen::JacobiSVD<MatrixXd> svd(ata, Eigen::ComputeFullV);
  const VectorXd s = svd.singularValues();
  // Rank of A is sqrt-related to A^T A: compare sqrt of singular values.
  if (!(std::sqrt(std::max(0.0, s[7])) > 1e-8 * std::sqrt(s[0]))) {
    throw DegenerateError("homography design matrix is rank deficient (collinear points?)");
  }
  const VectorXd hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8];
  Mat3 h = ti.inverse() * hn * tb;
  h /= h.norm();
  if (h(2, 2) < 0.0 || (h(2, 2) == 0.0 && h(0, 0) < 0.0)) h = -h;
  return h;
}

CameraModel zhang_initialize(std::span<const Mat3> homographies, int width, int height) {
  if (homographies.size() < 3) throw DegenerateError("zhang initialization needs at least 3 views");
  const double s = 0.5 * std::max(width, height);
  const double ox = 0.5 * width, oy = 0.5 * height;
  Mat3 norm;
  norm << 1.0 / s, 0.0, -ox / s, 0.0, 1.0 / s, -oy / s, 0.0, 0.0, 1.0;

  // Unknowns b = (B11, B22, B13, B23, B33); B12 = 0 (zero skew).
  auto v = [](const Mat3& h, int i, int j) {
    Eigen::Matrix<double, 1, 5> row;
    row << h(0, i) * h(0, j), h(1, i) * h(1, j), h(2, i) * h(0, j) + h(0, i) * h(2, j),
        h(2, i) * h(1, j) + h(1, i) * h(2, j), h(2, i) * h(2, j);
    return row;
  };
  MatrixXd sys(2 * static_cast<Eigen::Index>(homographies.size()), 5);
  for (std::size_t k = 0; k < homographies.size(); ++k) {
    Mat3 h = norm * homographies[k];
    h /= h.norm();
    const auto r = static_cast<Eigen::Index>(2 * k);
    sys.row(r) = v(h, 0, 1);
    sys.row(r + 1) = v(h, 0, 0) - v(h, 1, 1);
  }
  Eigen::JacobiSVD<MatrixXd> svd(sys, Eigen::ComputeFullV);
  const VectorXd sv = svd.singularValues();
  const double cond = sv[3] > 0.0 ? sv[0] / sv[3] : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) {
    throw DegenerateError("absolute conic system is ill-conditioned (condition " +
                          std::to_string(cond) + "); vary the board orientation");
  }
  const VectorXd b = svd.matrixV().col(4);
  const double b11 = b[0], b22 = b[1], b13 = b[2], b23 = b[3], b33 = b[4];
  const double v0 = -b23 / b22;
  const double lambda = b33 - (b13 * b13 - v0 * b11 * b23) / b11;
  const double alpha2 = lambda / b11, beta2 = lambda / b22;
  if (!(alpha2 > 0.0) || !(beta2 > 0.0)) {
    throw DegenerateError("absolute conic solution is not positive definite");
  }
  const double alpha = std::sqrt(alpha2), beta = std::sqrt(beta2);
  const double u0 = -b13 * alpha2 / lambda;

  CameraModel cam{geom::ModelKind::radial_tangential,
                  s * alpha,
                  s * beta,
                  s * u0 + ox,
                  s * v0 + oy,
                  {0.0, 0.0, 0.0, 0.0, 0.0},
                  width,
                  height};
  try {
    cam.validate();
  } catch (const InputError& e) {
    throw DegenerateError(std::string("zhang initialization produced invalid intrinsics: ") + e.what());
  }
  return cam;
}

// --- reprojection problems ---------------------------------------------------------
// Parameters: poses are packed as [axis-angle(3), t(3)] and updated on the left.

solve::LeastSquaresProblem pnp_problem(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                                       const CameraModel& cam) {
  struct Data {
    std::vector<Vec3> obj;
    std::vector<Vec2> img;
    CameraModel cam;
  };
  auto d = std::make_shared<Data>(Data{{object_points.begin(), object_points.end()},
                                       {image_points.begin(), image_points.end()}, cam});
  const auto n = static_cast<Eigen::Index>(d->obj.size());
  solve::LeastSquaresProblem prob;
  prob.num_params = 6;
  prob.num_residuals = 2 * n;
  prob.layout.rotation_blocks = {0};
  prob.residual = [d, n](const VectorXd& x) {
    const Mat3 r = geom::exp_so3(x.segment<3>(0));
    const Vec3 t = x.segment<3>(3);
    VectorXd res(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      res.segment<2>(2 * i) = geom::project(d->cam, r * d->obj[k] + t) - d->img[k];
    }
    return res;
  };
  prob.jacobian = [d, n](const VectorXd& x) {
    const Mat3 r = geom::exp_so3(x.segment<3>(0));
    const Vec3 t = x.segment<3>(3);
    MatrixXd jac(2 * n, 6);
    Eigen::Matrix<double, 2, 3> dp;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 rotated = r * d->obj[static_cast<std::size_t>(i)];
      geom::project(d->cam, rotated + t, &dp, nullptr);
      pose_jacobian(dp, rotated, jac.block<2, 6>(2 * i, 0));
    }
    return jac;
  };
  return prob;
}

solve::LeastSquaresProblem intrinsics_problem(std::span<const BoardView> views_in, const CameraModel& init) {
  auto views = std::make_shared<std::vector<BoardView>>(views_in.begin(), views_in.end());
  const auto ni = static_cast<Eigen::Index>(init.parameter_count());
  const auto nv = static_cast<Eigen::Index>(views->size());
  Eigen::Index total_points = 0;
  for (const BoardView& v : *views) total_points += static_cast<Eigen::Index>(v.correspondences.size());

  solve::LeastSquaresProblem prob;
  prob.num_params = ni + 6 * nv;
  prob.num_residuals = 2 * total_points;
  for (Eigen::Index k = 0; k < nv; ++k) prob.layout.rotation_blocks.push_back(ni + 6 * k);

  prob.residual = [=](const VectorXd& x) {
    const CameraModel cam = init.with_parameters(x.head(ni));
    VectorXd res(2 * total_points);
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < nv; ++k) {
      const Mat3 r = geom::exp_so3(x.segment<3>(ni + 6 * k));
      const Vec3 t = x.segment<3>(ni + 6 * k + 3);
      for (const auto& c : (*views)[static_cast<std::size_t>(k)].correspondences) {
        res.segment<2>(row) = geom::project(cam, r * c.board + t) - c.image;
        row += 2;
      }
    }
    return res;
  };
  prob.jacobian = [=](const VectorXd& x) {
    const CameraModel cam = init.with_parameters(x.head(ni));
    MatrixXd jac = MatrixXd::Zero(2 * total_points, ni + 6 * nv);
    Eigen::Matrix<double, 2, 3> dp;
    Eigen::Matrix<double, 2, Eigen::Dynamic> dk;
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < nv; ++k) {
      const Mat3 r = geom::exp_so3(x.segment<3>(ni + 6 * k));
      const Vec3 t = x.segment<3>(ni + 6 * k + 3);
      for (const auto& c : (*views)[static_cast<std::size_t>(k)].correspondences) {
        const Vec3 rotated = r * c.board;
        geom::project(cam, rotated + t, &dp, &dk);
        jac.block(row, 0, 2, ni) = dk;
        pose_jacobian(dp, rotated, jac.block<2, 6>(row, ni + 6 * k));
        row += 2;
      }
    }
    return jac;
  };
  return prob;
}

solve::LeastSquaresProblem stereo_problem(const StereoPair& pair_in, const CameraModel& intr_a,
                                          const CameraModel& intr_b) {
  auto pair = std::make_shared<StereoPair>(pair_in);
  const auto nv = static_cast<Eigen::Index>(pair->views.size());
  Eigen::Index total = 0;
  for (const auto& [va, vb] : pair->views) {
    total += static_cast<Eigen::Index>(va.correspondences.size() + vb.correspondences.size());
  }

  solve::LeastSquaresProblem prob;
  prob.num_params = 6 + 6 * nv;
  prob.num_residuals = 2 * total;
  prob.layout.rotation_blocks.push_back(0);
  for (Eigen::Index k = 0; k < nv; ++k) prob.layout.rotation_blocks.push_back(6 + 6 * k);

  prob.residual = [=](const VectorXd& x) {
    const Mat3 rt = geom::exp_so3(x.segment<3>(0));
    const Vec3 tt = x.segment<3>(3);
    VectorXd res(2 * total);
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < nv; ++k) {
      const Mat3 r = geom::exp_so3(x.segment<3>(6 + 6 * k));
      const Vec3 t = x.segment<3>(6 + 6 * k + 3);
      const auto& [va, vb] = pair->views[static_cast<std::size_t>(k)];
      for (const auto& c : va.correspondences) {
        res.segment<2>(row) = geom::project(intr_a, r * c.board + t) - c.image;
        row += 2;
      }
      for (const auto& c : vb.correspondences) {
        res.segment<2>(row) = geom::project(intr_b, rt * (r * c.board + t) + tt) - c.image;
        row += 2;
      }
    }
    return res;
  };
  prob.jacobian = [=](const VectorXd& x) {
    const Mat3 rt = geom::exp_so3(x.segment<3>(0));
    const Vec3 tt = x.segment<3>(3);
    MatrixXd jac = MatrixXd::Zero(2 * total, 6 + 6 * nv);
    Eigen::Matrix<double, 2, 3> dp;
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < nv; ++k) {
      const Mat3 r = geom::exp_so3(x.segment<3>(6 + 6 * k));
      const Vec3 t = x.segment<3>(6 + 6 * k + 3);
      const auto& [va, vb] = pair->views[static_cast<std::size_t>(k)];
      for (const auto& c : va.correspondences) {
        const Vec3 rotated = r * c.board;
        geom::project(intr_a, rotated + t, &dp, nullptr);
        pose_jacobian(dp, rotated, jac.block<2, 6>(row, 6 + 6 * k));
        row += 2;
      }
      for (const auto& c : vb.correspondences) {
        const Vec3 rotated = r * c.board;
        const Vec3 q = rotated + t;
        const Vec3 rq = rt * q;
        geom::project(intr_b, rq + tt, &dp, nullptr);
        pose_jacobian(dp, rq, jac.block<2, 6>(row, 0));
        jac.block<2, 3>(row, 6 + 6 * k) = -dp * rt * geom::skew(rotated);
        jac.block<2, 3>(row, 6 + 6 * k + 3) = dp * rt;
        row += 2;
      }
    }
    return jac;
  };
  return prob;
}


PnpResult solve_pnp(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                    const CameraModel& cam, const FrameId& board_frame, const FrameId& camera_frame) {
  if (object_points.size() != image_points.size()) throw InputError("PnP needs paired points");
  if (object_points.size() < 4) throw InputError("PnP needs at least 4 points");

  const NormalizedPoints np = normalize_for_homography(object_points, image_points, cam);
  if (np.board.size() < 4) throw GeometryError("too few points in front of the camera for PnP");
  const Mat3 h = estimate_homography(np.board, np.normalized);
  const RigidTransform init = pose_from_homography(h, board_frame, camera_frame);

  solve::LeastSquaresProblem prob = pnp_problem(object_points, image_points, cam);

  VectorXd x0(6);
  pack_pose(init, x0);
  solve::SolveResult sol = solve::lm_minimize(prob, x0);

  PnpResult out;
  out.pose = unpack_pose(sol.x, board_frame, camera_frame);
  for (const Vec3& p : object_points) {
    if (!(out.pose.apply(p).z() > 0.0)) {
      throw GeometryError("no board pose with all points in front of the camera");
    }
  }
  out.rms_px = rms_from_cost(sol.report.final_cost, object_points.size());
  out.report = std::move(sol.report);
  return out;
}

IntrinsicsResult calibrate_intrinsics(std::span<const BoardView> views, geom::ModelKind kind,
                                      const IntrinsicsOptions& options) {
  if (views.size() < 5) {
    throw InputError("intrinsic calibration needs at least 5 views, got " +
                     std::to_string(views.size()));
  }
  if (options.width <= 0 || options.height <= 0) throw InputError("image size required");
  for (const BoardView& v : views) require_view(v);

  // Initialization.
  CameraModel init;
  if (kind == geom::ModelKind::radial_tangential) {
    std::vector<Mat3> hs;
    for (const BoardView& v : views) {
      std::vector<Vec2> b, i;
      for (const auto& c : v.correspondences) {
        b.emplace_back(c.board.x(), c.board.y());
        i.push_back(c.image);
      }
      hs.push_back(estimate_homography(b, i));
    }
    init = zhang_initialize(hs, options.width, options.height);
  } else {
    const double f = fisheye_focal_scan(views, options.width, options.height);
    init = CameraModel{kind, f, f, 0.5 * (options.width - 1), 0.5 * (options.height - 1),
                       {0.0, 0.0, 0.0, 0.0}, options.width, options.height};
  }

  std::vector<RigidTransform> poses;
  for (const BoardView& v : views) {
    auto [obj, img] = split(v);
    poses.push_back(solve_pnp(obj, img, init, "board", v.camera_id).pose);
  }

  const auto ni = static_cast<Eigen::Index>(init.parameter_count());
  const auto nv = static_cast<Eigen::Index>(views.size());
  Eigen::Index total_points = 0;
  for (const BoardView& v : views) total_points += static_cast<Eigen::Index>(v.correspondences.size());
  solve::LeastSquaresProblem prob = intrinsics_problem(views, init);

  VectorXd x0(prob.num_params);
  x0.head(ni) = init.parameters();
  for (Eigen::Index k = 0; k < nv; ++k) pack_pose(poses[static_cast<std::size_t>(k)], x0.segment<6>(ni + 6 * k));

  solve::SolveResult sol = solve::lm_minimize(prob, x0, options.solver);

  IntrinsicsResult out;
  out.model = init.with_parameters(sol.x.head(ni));
  try {
    out.model.validate();
  } catch (const InputError& e) {
    throw SolveError(std::string("intrinsic refinement left the valid range: ") + e.what());
  }
  for (Eigen::Index k = 0; k < nv; ++k) {
    out.view_poses.push_back(unpack_pose(sol.x.segment<6>(ni + 6 * k), "board",
                                         views[static_cast<std::size_t>(k)].camera_id));
  }
  out.rms_px = rms_from_cost(sol.report.final_cost, static_cast<std::size_t>(total_points));
  out.report = std::move(sol.report);
  const double spread = board_normal_spread(out.view_poses);
  if (spread < 15.0 * kDeg) {
    std::ostringstream msg;
    msg << "board orientations span only " << spread / kDeg
        << " deg; at least 15 deg is recommended";
    out.warnings.push_back(msg.str());
  }
  return out;
}

StereoResult calibrate_stereo(const StereoPair& pair, const CameraModel& intr_a,
                              const CameraModel& intr_b) {
  if (pair.views.size() < 5) {
    throw InputError("stereo calibration needs at least 5 paired views, got " +
                     std::to_string(pair.views.size()));
  }
  const FrameId& fa = pair.camera_a;
  const FrameId& fb = pair.camera_b;

  std::vector<RigidTransform> board_in_a, per_view;
  for (const auto& [va, vb] : pair.views) {
    require_view(va);
    require_view(vb);
    auto [oa, ia] = split(va);
    auto [ob, ib] = split(vb);
    const RigidTransform ta = solve_pnp(oa, ia, intr_a, "board", fa).pose;
    const RigidTransform tb = solve_pnp(ob, ib, intr_b, "board", fb).pose;
    board_in_a.push_back(ta);
    per_view.push_back(compose(invert(ta), tb));
  }

  // Medoid rotation and mean translation of the per-view estimates.
  std::size_t medoid = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < per_view.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < per_view.size(); ++j) sum += rotation_angle_between(per_view[i], per_view[j]);
    if (sum < best) {
      best = sum;
      medoid = i;
    }
  }
  double spread = 0.0;
  Vec3 mean_t = Vec3::Zero();
  for (const RigidTransform& t : per_view) {
    spread = std::max(spread, rotation_angle_between(t, per_view[medoid]));
    mean_t += t.translation();
  }
  mean_t /= static_cast<double>(per_view.size());
  if (spread > 20.0 * kDeg) {
    throw InputError("per-view stereo estimates disagree by " + std::to_string(spread / kDeg) +
                     " deg; check the view pairing");
  }
  const RigidTransform init(per_view[medoid].rotation(), mean_t, fa, fb);

  const auto nv = static_cast<Eigen::Index>(pair.views.size());
  Eigen::Index total = 0;
  for (const auto& [va, vb] : pair.views) {
    total += static_cast<Eigen::Index>(va.correspondences.size() + vb.correspondences.size());
  }
  solve::LeastSquaresProblem prob = stereo_problem(pair, intr_a, intr_b);

  VectorXd x0(prob.num_params);
  pack_pose(init, x0.segment<6>(0));
  for (Eigen::Index k = 0; k < nv; ++k) pack_pose(board_in_a[static_cast<std::size_t>(k)], x0.segment<6>(6 + 6 * k));

  solve::SolveResult sol = solve::lm_minimize(prob, x0);
  StereoResult out;
  out.transform = unpack_pose(sol.x.segment<6>(0), fa, fb);
  out.rms_px = rms_from_cost(sol.report.final_cost, static_cast<std::size_t>(total));
  out.report = std::move(sol.report);
  return out;
}

// --- mirror-based stages ------------------------------------------------------

Plane estimate_mirror_plane(std::span<const BoardView> views, const CameraRig& rig, double offset_mm) {
  if (views.empty()) throw InputError("mirror plane needs at least one view of the on-mirror pattern");
  std::vector<Plane> planes;
  for (const BoardView& v : views) {
    auto it = rig.find(v.camera_id);
    if (it == rig.end()) throw InputError("mirror view from uncalibrated camera '" + v.camera_id + "'");
    require_view(v);
    auto [obj, img] = split(v);
    const PnpResult pnp = solve_pnp(obj, img, it->second.model, "board", v.camera_id);
    const RigidTransform board_in_world = compose(pnp.pose, invert(it->second.pose));
    planes.push_back(geom::plane_from_board_pose(board_in_world, offset_mm));
  }
  Vec3 n = Vec3::Zero();
  double d = 0.0;
  for (const Plane& p : planes) {
    const double sign = p.normal.dot(planes.front().normal) < 0.0 ? -1.0 : 1.0;
    n += sign * p.normal;
    d += sign * p.offset;
  }
  const double len = n.norm();
  return Plane{n / len, d / static_cast<double>(planes.size()), planes.front().frame};
}

TriangulatedPoint triangulate_virtual_point(const std::map<CameraId, Vec2>& pixels,
                                            const CameraRig& rig) {
  if (pixels.size() < 2) throw DegenerateError("triangulation needs at least two cameras");
  std::vector<Ray> rays;
  for (const auto& [id, px] : pixels) {
    auto it = rig.find(id);
    if (it == rig.end()) throw InputError("label from uncalibrated camera '" + id + "'");
    rays.push_back(it->second.ray(px));
  }
  const geom::RayIntersection hit = geom::closest_point_to_rays(rays, 0.5 * kDeg);
  return TriangulatedPoint{hit.point, hit.rms};
}

std::map<LedId, LedEstimate> calibrate_led_positions(std::span<const MirrorSession> sessions,
                                                     const CameraRig& rig) {
  std::map<LedId, LedEstimate> out;
  std::set<LedId> seen;
  for (const MirrorSession& session : sessions) {
    std::map<LedId, std::map<CameraId, Vec2>> by_led;
    for (const auto& [cam, spots] : session.spot_labels) {
      for (const auto& [led, px] : spots) {
        by_led[led][cam] = px;
        seen.insert(led);
      }
    }
    bool any = false;
    for (const auto& [led, px] : by_led) any = any || px.size() >= 2;
    if (!any) continue;
    const Plane mirror = estimate_mirror_plane(session.mirror_views, rig, session.offset_mm);
    for (const auto& [led, px] : by_led) {
      if (px.size() < 2) continue;
      const TriangulatedPoint virt = triangulate_virtual_point(px, rig);
      LedEstimate& est = out[led];
      est.virtual_points.push_back(virt.point);
      est.mirror_planes.push_back(mirror);
      est.per_session.push_back(geom::reflect_point(mirror, virt.point));
    }
  }
  for (const LedId& led : seen) {
    if (!out.contains(led)) {
      throw InputError("LED " + led.str() + " is not labeled in at least 2 cameras in any session");
    }
  }
  for (auto& [led, est] : out) {
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : est.per_session) mean += p;
    est.position = mean / static_cast<double>(est.per_session.size());
    for (std::size_t i = 0; i < est.per_session.size(); ++i) {
      for (std::size_t j = i + 1; j < est.per_session.size(); ++j) {
        est.spread_mm = std::max(est.spread_mm, (est.per_session[i] - est.per_session[j]).norm());
      }
    }
  }
  return out;
}

TriangulatedPoint calibrate_scene_position(const MirrorSession& session, const CameraRig& eye_rig) {
  if (session.marker_labels.size() < 2) {
    throw InputError("scene marker must be labeled in at least 2 eye cameras, got " +
                     std::to_string(session.marker_labels.size()));
  }
  const Plane mirror = estimate_mirror_plane(session.mirror_views, eye_rig, session.offset_mm);
  const TriangulatedPoint virt = triangulate_virtual_point(session.marker_labels, eye_rig);
  return TriangulatedPoint{geom::reflect_point(mirror, virt.point), virt.rms_mm};
}

namespace {

struct SceneDirections {
  std::vector<Vec3> observed;  // scene frame, toward the virtual camera
  std::vector<Vec3> targets;   // real camera centers, world
};

// World directions from the scene center to the mirrored camera centers when
// the scene camera has orientation `r_ws` (scene -> world) at `center`.
std::vector<Vec3> predicted_directions(const Mat3& r_ws, const Vec3& center, const Plane& scene_plane,
                                       const std::vector<Vec3>& targets) {
  const Vec3 n = r_ws * scene_plane.normal;
  const Plane world{n, scene_plane.offset + n.dot(center), {}};
  std::vector<Vec3> out;
  out.reserve(targets.size());
  for (const Vec3& e : targets) out.push_back((geom::reflect_point(world, e) - center).normalized());
  return out;
}

double alignment_cost(const Mat3& r_ws, const Vec3& center, const Plane& scene_plane,
                      const SceneDirections& dirs) {
  const auto v = predicted_directions(r_ws, center, scene_plane, dirs.targets);
  double cost = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) cost += (r_ws * dirs.observed[i] - v[i]).squaredNorm();
  return cost;
}

Mat3 euler_zyx(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

// Distinct low-cost orientations from a 30 deg Euler grid, best first. The
// cost has several basins, so each candidate is refined separately.
std::vector<Mat3> coarse_rotation_candidates(const Vec3& center, const Plane& scene_plane,
                                            const SceneDirections& dirs, std::size_t max_candidates) {
  std::vector<std::pair<double, Mat3>> grid;
  const double step = 30.0 * kDeg;
  for (int i = -6; i < 6; ++i) {
    for (int j = -3; j <= 3; ++j) {
      for (int k = -6; k < 6; ++k) {
        const Mat3 r = euler_zyx(i * step, j * step, k * step);
        grid.emplace_back(alignment_cost(r, center, scene_plane, dirs), r);
      }
    }
  }
  std::stable_sort(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Mat3> out;
  for (const auto& [cost, r] : grid) {
    bool distinct = true;
    for (const Mat3& o : out) distinct = distinct && geom::rotation_angle(r.transpose() * o) > 25.0 * kDeg;
    if (distinct) out.push_back(r);
    if (out.size() == max_candidates) break;
  }
  return out;
}

}  // namespace

SceneOrientationResult calibrate_scene_orientation(const MirrorSession& session,
                                                   const CameraId& scene_id,
                                                   const Vec3& scene_position,
                                                   const CameraModel& scene_intrinsics,
                                                   const CameraRig& eye_rig,
                                                   const SceneOrientationOptions& options) {
  auto labels_it = session.camera_labels.find(scene_id);
  if (labels_it == session.camera_labels.end() || labels_it->second.size() < 2) {
    throw DegenerateError("scene orientation needs reflections of at least 2 eye cameras labeled in '" +
                          scene_id + "'");
  }
  if (eye_rig.empty()) throw InputError("scene orientation needs a calibrated eye rig");
  const FrameId world = eye_rig.begin()->second.pose.from_frame();

  std::vector<BoardView> scene_views;
  for (const BoardView& v : session.mirror_views) {
    if (v.camera_id == scene_id) scene_views.push_back(v);
  }
  if (scene_views.empty()) {
    throw InputError("scene camera '" + scene_id + "' has no view of the on-mirror pattern");
  }
  CameraRig scene_rig;
  scene_rig[scene_id] = CalibratedCamera{scene_intrinsics, RigidTransform::identity(scene_id)};
  const Plane scene_plane = estimate_mirror_plane(scene_views, scene_rig, session.offset_mm);

  SceneDirections dirs;
  for (const auto& [target, px] : labels_it->second) {
    auto it = eye_rig.find(target);
    if (it == eye_rig.end()) throw InputError("labeled camera '" + target + "' is not calibrated");
    dirs.observed.push_back(geom::unproject(scene_intrinsics, px));
    dirs.targets.push_back(it->second.center());
  }
  bool independent = false;
  for (std::size_t i = 0; i < dirs.observed.size() && !independent; ++i) {
    for (std::size_t j = i + 1; j < dirs.observed.size(); ++j) {
      if (dirs.observed[i].cross(dirs.observed[j]).norm() > 1e-9) independent = true;
    }
  }
  if (!independent) throw DegenerateError("labeled camera directions are parallel");

  SceneOrientationResult out;
  out.scene_mirror_plane = scene_plane;
  Vec3 center = scene_position;

  // Initial orientation(s).
  std::vector<Mat3> starts;
  if (options.initial_world_plane) {
    const Plane& wp = *options.initial_world_plane;
    std::vector<Vec3> a = dirs.observed, b;
    for (const Vec3& e : dirs.targets) b.push_back((geom::reflect_point(wp, e) - center).normalized());
    // Mirror normals, both oriented away from the scene camera.
    const Vec3 ns = scene_plane.signed_distance(Vec3::Zero()) > 0.0 ? Vec3(-scene_plane.normal)
                                                                   : scene_plane.normal;
    const Vec3 nw = wp.signed_distance(center) > 0.0 ? Vec3(-wp.normal) : wp.normal;
    a.push_back(ns);
    b.push_back(nw);
    starts.push_back(solve::solve_rotation_alignment(a, b));
  } else {
    starts = coarse_rotation_candidates(center, scene_plane, dirs, 8);
  }

  int fixed_point_iterations = 0;
  solve::SolveReport report;
  auto refine = [&](Mat3 r) {
    // Fixed-point alignment: map the scene-frame plane with the current
    // estimate, predict directions, re-align.
    double change = std::numeric_limits<double>::infinity();
    int iter = 0;
    for (; iter < options.max_fixed_point_iter && change > 1e-8; ++iter) {
      const auto v = predicted_directions(r, center, scene_plane, dirs.targets);
      const Mat3 next = solve::solve_rotation_alignment(dirs.observed, v);
      change = geom::angle_between(r * scene_plane.normal, next * scene_plane.normal);
      if (alignment_cost(next, center, scene_plane, dirs) >= alignment_cost(r, center, scene_plane, dirs)) {
        break;
      }
      r = next;
    }
    fixed_point_iterations += iter;

    // Joint least squares on the same residuals; settles what the fixed point
    // approaches slowly under label noise.
    const auto n = static_cast<Eigen::Index>(dirs.observed.size());
    solve::LeastSquaresProblem prob;
    prob.num_params = 3;
    prob.num_residuals = 3 * n;
    prob.layout.rotation_blocks = {0};
    prob.residual = [&](const VectorXd& x) {
      const Mat3 rr = geom::exp_so3(x.segment<3>(0));
      const auto v = predicted_directions(rr, center, scene_plane, dirs.targets);
      VectorXd res(3 * n);
      for (Eigen::Index i = 0; i < n; ++i) {
        res.segment<3>(3 * i) = rr * dirs.observed[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(i)];
      }
      return res;
    };
    VectorXd x0 = geom::log_so3(r);
    solve::SolveResult sol = solve::lm_minimize(prob, x0);
    if (sol.report.termination == solve::Termination::max_iter ||
        sol.report.termination == solve::Termination::diverged) {
      throw SolveError("scene orientation did not settle (" +
                       std::string(solve::to_string(sol.report.termination)) + ")");
    }
    report = sol.report;
    return Mat3(geom::exp_so3(sol.x.segment<3>(0)));
  };

  Mat3 r_ws;
  double best = std::numeric_limits<double>::infinity();
  std::optional<SolveError> failure;
  for (const Mat3& start : starts) {
    fixed_point_iterations = 0;
    try {
      const Mat3 r = refine(start);
      if (report.final_cost < best) {
        best = report.final_cost;
        r_ws = r;
        out.report = report;
        out.fixed_point_iterations = fixed_point_iterations;
      }
    } catch (const SolveError& e) {
      failure = e;
    }
  }
  if (!std::isfinite(best)) throw *failure;
  if (options.marker_offset_mm != 0.0) {
    center = scene_position + options.marker_offset_mm * (r_ws * Vec3::UnitZ());
    r_ws = refine(r_ws);
    out.report = report;
    out.fixed_point_iterations += fixed_point_iterations;
  }

  const auto v = predicted_directions(r_ws, center, scene_plane, dirs.targets);
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = geom::angle_between(r_ws * dirs.observed[i], v[i]);
    sq += a * a;
  }
  out.rms_rad = std::sqrt(sq / static_cast<double>(v.size()));
  const Mat3 r_sw = r_ws.transpose();
  out.pose = RigidTransform(r_sw, -(r_sw * center), world, scene_id);
  out.position = center;
  return out;
}

// --- world composition ----------------------------------------------------------

void TransformGraph::add_edge(const RigidTransform& t, double residual) {
  nodes_.insert(t.from_frame());
  nodes_.insert(t.to_frame());
  edges_.push_back(GraphEdge{t, residual});
}

WorldComposition compose_world(const TransformGraph& graph, const FrameId& root) {
  if (!graph.nodes().contains(root)) throw GraphError("root frame '" + root + "' not in graph");

  // Canonical edge order so the result does not depend on insertion order.
  std::vector<GraphEdge> edges = graph.edges();
  auto key = [](const GraphEdge& e) {
    const auto& t = e.transform;
    return std::make_tuple(std::min(t.from_frame(), t.to_frame()), std::max(t.from_frame(), t.to_frame()),
                           t.from_frame(), t.translation().x(), t.translation().y(), t.translation().z(),
                           t.rotation().w(), t.rotation().x(), t.rotation().y(), t.rotation().z());
  };
  std::stable_sort(edges.begin(), edges.end(),
                   [&](const GraphEdge& a, const GraphEdge& b) { return key(a) < key(b); });

  struct Adj {
    FrameId neighbor;
    std::size_t edge;
  };
  std::map<FrameId, std::vector<Adj>> adjacency;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& t = edges[i].transform;
    adjacency[t.from_frame()].push_back({t.to_frame(), i});
    adjacency[t.to_frame()].push_back({t.from_frame(), i});
  }
  for (auto& [node, adj] : adjacency) {
    std::stable_sort(adj.begin(), adj.end(), [](const Adj& a, const Adj& b) { return a.neighbor < b.neighbor; });
  }

  WorldComposition out;
  out.root = root;
  out.poses[root] = RigidTransform::identity(root);
  std::vector<bool> tree_edge(edges.size(), false);
  std::deque<FrameId> queue{root};
  while (!queue.empty()) {
    const FrameId node = queue.front();
    queue.pop_front();
    for (const Adj& a : adjacency[node]) {
      if (out.poses.contains(a.neighbor)) continue;
      const RigidTransform& t = edges[a.edge].transform;
      const RigidTransform step = t.from_frame() == node ? t : invert(t);
      out.poses[a.neighbor] = compose(out.poses[node], step);
      tree_edge[a.edge] = true;
      queue.push_back(a.neighbor);
    }
  }

  std::vector<FrameId> unreachable;
  for (const FrameId& n : graph.nodes()) {
    if (!out.poses.contains(n)) unreachable.push_back(n);
  }
  if (!unreachable.empty()) {
    std::string names;
    for (const auto& n : unreachable) names += (names.empty() ? "" : ", ") + n;
    throw GraphError("frames unreachable from '" + root + "': " + names);
  }

  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (tree_edge[i]) continue;
    const RigidTransform& t = edges[i].transform;
    const RigidTransform predicted = compose(out.poses.at(t.from_frame()), t);
    const RigidTransform& actual = out.poses.at(t.to_frame());
    out.loop_closures.push_back(LoopClosure{t.from_frame(), t.to_frame(),
                                            rotation_angle_between(predicted, actual),
                                            (predicted.translation() - actual.translation()).norm()});
  }
  return out;
}

}  // namespace ocular::calib
