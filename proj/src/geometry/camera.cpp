#include "deskmvs/geometry/camera.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/LU>

namespace deskmvs {

void Camera::validate() const {
  if (std::abs(R.determinant() - 1.0) > 1e-6) throw ArgumentError("camera: det(R) is not 1");
  if (((R.transpose() * R) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw ArgumentError("camera: R is not orthonormal");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) throw ArgumentError("camera: K is not upper-triangular");
  if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0)) throw ArgumentError("camera: focal lengths must be positive");
  if (K(2, 2) != 1.0) throw ArgumentError("camera: K(2,2) must be 1");
  if (!(d_near > 0.0 && d_near < d_far)) throw ArgumentError("camera: need 0 < d_near < d_far");
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) throw ArgumentError("camera: non-finite entries");
}

Camera Camera::scaled(double s) const {
  if (!(s > 0.0)) throw ArgumentError("camera: scale must be > 0");
  Camera c = *this;
  c.K.row(0) *= s;
  c.K.row(1) *= s;
  return c;
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d xc = cam.R * x_world + cam.t;
  if (!(xc.z() > 0.0)) throw ArgumentError("project_point: point is behind the camera");
  const Eigen::Vector3d h = cam.K * xc;
  return {h.head<2>() / h.z(), xc.z()};
}

Eigen::Vector3d backproject(const Camera& cam, double x, double y, double depth) {
  const Eigen::Vector3d ray = cam.K.inverse() * Eigen::Vector3d(x, y, 1.0);
  const Eigen::Vector3d xc = ray * (depth / ray.z());
  return cam.R.transpose() * (xc - cam.t);
}

void write_camera(const std::filesystem::path& path, const Camera& cam) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "extrinsic\n";
  for (int r = 0; r < 3; ++r) out << cam.R(r, 0) << ' ' << cam.R(r, 1) << ' ' << cam.R(r, 2) << ' ' << cam.t(r) << '\n';
  out << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) out << cam.K(r, 0) << ' ' << cam.K(r, 1) << ' ' << cam.K(r, 2) << '\n';
  out << '\n' << cam.d_near << ' ' << cam.d_far << '\n';
  if (!out) throw IoError("error writing " + path.string());
}

Camera read_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto fail = [&](const std::string& what) { return IoError(path.string() + ": " + what); };
  std::string word;
  Camera cam;
  if (!(in >> word) || word != "extrinsic") throw fail("expected 'extrinsic'");
  for (int r = 0; r < 4; ++r) {
    double row[4];
    for (double& v : row) {
      if (!(in >> v)) throw fail("truncated extrinsic block");
    }
    if (r < 3) {
      cam.R.row(r) << row[0], row[1], row[2];
      cam.t(r) = row[3];
    }
  }
  if (!(in >> word) || word != "intrinsic") throw fail("expected 'intrinsic'");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!(in >> cam.K(r, c))) throw fail("truncated intrinsic block");
    }
  }
  if (!(in >> cam.d_near >> cam.d_far)) throw fail("missing depth range");
  try {
    cam.validate();
  } catch (const ArgumentError& e) {
    throw fail(e.what());
  }
  return cam;
}

}  // namespace deskmvs
