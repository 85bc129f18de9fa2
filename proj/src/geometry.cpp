#include "ivoa/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace ivoa::geometry {

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw std::invalid_argument("focal length must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  if (cx < 0 || cx >= width) throw std::invalid_argument("cx outside image");
  if (cy < 0 || cy >= height) throw std::invalid_argument("cy outside image");
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

void RigidTransform::validate() const {
  const Mat3 should_be_identity = rotation * rotation.transpose();
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("rotation determinant is not +1");
}

void StereoRig::validate() const {
  intrinsics.validate();
  cam_from_robot.validate();
  if (baseline <= 0) throw std::invalid_argument("baseline must be positive");
}

StereoRig make_rig(const CameraIntrinsics& intr, double baseline,
                   double cam_height, double pitch_rad, double forward) {
  const double s = std::sin(pitch_rad);
  const double c = std::cos(pitch_rad);
  // rows are the camera axes expressed in the robot frame
  Mat3 r;
  r << 0, -1, 0,      // x_cam: robot right
      -s, 0, -c,      // y_cam: down, tilted
       c, 0, -s;      // z_cam: forward, tilted down by pitch
  const Vec3 center(forward, 0.0, cam_height);
  StereoRig rig;
  rig.intrinsics = intr;
  rig.baseline = baseline;
  rig.cam_from_robot.rotation = r;
  rig.cam_from_robot.translation = -(r * center);
  rig.validate();
  return rig;
}

Pose Pose::at_position(double x, double y) {
  Pose p;
  p.robot_from_world.translation = Vec3(-x, -y, 0.0);
  return p;
}

Pixel project_to_camera(const Vec3& p_cam, const CameraIntrinsics& intr) {
  if (p_cam.z() <= 0.0)
    throw std::invalid_argument("cannot project point behind camera");
  return Pixel{intr.cx + intr.fx * p_cam.x() / p_cam.z(),
               intr.cy + intr.fy * p_cam.y() / p_cam.z()};
}

namespace {

std::optional<Pixel> project_in_view(const Vec3& p_cam, const CameraIntrinsics& intr) {
  if (p_cam.z() <= 0.0) return std::nullopt;
  const Pixel px = project_to_camera(p_cam, intr);
  if (px.u < 0.0 || px.u >= intr.width || px.v < 0.0 || px.v >= intr.height)
    return std::nullopt;
  return px;
}

}  // namespace

std::optional<Pixel> robot_to_left_pixel(const Vec3& p_robot, const StereoRig& rig) {
  return project_in_view(rig.robot_to_cam(p_robot), rig.intrinsics);
}

std::optional<Pixel> robot_to_right_pixel(const Vec3& p_robot, const StereoRig& rig) {
  return project_in_view(rig.robot_to_right_cam(p_robot), rig.intrinsics);
}

double disparity_to_depth(double d, const StereoRig& rig) {
  if (d <= 0.0) throw std::invalid_argument("disparity must be positive");
  return rig.intrinsics.fx * rig.baseline / d;
}

Vec3 back_project(const Pixel& px, double z, const CameraIntrinsics& intr) {
  return Vec3((px.u - intr.cx) * z / intr.fx, (px.v - intr.cy) * z / intr.fy, z);
}

Vec3 pixel_ray(const Pixel& px, const CameraIntrinsics& intr) {
  return back_project(px, 1.0, intr).normalized();
}

std::optional<Vec3> left_pixel_to_ground(const Pixel& px, const StereoRig& rig) {
  const RigidTransform robot_from_cam = rig.cam_from_robot.inverse();
  const Vec3 origin = robot_from_cam.translation;  // camera center, robot frame
  const Vec3 dir = robot_from_cam.rotation * pixel_ray(px, rig.intrinsics);
  if (dir.z() >= -1e-12) return std::nullopt;  // parallel to or away from ground
  const double t = -origin.z() / dir.z();
  if (t <= 0.0) return std::nullopt;
  Vec3 g = origin + t * dir;
  g.z() = 0.0;
  return g;
}

}  // namespace ivoa::geometry
