#pragma once

#include <Eigen/Dense>
#include <optional>

namespace ivoa::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Frame conventions:
//   robot frame:  x forward, y left, z up (right-handed, ground at z = 0)
//   camera frame: z forward (optical axis), x right, y down
struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  void validate() const;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  // this . other (apply other first)
  RigidTransform compose(const RigidTransform& other) const;
  void validate() const;
};

// Rectified pair sharing one set of intrinsics. The right camera center is
// the left center translated by `baseline` along the camera x axis.
struct StereoRig {
  CameraIntrinsics intrinsics;
  double baseline = 0.0;            // meters
  RigidTransform cam_from_robot;    // left camera

  void validate() const;
  Vec3 robot_to_cam(const Vec3& p) const { return cam_from_robot.apply(p); }
  Vec3 cam_to_robot(const Vec3& p) const { return cam_from_robot.inverse().apply(p); }
  Vec3 robot_to_right_cam(const Vec3& p) const {
    Vec3 c = robot_to_cam(p);
    c.x() -= baseline;
    return c;
  }
  // left camera center expressed in the robot frame
  Vec3 camera_center_robot() const {
    return -(cam_from_robot.rotation.transpose() * cam_from_robot.translation);
  }
};

// Forward-looking left camera mounted at `height` above the ground,
// `forward` along robot x, pitched down by `pitch_rad`.
StereoRig make_rig(const CameraIntrinsics& intr, double baseline,
                   double cam_height, double pitch_rad, double forward = 0.0);

struct Pose {
  RigidTransform robot_from_world;

  Vec3 world_to_robot(const Vec3& p) const { return robot_from_world.apply(p); }
  Vec3 robot_to_world(const Vec3& p) const {
    return robot_from_world.inverse().apply(p);
  }
  // robot at (x, y, 0) in the world, axes aligned with the world frame
  static Pose at_position(double x, double y);
};

// Pinhole projection. Throws std::invalid_argument when p_cam.z <= 0
// ("behind camera"). The result may lie outside the image rectangle.
Pixel project_to_camera(const Vec3& p_cam, const CameraIntrinsics& intr);

// Projection into the left / right image; nullopt when the point is behind
// the camera or falls outside the image rectangle.
std::optional<Pixel> robot_to_left_pixel(const Vec3& p_robot, const StereoRig& rig);
std::optional<Pixel> robot_to_right_pixel(const Vec3& p_robot, const StereoRig& rig);

// Rectified-stereo identity: depth = fx * baseline / disparity. Throws
// std::invalid_argument when d <= 0.
double disparity_to_depth(double d, const StereoRig& rig);

// Camera-frame point with z-depth `z` projecting to the given pixel.
Vec3 back_project(const Pixel& px, double z, const CameraIntrinsics& intr);

// Unit direction through a pixel, camera frame.
Vec3 pixel_ray(const Pixel& px, const CameraIntrinsics& intr);

// Ground-plane (z = 0, robot frame) intersection of the ray through a left
// image pixel; nullopt when the ray never reaches the ground ahead.
std::optional<Vec3> left_pixel_to_ground(const Pixel& px, const StereoRig& rig);

}  // namespace ivoa::geometry
