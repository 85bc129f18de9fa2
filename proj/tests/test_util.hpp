#pragma once

#include <cmath>
#include <filesystem>

#include "ivoa/geometry.hpp"

namespace ivoa_test {

// Matches configs/default.json.
inline ivoa::geometry::StereoRig default_rig() {
  ivoa::geometry::CameraIntrinsics intr;
  intr.fx = intr.fy = 400.0;
  intr.cx = 240.0;
  intr.cy = 150.0;
  intr.width = 480;
  intr.height = 300;
  return ivoa::geometry::make_rig(intr, 0.16, 0.35, 12.0 * M_PI / 180.0, 0.0);
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path("test_scratch") / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ivoa_test
