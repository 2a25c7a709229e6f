#pragma once
// Scratch directories and small hand-built fixtures shared by the tests.

#include <filesystem>
#include <string>
#include <unistd.h>

#include "crisp/dataset.hpp"

namespace testing {

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("crisp_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// One-frame camera at the origin looking down +z with identity intrinsics.
inline crisp::CameraTrack origin_camera(std::size_t frames = 1) {
  crisp::CameraTrack cams;
  cams.poses.assign(frames, crisp::SE3{});
  return cams;
}

inline crisp::MotionSequence still_motion(std::size_t frames, const crisp::Vec3& pelvis) {
  crisp::MotionSequence m;
  m.frames.resize(frames);
  for (auto& f : m.frames) f.root.translation = pelvis;
  return m;
}

}  // namespace testing
