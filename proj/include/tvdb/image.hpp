#pragma once

#include "tvdb/autodiff.hpp"
#include "tvdb/errors.hpp"

#include <string>

namespace tvdb {

// Image stored as [channels x (height*width)], values nominally in [-1, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int channels, int height, int width);
  ImageTensor(Mat values, int height, int width);

  int channels() const { return static_cast<int>(values_.rows()); }
  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index size() const { return values_.size(); }

  const Mat& values() const { return values_; }
  Mat& values() { return values_; }

  double at(int c, int y, int x) const { return values_(c, y * width_ + x); }
  double& at(int c, int y, int x) { return values_(c, y * width_ + x); }

  bool same_shape(const ImageTensor& other) const;
  bool all_finite() const;
  ImageTensor clamped() const;

  bool operator==(const ImageTensor& other) const;

 private:
  int height_ = 0;
  int width_ = 0;
  Mat values_;
};

// A point on the diffusion path. timestep_index 0 is a clean image, T the bridge midpoint.
struct LatentState {
  ImageTensor data;
  int timestep_index = 0;
};

std::string shape_string(const ImageTensor& image);

template <typename Error = DomainError>
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(std::string(what) + ": shape mismatch (" + shape_string(a) + " vs " + shape_string(b) + ")");
  }
}

}  // namespace tvdb
