#include "tvdb/image.hpp"

#include "tvdb/errors.hpp"

#include <string>

namespace tvdb {

ImageTensor::ImageTensor(int channels, int height, int width)
    : height_(height), width_(width), values_(Mat::Zero(channels, height * width)) {}

ImageTensor::ImageTensor(Mat values, int height, int width)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.cols() != static_cast<Eigen::Index>(height) * width) {
    throw ConfigError("ImageTensor: value matrix does not match height*width");
  }
}

bool ImageTensor::same_shape(const ImageTensor& other) const {
  return channels() == other.channels() && height_ == other.height_ && width_ == other.width_;
}

bool ImageTensor::all_finite() const { return values_.allFinite(); }

ImageTensor ImageTensor::clamped() const {
  return ImageTensor(values_.cwiseMax(-1.0).cwiseMin(1.0), height_, width_);
}

bool ImageTensor::operator==(const ImageTensor& other) const {
  return same_shape(other) && values_ == other.values_;
}

std::string shape_string(const ImageTensor& image) {
  return std::to_string(image.channels()) + "x" + std::to_string(image.height()) + "x" +
         std::to_string(image.width());
}

}  // namespace tvdb
