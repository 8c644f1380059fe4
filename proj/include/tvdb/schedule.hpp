#pragma once

#include <vector>

namespace tvdb {

// Discrete cumulative signal levels alpha_bar_0..alpha_bar_T.
// alpha_bar_0 == 1 exactly, strictly decreasing, alpha_bar_T > 0.
class NoiseSchedule {
 public:
  // `times` is the normalised model time fed to the denoiser for each index.
  NoiseSchedule(std::vector<double> alpha_bar, std::vector<double> times);

  // alpha_bar_t = 1 - (1 - alpha_bar_end) * t / steps.
  static NoiseSchedule linear(int steps, double alpha_bar_end);

  // Uniform-stride subsampling to `steps` indices; both endpoints are kept.
  NoiseSchedule subsample(int steps) const;

  int steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const;
  double model_time(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
  std::vector<double> times_;
};

}  // namespace tvdb
