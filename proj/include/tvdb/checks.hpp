#pragma once

// Self-check suites run by `tvdb check`.

#include "tvdb/denoiser.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tvdb {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

// Max relative error of tape gradients against central differences through the
// step loss, the attention merge, and the denoiser's token input.
std::vector<CheckResult> check_gradients(const DenoiserWeights& weights, int coordinates, std::uint64_t seed);

// invert -> generate under the null prompt on `images` toy scenes: min PSNR and bitwise repeatability.
std::vector<CheckResult> check_roundtrip(const DenoiserWeights& weights, int images, double min_psnr,
                                         std::uint64_t seed);

// DDIM endpoint error against the closed-form Gaussian flow for T = 10, 20, 40, 80.
std::vector<CheckResult> check_gaussian_order(std::uint64_t seed);

// Vectorised merge against an explicit loop, plus the permutation and mask identities.
std::vector<CheckResult> check_attention_merge(std::uint64_t seed);

// Relative error used by the gradient suite: |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace tvdb
