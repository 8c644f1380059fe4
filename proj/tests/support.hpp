#pragma once

#include "tvdb/autodiff.hpp"
#include "tvdb/denoiser.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace tvdb::test {

Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0);
// Positive entries, rows summing to one.
Mat random_stochastic(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols);

// Central difference of `f` along coordinate i of `x`.
double central_difference(const std::function<double(const Mat&)>& f, Mat x, Eigen::Index i, double h);

// |a - b| / max(|a|, |b|, 1e-6)
double rel_err(double a, double b);

// Untrained full-size toy denoiser, shared across tests of one binary.
const DenoiserWeights& untrained_weights();

// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace tvdb::test
