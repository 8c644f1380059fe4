#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "tvdb/toydata.hpp"

#include <unistd.h>

namespace tvdb::test {

Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

Mat random_stochastic(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) sum += m(r, c) = u(rng);
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) /= sum;
  }
  return m;
}

double central_difference(const std::function<double(const Mat&)>& f, Mat x, Eigen::Index i, double h) {
  const double saved = x.data()[i];
  x.data()[i] = saved + h;
  const double up = f(x);
  x.data()[i] = saved - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

const DenoiserWeights& untrained_weights() {
  static const DenoiserWeights weights = [] {
    DenoiserConfig config;
    config.vocab_size = Vocabulary::size();
    return init_weights(config, 3);
  }();
  return weights;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tvdb-test-" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tvdb::test
