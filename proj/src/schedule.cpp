#include "tvdb/schedule.hpp"

#include "tvdb/errors.hpp"

#include <cmath>
#include <string>

namespace tvdb {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar, std::vector<double> times)
    : alpha_bar_(std::move(alpha_bar)), times_(std::move(times)) {
  if (alpha_bar_.size() < 2 || times_.size() != alpha_bar_.size()) {
    throw ConfigError("NoiseSchedule: need at least one step and one time per level");
  }
  if (alpha_bar_.front() != 1.0) throw ConfigError("NoiseSchedule: alpha_bar_0 must be exactly 1");
  for (std::size_t i = 1; i < alpha_bar_.size(); ++i) {
    if (!(alpha_bar_[i] < alpha_bar_[i - 1])) {
      throw ConfigError("NoiseSchedule: alpha_bar not strictly decreasing at index " +
                        std::to_string(i));
    }
  }
  if (!(alpha_bar_.back() > 0.0)) throw ConfigError("NoiseSchedule: alpha_bar_T must be positive");
}

NoiseSchedule NoiseSchedule::linear(int steps, double alpha_bar_end) {
  if (steps < 1) throw ConfigError("NoiseSchedule::linear: steps must be >= 1");
  if (!(alpha_bar_end > 0.0 && alpha_bar_end < 1.0)) {
    throw ConfigError("NoiseSchedule::linear: alpha_bar_end must lie in (0, 1)");
  }
  std::vector<double> ab(steps + 1);
  std::vector<double> times(steps + 1);
  for (int t = 0; t <= steps; ++t) {
    const double s = static_cast<double>(t) / steps;
    ab[t] = t == 0 ? 1.0 : 1.0 - (1.0 - alpha_bar_end) * s;
    times[t] = s;
  }
  return NoiseSchedule(std::move(ab), std::move(times));
}

NoiseSchedule NoiseSchedule::subsample(int steps) const {
  if (steps < 1 || steps > this->steps()) {
    throw ConfigError("NoiseSchedule::subsample: steps must lie in [1, " +
                      std::to_string(this->steps()) + "]");
  }
  std::vector<double> ab(steps + 1);
  std::vector<double> times(steps + 1);
  for (int t = 0; t <= steps; ++t) {
    const auto idx = static_cast<int>(
        std::lround(static_cast<double>(t) * this->steps() / static_cast<double>(steps)));
    ab[t] = alpha_bar_[idx];
    times[t] = times_[idx];
  }
  return NoiseSchedule(std::move(ab), std::move(times));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw DomainError("NoiseSchedule: index " + std::to_string(t) + " out of range");
  return alpha_bar_[t];
}

double NoiseSchedule::model_time(int t) const {
  if (t < 0 || t > steps()) throw DomainError("NoiseSchedule: index " + std::to_string(t) + " out of range");
  return times_[t];
}

}  // namespace tvdb
