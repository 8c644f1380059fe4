#include "tvdb/attention_control.hpp"

#include "tvdb/errors.hpp"

#include <cmath>
#include <string>

namespace tvdb {

namespace {

void check_y(int k, int y, const char* what) {
  if (k < 2 || y < 0 || y > k - 2) {
    throw DomainError(std::string(what) + ": y=" + std::to_string(y) + " out of range for k=" + std::to_string(k));
  }
}

void check_cross_shapes(const Mat& before, const Mat& after, const ColumnTransform& perm, const InjectionMask& mask) {
  if (before.rows() != after.rows() || before.cols() != after.cols()) {
    throw DomainError("merge_cross: before/after shape mismatch");
  }
  if (perm.matrix.rows() != before.cols() || mask.f.size() != before.cols()) {
    throw DomainError("merge_cross: column transform or mask does not match k");
  }
}

}  // namespace

ColumnTransform build_column_transform(int k, int y) {
  check_y(k, y, "build_column_transform");
  Mat p = Mat::Identity(k, k);
  p.col(1).swap(p.col(y + 1));
  return {std::move(p), y};
}

InjectionMask build_mask(int k, int y) {
  check_y(k, y, "build_mask");
  Vec f = Vec::Ones(k);
  f.segment(1, y).setZero();
  return {std::move(f)};
}

Mat merge_cross(const Mat& before, const Mat& after, const ColumnTransform& perm, const InjectionMask& mask,
                bool renormalize) {
  check_cross_shapes(before, after, perm, mask);
  const Vec keep = Vec::Ones(mask.f.size()) - mask.f;
  Mat merged = (before * perm.matrix) * mask.f.asDiagonal();
  merged += after * keep.asDiagonal();
  if (renormalize) {
    const Vec sums = merged.rowwise().sum();
    for (Eigen::Index r = 0; r < sums.size(); ++r) {
      if (!(sums[r] > 0.0)) throw NumericalError("merge_cross: row " + std::to_string(r) + " has no mass");
    }
    merged = sums.cwiseInverse().asDiagonal() * merged;
  }
  return merged;
}

ad::Var merge_cross(ad::Tape& tape, const Mat& before, ad::Var after, const ColumnTransform& perm,
                    const InjectionMask& mask, bool renormalize) {
  check_cross_shapes(before, tape.value(after), perm, mask);
  const Vec keep = Vec::Ones(mask.f.size()) - mask.f;
  ad::Var merged = ad::add_constant(tape, ad::mul_cols(tape, after, keep), (before * perm.matrix) * mask.f.asDiagonal());
  return renormalize ? ad::row_normalize(tape, merged) : merged;
}

Mat merge_self(const Mat& before, const Mat& after) {
  if (before.rows() != after.rows() || before.cols() != after.cols()) {
    throw DomainError("merge_self: before/after shape mismatch");
  }
  return before;
}

ad::Var merge_self(ad::Tape& tape, const Mat& before, ad::Var after) {
  return tape.constant(merge_self(before, tape.value(after)));
}

bool should_inject(int t, int steps, double tau, InjectionClock clock) {
  if (clock == InjectionClock::RawIndex) return t < tau;
  return static_cast<double>(t) / steps < tau;
}

Mat apply_intensity(const Mat& map, int y, double intensity) {
  if (!(intensity >= 0.0) || !std::isfinite(intensity)) throw DomainError("apply_intensity: intensity must be >= 0");
  check_y(static_cast<int>(map.cols()), y, "apply_intensity");
  if (intensity == 1.0) return map;
  Mat m = map;
  m.middleCols(1, y) *= intensity;
  const Vec sums = m.rowwise().sum();
  for (Eigen::Index r = 0; r < sums.size(); ++r) {
    if (!(sums[r] > 0.0)) throw NumericalError("apply_intensity: row " + std::to_string(r) + " has no mass");
  }
  return sums.cwiseInverse().asDiagonal() * m;
}

ad::Var apply_intensity(ad::Tape& tape, ad::Var map, int y, double intensity) {
  if (!(intensity >= 0.0) || !std::isfinite(intensity)) throw DomainError("apply_intensity: intensity must be >= 0");
  const int k = static_cast<int>(tape.value(map).cols());
  check_y(k, y, "apply_intensity");
  if (intensity == 1.0) return map;
  Vec factors = Vec::Ones(k);
  factors.segment(1, y).setConstant(intensity);
  return ad::row_normalize(tape, ad::mul_cols(tape, map, factors));
}

InjectionPlan InjectionPlan::for_sites(std::shared_ptr<const AttentionRecord> source,
                                       const std::vector<AttentionSite>& all, double tau) {
  InjectionPlan plan;
  plan.source = std::move(source);
  plan.tau = tau;
  for (const auto& s : all) plan.sites.insert(s.id);
  return plan;
}

void InjectionPlan::validate() const {
  if (clock == InjectionClock::Normalized && !(tau >= 0.0 && tau <= 1.0)) {
    throw ConfigError("injection plan: tau must lie in [0, 1]");
  }
  if (clock == InjectionClock::RawIndex && !(tau >= 0.0)) throw ConfigError("injection plan: tau must be >= 0");
  if (!(intensity >= 0.0) || !std::isfinite(intensity)) throw ConfigError("injection plan: intensity must be >= 0");
  if (sites.empty()) throw ConfigError("injection plan: no sites selected");
  if (!source) throw ConfigError("injection plan: no source attention record");
}

std::vector<int> InjectionPlan::injected_steps(int steps) const {
  std::vector<int> out;
  for (int t = 1; t <= steps; ++t) {
    if (should_inject(t, steps, tau, clock)) out.push_back(t);
  }
  return out;
}

StepOverride::StepOverride(const InjectionPlan& plan, int step, int steps, int k, int y)
    : plan_(plan),
      step_(step),
      y_(y),
      inject_(should_inject(step, steps, plan.tau, plan.clock)),
      perm_(build_column_transform(k, y)),
      mask_(build_mask(k, y)) {}

bool StepOverride::applies(const AttentionSite& site) const {
  if (inject_ && plan_.sites.count(site.id) > 0) return true;
  return site.kind == AttentionKind::Cross && plan_.intensity != 1.0;
}

ad::Var StepOverride::apply(ad::Tape& tape, const AttentionSite& site, ad::Var live) const {
  ad::Var out = live;
  if (inject_ && plan_.sites.count(site.id) > 0) {
    const Mat& before = plan_.source->at(step_, site.id);
    out = site.kind == AttentionKind::Cross ? merge_cross(tape, before, live, perm_, mask_, plan_.renormalize)
                                            : merge_self(tape, before, live);
  }
  if (site.kind == AttentionKind::Cross) out = apply_intensity(tape, out, y_, plan_.intensity);
  return out;
}

}  // namespace tvdb
