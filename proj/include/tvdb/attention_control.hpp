#pragma once

// Before/after attention merging and the injection schedule used while
// textualizing and editing.

#include "tvdb/attention.hpp"
#include "tvdb/autodiff.hpp"

#include <memory>
#include <set>

namespace tvdb {

// k x k permutation: identity with columns 1 and y + 1 swapped.
struct ColumnTransform {
  Mat matrix;
  int y = 0;
};

// Length-k binary vector, zero exactly at the y LEARNABLE positions 1..y.
struct InjectionMask {
  Vec f;
};

ColumnTransform build_column_transform(int k, int y);
InjectionMask build_mask(int k, int y);

// before * perm, masked by F, plus after masked by (1 - F); optionally row-renormalized.
Mat merge_cross(const Mat& before, const Mat& after, const ColumnTransform& perm, const InjectionMask& mask,
                bool renormalize = true);
// Tape version: differentiable in `after`, `before` enters as a constant.
ad::Var merge_cross(ad::Tape& tape, const Mat& before, ad::Var after, const ColumnTransform& perm,
                    const InjectionMask& mask, bool renormalize = true);

Mat merge_self(const Mat& before, const Mat& after);
ad::Var merge_self(ad::Tape& tape, const Mat& before, ad::Var after);

enum class InjectionClock {
  Normalized,  // inject when t / T < tau
  RawIndex,    // inject when t < tau
};

bool should_inject(int t, int steps, double tau, InjectionClock clock = InjectionClock::Normalized);

// Scales LEARNABLE columns 1..y by `intensity`, then renormalizes rows.
Mat apply_intensity(const Mat& map, int y, double intensity);
ad::Var apply_intensity(ad::Tape& tape, ad::Var map, int y, double intensity);

struct InjectionPlan {
  std::shared_ptr<const AttentionRecord> source;  // before-image maps, keyed by generation step
  double tau = 0.7;
  std::set<int> sites;       // site ids to override
  double intensity = 1.0;
  bool renormalize = true;
  InjectionClock clock = InjectionClock::Normalized;

  // Plan over every site of `all`.
  static InjectionPlan for_sites(std::shared_ptr<const AttentionRecord> source, const std::vector<AttentionSite>& all,
                                 double tau);
  // Throws ConfigError on tau outside its range, empty sites, or a missing source.
  void validate() const;
  // Steps in [1, steps] at which maps are injected.
  std::vector<int> injected_steps(int steps) const;
};

// The override used at one generation step: merges the live cross/self maps
// with the plan's source maps when the step is injected, and applies the
// intensity weight to cross maps.
class StepOverride final : public AttentionOverride {
 public:
  StepOverride(const InjectionPlan& plan, int step, int steps, int k, int y);

  bool injecting() const { return inject_; }
  bool applies(const AttentionSite& site) const override;
  ad::Var apply(ad::Tape& tape, const AttentionSite& site, ad::Var live) const override;

 private:
  const InjectionPlan& plan_;
  int step_;
  int y_;
  bool inject_;
  ColumnTransform perm_;
  InjectionMask mask_;
};

}  // namespace tvdb
