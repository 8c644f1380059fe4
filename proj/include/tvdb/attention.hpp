#pragma once

#include "tvdb/autodiff.hpp"

#include <map>
#include <string>
#include <vector>

namespace tvdb {

enum class AttentionKind { Cross, Self };

std::string to_string(AttentionKind kind);

// One attention layer of the denoiser. `positions` is the number of query rows (j).
struct AttentionSite {
  int id = 0;
  AttentionKind kind = AttentionKind::Self;
  int positions = 0;
  int channels = 0;
  std::string name;
};

struct AttentionKey {
  int step = 0;
  int site = 0;
  AttentionKind kind = AttentionKind::Self;

  auto operator<=>(const AttentionKey&) const = default;
};

// Row-stochastic attention maps indexed by (timestep, site, kind).
// Cross maps are j x k, self maps are j x j.
class AttentionRecord {
 public:
  void put(int step, const AttentionSite& site, Mat map);
  void put(const AttentionKey& key, Mat map);

  bool contains(int step, int site) const;
  const Mat& at(int step, int site) const;
  const std::map<AttentionKey, Mat>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Largest |row sum - 1| or negative entry over all stored maps.
  double max_stochastic_violation() const;
  // True when every (step, site) pair in [first, last] x sites is present.
  bool covers(int first, int last, const std::vector<AttentionSite>& sites) const;

 private:
  std::map<AttentionKey, Mat> entries_;
};

// Hook applied by the denoiser to the softmax output of an attention site before
// the weighted value aggregation. Implementations must build the replacement on
// the tape so gradients flow through the live map where intended.
class AttentionOverride {
 public:
  virtual ~AttentionOverride() = default;
  virtual bool applies(const AttentionSite& site) const = 0;
  virtual ad::Var apply(ad::Tape& tape, const AttentionSite& site, ad::Var live) const = 0;
};

}  // namespace tvdb
