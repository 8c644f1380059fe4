#include "tvdb/attention.hpp"

#include "tvdb/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tvdb {

std::string to_string(AttentionKind kind) { return kind == AttentionKind::Cross ? "cross" : "self"; }

void AttentionRecord::put(int step, const AttentionSite& site, Mat map) {
  put(AttentionKey{step, site.id, site.kind}, std::move(map));
}

void AttentionRecord::put(const AttentionKey& key, Mat map) { entries_[key] = std::move(map); }

bool AttentionRecord::contains(int step, int site) const {
  auto it = entries_.lower_bound(AttentionKey{step, site, AttentionKind::Cross});
  return it != entries_.end() && it->first.step == step && it->first.site == site;
}

const Mat& AttentionRecord::at(int step, int site) const {
  auto it = entries_.lower_bound(AttentionKey{step, site, AttentionKind::Cross});
  if (it == entries_.end() || it->first.step != step || it->first.site != site) {
    throw ConfigError("AttentionRecord: no map for step " + std::to_string(step) + ", site " +
                      std::to_string(site));
  }
  return it->second;
}

double AttentionRecord::max_stochastic_violation() const {
  double worst = 0.0;
  for (const auto& [key, m] : entries_) {
    worst = std::max(worst, (m.rowwise().sum().array() - 1.0).abs().maxCoeff());
    worst = std::max(worst, -std::min(0.0, m.minCoeff()));
  }
  return worst;
}

bool AttentionRecord::covers(int first, int last, const std::vector<AttentionSite>& sites) const {
  for (int t = first; t <= last; ++t) {
    for (const auto& s : sites) {
      if (!contains(t, s.id)) return false;
    }
  }
  return true;
}

}  // namespace tvdb
