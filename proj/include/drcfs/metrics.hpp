#pragma once

#include "drcfs/common.hpp"

#include <cstddef>
#include <vector>

namespace drcfs {

struct Confusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
};

inline Confusion confusion(const std::vector<bool>& selected, const std::vector<bool>& truth) {
  if (selected.size() != truth.size()) {
    throw Error("confusion: selection has " + std::to_string(selected.size()) + " entries, truth has " +
                std::to_string(truth.size()));
  }
  Confusion c;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i] && truth[i]) ++c.tp;
    else if (!selected[i] && !truth[i]) ++c.tn;
    else if (selected[i]) ++c.fp;
    else ++c.fn;
  }
  return c;
}

// An empty table scores 1 (nothing to get wrong).
inline double accuracy(const Confusion& c) {
  if (c.total() == 0) return 1.0;
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// tp = fp = fn = 0 (all-negative truth, nothing selected) scores 1.
inline double f1_score(const Confusion& c) {
  const std::size_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

inline double csi(const Confusion& c) {
  const std::size_t den = c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(den);
}

struct SelectionMetrics {
  Confusion counts;
  double acc = 0.0;
  double f1 = 0.0;
  double csi = 0.0;
};

inline SelectionMetrics score_selection(const std::vector<bool>& selected, const std::vector<bool>& truth) {
  SelectionMetrics s;
  s.counts = confusion(selected, truth);
  s.acc = accuracy(s.counts);
  s.f1 = f1_score(s.counts);
  s.csi = csi(s.counts);
  return s;
}

}  // namespace drcfs
