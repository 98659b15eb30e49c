// Simulate a small linear causal graph, run selection, compare with truth.

#include "drcfs/dgp.hpp"
#include "drcfs/drcfs.hpp"

#include <cstdio>

int main() {
  drcfs::DgpConfig dgp;
  dgp.m = 8;
  dgp.n = 3000;
  dgp.p_c = 0.3;
  dgp.seed = 11;
  const auto sim = drcfs::simulate_dataset(dgp);

  drcfs::DrcfsConfig cfg;
  cfg.seed = 1;
  const auto report = drcfs::run_drcfs({sim.features, sim.outcome, sim.column_names}, cfg);

  for (std::size_t j = 0; j < report.results.size(); ++j) {
    const auto& r = report.results[j];
    std::printf("%-4s chi=%9.5f p_adj=%.3g selected=%d parent=%d\n", r.name.c_str(), r.chi, r.p_adj, r.selected,
                static_cast<int>(sim.observed_parent_mask[j]));
  }
  const auto m = drcfs::score_selection(report.selected_mask(), sim.observed_parent_mask);
  std::printf("acc=%.3f f1=%.3f csi=%.3f\n", m.acc, m.f1, m.csi);
}
