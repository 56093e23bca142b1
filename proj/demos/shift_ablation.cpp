// Planted-rhythm shift ablation at a configurable budget.
//   shift_ablation [steps] [seeds] [jitter]

#include <iostream>
#include <string>

#include "rapgen/bench.hpp"

using namespace rapgen;

int main(int argc, char** argv) {
  AblationBudget budget;
  budget.steps = argc > 1 ? std::stoi(argv[1]) : 300;
  const int n_seeds = argc > 2 ? std::stoi(argv[2]) : 3;
  ToySpec spec;
  spec.beat_jitter = argc > 3 ? std::stoi(argv[3]) : spec.beat_period_frames / 2 - 1;

  std::vector<std::uint64_t> seeds;
  for (int i = 1; i <= n_seeds; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
  auto with_k = bench_lm_config(spec);
  auto without = with_k;
  without.shift_k = 0;

  std::cout << "period " << spec.beat_period_frames << ", K_true " << spec.k_true << ", jitter " << spec.beat_jitter
            << ", " << budget.steps << " steps, " << n_seeds << " seeds\n\n";
  const auto table = run_shift_ablation(spec, {with_k, without}, budget, seeds);
  std::cout << table.text();
}
