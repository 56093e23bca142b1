// Flow matching on eight Gaussians in the plane.
//   flow_ring [steps] [seed] [samples.tsv]

#include <fstream>
#include <iostream>
#include <string>

#include "rapgen/bench.hpp"

using namespace rapgen;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::stoi(argv[1]) : 2000;
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 1;
  const std::string out = argc > 3 ? argv[3] : "";

  GaussianRing ring;
  FlowToyBudget b;
  PointFlowField<double> field(2, b.hidden, b.layers, b.time_dim, seed);
  nn::AdamOptions opts;
  opts.lr = b.lr;
  nn::Adam<double> adam(field.params(), opts);
  Rng rng(seed + 1);
  for (int s = 1; s <= steps; ++s) {
    auto loss = field.loss(ring.sample(b.batch, rng), 1e-4, rng);
    ad::backward(loss);
    adam.step();
    if (s % 250 == 0 || s == steps) std::cout << "step " << s << "  loss " << loss.item() << "\n";
  }

  const MatD gen = field.sample(2000, 20, seed + 2);
  const MatD truth = ring.sample(2000, rng);
  std::cout << "energy distance (2000 vs 2000): " << energy_distance(gen, truth) << "\n";
  std::cout << "energy distance, untrained noise: " << energy_distance(rng.normal_matrix<double>(2000, 2), truth)
            << "\n";

  if (!out.empty()) {
    std::ofstream f(out);
    f << "x\ty\n";
    for (Eigen::Index i = 0; i < gen.rows(); ++i) f << gen(i, 0) << "\t" << gen(i, 1) << "\n";
    std::cout << "samples written to " << out << "\n";
  }
}
