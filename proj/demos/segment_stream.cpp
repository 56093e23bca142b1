// Segmentation and subset bucketing on a synthetic hour of dense vocals.
//   segment_stream [seed]

#include <iostream>
#include <map>
#include <string>

#include "rapgen/rapbank.hpp"

using namespace rapgen;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;
  Rng rng(seed);

  VadLabels vad;
  vad.rate_hz = 100.0;
  vad.voiced.assign(360000, 0);
  for (std::size_t i = 0; i < vad.voiced.size();) {
    const auto on = static_cast<std::size_t>(rng.integer(20, 80));
    for (std::size_t k = i; k < std::min(vad.voiced.size(), i + on); ++k) vad.voiced[k] = 1;
    i += on + static_cast<std::size_t>(rng.integer(5, 40));
  }

  SegmentationOptions opts;
  opts.seed = seed;
  const auto segs = segment_vad(vad, opts);
  double total = 0.0;
  std::map<int, int> hist;
  for (const auto& s : segs) {
    total += s.duration();
    ++hist[static_cast<int>(s.duration() / 5.0) * 5];
  }
  std::cout << segs.size() << " segments, mean " << total / segs.size() << " s\n";
  for (auto [lo, n] : hist) std::cout << "  [" << lo << ", " << lo + 5 << ") s  " << std::string(n / 2, '#') << " " << n << "\n";

  // Random quality metrics per segment, bucketed with the default table.
  const SubsetThresholds th;
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double dnsmos = 2.0 + 2.5 * rng.uniform();
    const double pps = 8.0 + 30.0 * rng.uniform();
    const double primary = 0.6 + 0.4 * rng.uniform();
    ++counts[to_string(assign_subset(dnsmos, pps, primary, th))];
  }
  for (const auto& [name, n] : counts) std::cout << name << "\t" << n << "\n";
}
