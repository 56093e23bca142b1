#pragma once

// Hand-built inputs shared by the pipeline, CLI, and acceptance tests.

#include <filesystem>
#include <string>
#include <vector>

#include "rapgen/io.hpp"
#include "rapgen/rapbank.hpp"

namespace rapgen::test_support {

inline VadLabels vad_from_runs(double total_s, const std::vector<std::pair<double, double>>& runs,
                               double rate = 100.0) {
  VadLabels v;
  v.rate_hz = rate;
  v.voiced.assign(static_cast<std::size_t>(std::llround(total_s * rate)), 0);
  for (auto [a, b] : runs)
    for (auto i = static_cast<std::size_t>(std::llround(a * rate)); i < static_cast<std::size_t>(std::llround(b * rate)); ++i)
      v.voiced[i] = 1;
  return v;
}

inline std::string letters(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i % 5 == 4) ? "a " : "a";
  return s;
}

// Three songs whose voiced runs are separated by >= 4 s (no merging,
// whatever the threshold draw). Hand-traced outcome:
//   alpha_000 [1, 9]   en  dnsmos 3.9  pps 20  primary 1.00 -> Premium
//   alpha_001 [13, 20] en  dnsmos 3.6  pps 17  primary 0.95 -> Standard
//   beta_000  [0, 5]   en  dnsmos 2.4  pps 20  primary 1.00 -> Rejected
//   gamma_000 [2, 14]  zh  dnsmos 3.0  pps 13  primary 0.85 -> Basic
// beta's [10, 12] run is shorter than 3 s and dropped.
inline std::filesystem::path write_three_song_fixture(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Rng rng(77);
  auto audio = [&](const std::string& name, double seconds) {
    AudioClip c;
    c.samples.resize(static_cast<std::size_t>(seconds * kSampleRate));
    for (auto& s : c.samples) s = 0.01 * rng.normal();
    io::write_wav(dir / name, c);
  };
  audio("alpha_vocal.wav", 21.0);
  audio("alpha_accomp.wav", 21.0);
  audio("beta_vocal.wav", 13.0);
  audio("beta_accomp.wav", 13.0);
  audio("gamma_vocal.wav", 15.0);
  audio("gamma_accomp.wav", 15.0);
  io::write_vad(dir / "alpha.vad", vad_from_runs(21.0, {{1.0, 9.0}, {13.0, 20.0}}));
  io::write_vad(dir / "beta.vad", vad_from_runs(13.0, {{0.0, 5.0}, {10.0, 12.0}}));
  io::write_vad(dir / "gamma.vad", vad_from_runs(15.0, {{2.0, 14.0}}));
  io::write_file(dir / "alpha.txt", "alpha_000\t" + letters(160) + "\nalpha_001\t" + letters(119) + "\n");
  io::write_file(dir / "beta.txt", "beta_000\t" + letters(100) + "\n");
  io::write_file(dir / "gamma.txt", "gamma_000\t" + letters(156) + "\n");
  io::write_file(dir / "alpha.dnsmos", "alpha_000 3.9\nalpha_001 3.6\n");
  io::write_file(dir / "beta.dnsmos", "beta_000 2.4\n");
  io::write_file(dir / "gamma.dnsmos", "gamma_000 3.0\n");
  io::write_file(dir / "alpha.diar", "mc1 0.5 9.5\nmc1 13.0 19.65\nmc2 19.65 20.0\n");
  io::write_file(dir / "beta.diar", "x 0 5\n");
  io::write_file(dir / "gamma.diar", "p 2.0 12.2\nq 12.2 14.0\n");
  std::string manifest;
  for (const std::string song : {"alpha", "beta", "gamma"}) {
    json j{{"song_id", song},
           {"language", song == "gamma" ? "zh" : "en"},
           {"duration_s", song == "alpha" ? 21.0 : song == "beta" ? 13.0 : 15.0},
           {"vocal_path", song + "_vocal.wav"},
           {"accomp_path", song + "_accomp.wav"},
           {"vad_path", song + ".vad"},
           {"transcript_path", song + ".txt"},
           {"diarization_path", song + ".diar"},
           {"dnsmos_path", song + ".dnsmos"}};
    manifest += j.dump() + "\n";
  }
  io::write_file(dir / "manifest.jsonl", manifest);
  return dir / "manifest.jsonl";
}

}  // namespace rapgen::test_support
