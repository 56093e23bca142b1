// Stand-in for an external vocoder: IN.mel -> OUT.wav of silence lasting
// T * hop samples.
#include <iostream>

#include "rapgen/io.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: stub_vocoder IN.mel OUT.wav\n";
    return 2;
  }
  try {
    const auto mel = rapgen::io::read_mel(argv[1]);
    rapgen::AudioClip clip;
    clip.samples.assign(static_cast<std::size_t>(mel.length()) * rapgen::kHop, 0.0);
    rapgen::io::write_wav(argv[2], clip);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
