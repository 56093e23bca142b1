#pragma once

// Binary containers exchanged with upstream tools.
//
//   FMX1 / KMC1 / MEL1: 4-byte magic, uint32 rows, uint32 cols, float32 rate,
//                       then rows*cols float32, all little-endian, row-major.
//   VAD1:               4-byte magic, uint32 frames, float32 rate, one byte per frame.
//   WAV:                16-bit PCM mono RIFF.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "rapgen/types.hpp"

namespace rapgen::io {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw InvalidInput(origin_ + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(buf_[pos_]) |
                                        (static_cast<unsigned char>(buf_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidInput("write failed: " + path.string());
}

// Generic float32 matrix container shared by FMX1/KMC1/MEL1.
struct MatrixFile {
  std::string magic;
  MatD data;
  double rate = 0.0;
};

inline std::string encode_matrix(std::string_view magic, const MatD& m, double rate) {
  require(magic.size() == 4, "matrix container: magic must be 4 bytes");
  std::string out(magic);
  out.reserve(16 + static_cast<std::size_t>(m.size()) * 4);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  detail::put_f32(out, static_cast<float>(rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(out, static_cast<float>(m.data()[i]));
  return out;
}

inline MatrixFile decode_matrix(std::string bytes, std::string_view expected_magic,
                                const std::string& origin = "matrix") {
  detail::Reader r(std::move(bytes), origin);
  MatrixFile f;
  f.magic = r.bytes(4);
  if (f.magic != expected_magic)
    throw InvalidInput(origin + ": bad magic '" + f.magic + "', expected '" +
                       std::string(expected_magic) + "'");
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  f.rate = r.f32();
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (r.remaining() != n * 4) throw InvalidInput(origin + ": payload size mismatch");
  f.data.resize(rows, cols);
  for (std::size_t i = 0; i < n; ++i) f.data.data()[i] = r.f32();
  if (!f.data.allFinite()) throw InvalidInput(origin + ": non-finite values");
  return f;
}

inline void write_features(const std::filesystem::path& p, const FeatureMatrix& fm) {
  write_file(p, encode_matrix("FMX1", fm.frames, fm.frame_rate_hz));
}

inline FeatureMatrix read_features(const std::filesystem::path& p) {
  auto f = decode_matrix(read_file(p), "FMX1", p.string());
  FeatureMatrix fm{std::move(f.data), f.rate};
  require(fm.frame_rate_hz > 0.0, p.string() + ": frame rate must be positive");
  return fm;
}

// The KMC1 rate field is unused and written as 0.
inline void write_codebook(const std::filesystem::path& p, const Codebook& cb) {
  write_file(p, encode_matrix("KMC1", cb.centroids, 0.0));
}

inline Codebook read_codebook(const std::filesystem::path& p) {
  auto f = decode_matrix(read_file(p), "KMC1", p.string());
  require(f.data.rows() >= 1, p.string() + ": codebook has no centroids");
  return Codebook{std::move(f.data), 0};
}

inline void write_mel(const std::filesystem::path& p, const MelSpectrogram& mel) {
  write_file(p, encode_matrix("MEL1", mel.frames, mel.frame_rate_hz));
}

inline MelSpectrogram read_mel(const std::filesystem::path& p) {
  auto f = decode_matrix(read_file(p), "MEL1", p.string());
  MelSpectrogram mel;
  mel.frames = std::move(f.data);
  mel.frame_rate_hz = f.rate;
  require(mel.frame_rate_hz > 0.0, p.string() + ": frame rate must be positive");
  return mel;
}

inline std::string encode_vad(const VadLabels& v) {
  std::string out = "VAD1";
  detail::put_u32(out, static_cast<std::uint32_t>(v.voiced.size()));
  detail::put_f32(out, static_cast<float>(v.rate_hz));
  for (auto b : v.voiced) out.push_back(static_cast<char>(b ? 1 : 0));
  return out;
}

inline VadLabels decode_vad(std::string bytes, const std::string& origin = "vad") {
  detail::Reader r(std::move(bytes), origin);
  if (r.bytes(4) != "VAD1") throw InvalidInput(origin + ": bad magic, expected 'VAD1'");
  const std::uint32_t n = r.u32();
  VadLabels v;
  v.rate_hz = r.f32();
  require(v.rate_hz > 0.0, origin + ": rate must be positive");
  if (r.remaining() != n) throw InvalidInput(origin + ": payload size mismatch");
  const std::string payload = r.bytes(n);
  v.voiced.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto b = static_cast<unsigned char>(payload[i]);
    require(b <= 1, origin + ": labels must be 0 or 1");
    v.voiced[i] = b;
  }
  return v;
}

inline void write_vad(const std::filesystem::path& p, const VadLabels& v) { write_file(p, encode_vad(v)); }
inline VadLabels read_vad(const std::filesystem::path& p) { return decode_vad(read_file(p), p.string()); }

// 16-bit PCM mono. Samples are clipped to [-1, 1] and rounded.
inline std::string encode_wav(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const auto sr = static_cast<std::uint32_t>(std::lround(clip.sample_rate_hz));
  std::string out = "RIFF";
  detail::put_u32(out, 36 + n * 2);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, sr);
  detail::put_u32(out, sr * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, n * 2);
  for (double s : clip.samples) {
    const double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    detail::put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

// Accepts 16-bit PCM; multi-channel input is averaged to mono.
inline AudioClip decode_wav(std::string bytes, const std::string& origin = "wav") {
  detail::Reader r(std::move(bytes), origin);
  if (r.bytes(4) != "RIFF") throw InvalidInput(origin + ": not a RIFF file");
  r.u32();
  if (r.bytes(4) != "WAVE") throw InvalidInput(origin + ": not a WAVE file");
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sr = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      format = r.u16();
      channels = r.u16();
      sr = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      if (size > 16) r.skip(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InvalidInput(origin + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16 || channels == 0)
        throw InvalidInput(origin + ": only 16-bit PCM is supported");
      const std::size_t avail = std::min<std::size_t>(size, r.remaining());
      const std::size_t frames = avail / (2u * channels);
      AudioClip clip;
      clip.sample_rate_hz = sr;
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c)
          acc += std::max(-1.0, static_cast<std::int16_t>(r.u16()) / 32767.0);
        clip.samples[i] = acc / channels;
      }
      return clip;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1u), r.remaining()));
    }
  }
  throw InvalidInput(origin + ": missing data chunk");
}

inline void write_wav(const std::filesystem::path& p, const AudioClip& clip) {
  write_file(p, encode_wav(clip));
}
inline AudioClip read_wav(const std::filesystem::path& p) { return decode_wav(read_file(p), p.string()); }

}  // namespace rapgen::io
