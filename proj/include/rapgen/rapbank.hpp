#pragma once

// RapBank curation: VAD segmentation with Gaussian merge thresholds, quality
// metrics (tempo, DNSMOS, primary-singer share), subset assignment, and
// dataset statistics over the resulting segment manifest.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rapgen/io.hpp"
#include "rapgen/lyrics.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

using json = nlohmann::json;

// ---------------------------------------------------------------- segmentation

struct Span {
  double start_s = 0.0;
  double end_s = 0.0;
  double duration() const { return end_s - start_s; }
  bool operator==(const Span&) const = default;
};

struct SegmentationOptions {
  double merge_gap_s = 3.0;
  double threshold_mean_s = 18.0;
  double threshold_std_s = 3.0;
  double min_len_s = 3.0;
  std::uint64_t seed = 0;
};

inline std::vector<Span> voiced_runs(const VadLabels& labels) {
  require(labels.rate_hz > 0.0, "vad: rate must be positive");
  std::vector<Span> runs;
  const auto n = labels.voiced.size();
  std::size_t i = 0;
  while (i < n) {
    if (!labels.voiced[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && labels.voiced[j]) ++j;
    runs.push_back({static_cast<double>(i) / labels.rate_hz, static_cast<double>(j) / labels.rate_hz});
    i = j;
  }
  return runs;
}

// Greedy left-to-right merge. A group absorbs the next run while the gap to
// it is below merge_gap_s and the group's span has not yet reached its
// threshold, drawn from N(mean, std) when the group opens. Groups shorter
// than min_len_s are dropped.
inline std::vector<Span> segment_vad(const VadLabels& labels, const SegmentationOptions& opts) {
  require(opts.merge_gap_s > 0.0 && opts.min_len_s > 0.0, "segment_vad: merge gap and minimum length must be positive");
  require(opts.threshold_std_s >= 0.0, "segment_vad: threshold std must be >= 0");
  const auto runs = voiced_runs(labels);
  Rng rng(opts.seed);
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < runs.size()) {
    Span group = runs[i++];
    const double threshold = rng.normal(opts.threshold_mean_s, opts.threshold_std_s);
    while (i < runs.size() && runs[i].start_s - group.end_s < opts.merge_gap_s && group.duration() < threshold)
      group.end_s = runs[i++].end_s;
    if (group.duration() >= opts.min_len_s) out.push_back(group);
  }
  return out;
}

// Energy-based voiced/unvoiced labels at 100 Hz, for songs without
// upstream VAD output.
inline VadLabels energy_vad(const AudioClip& clip, double threshold_dbfs = -40.0, double rate_hz = 100.0) {
  require(rate_hz > 0.0, "energy_vad: rate must be positive");
  VadLabels v;
  v.rate_hz = rate_hz;
  const auto hop = static_cast<std::size_t>(std::llround(clip.sample_rate_hz / rate_hz));
  require(hop >= 1, "energy_vad: rate too high for sample rate");
  const double thresh = std::pow(10.0, threshold_dbfs / 20.0);
  for (std::size_t start = 0; start < clip.samples.size(); start += hop) {
    const std::size_t end = std::min(clip.samples.size(), start + hop);
    double sq = 0.0;
    for (std::size_t k = start; k < end; ++k) sq += clip.samples[k] * clip.samples[k];
    v.voiced.push_back(std::sqrt(sq / static_cast<double>(end - start)) >= thresh ? 1 : 0);
  }
  return v;
}

inline std::pair<std::size_t, std::size_t> sample_range(const Span& s, const AudioClip& clip) {
  require(s.start_s >= 0.0 && s.end_s >= s.start_s, "slice: malformed segment");
  const auto a = static_cast<std::size_t>(std::llround(s.start_s * clip.sample_rate_hz));
  const auto b = static_cast<std::size_t>(std::llround(s.end_s * clip.sample_rate_hz));
  require(b <= clip.samples.size(), "slice: segment extends past the end of the clip");
  return {a, b};
}

inline AudioClip slice_clip(const Span& s, const AudioClip& clip) {
  const auto [a, b] = sample_range(s, clip);
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(a),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(b));
  return out;
}

inline std::vector<AudioClip> slice_accompaniment(const std::vector<Span>& segments, const AudioClip& accomp) {
  std::vector<AudioClip> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(slice_clip(s, accomp));
  return out;
}

// ---------------------------------------------------------------- quality metrics

inline double compute_pps(int phoneme_count, double duration_s) {
  require(duration_s > 0.0, "compute_pps: duration must be positive");
  require(phoneme_count >= 0, "compute_pps: negative phoneme count");
  return phoneme_count / duration_s;
}

struct DiarizationTurn {
  std::string speaker;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct PrimaryFraction {
  double fraction = 1.0;
  bool warning = false;  // no diarized speech inside the segment
  std::string speaker;
};

// Share of the segment's diarized time belonging to its longest-singing
// speaker. Each speaker's time is the union of their turns clipped to the
// segment; the denominator sums those per-speaker totals.
inline PrimaryFraction primary_singer_fraction(const std::vector<DiarizationTurn>& turns, const Span& segment) {
  std::map<std::string, std::vector<std::pair<double, double>>> by_speaker;
  for (const auto& t : turns) {
    require(t.end_s >= t.start_s, "diarization: turn ends before it starts");
    const double a = std::max(t.start_s, segment.start_s), b = std::min(t.end_s, segment.end_s);
    if (b > a) by_speaker[t.speaker].push_back({a, b});
  }
  PrimaryFraction r;
  double total = 0.0, best = -1.0;
  for (auto& [spk, iv] : by_speaker) {
    std::sort(iv.begin(), iv.end());
    double covered = 0.0, cur_a = iv.front().first, cur_b = iv.front().second;
    for (std::size_t k = 1; k < iv.size(); ++k) {
      if (iv[k].first > cur_b) {
        covered += cur_b - cur_a;
        cur_a = iv[k].first;
        cur_b = iv[k].second;
      } else {
        cur_b = std::max(cur_b, iv[k].second);
      }
    }
    covered += cur_b - cur_a;
    total += covered;
    if (covered > best) {
      best = covered;
      r.speaker = spk;
    }
  }
  if (total <= 0.0) {
    r.fraction = 1.0;
    r.warning = true;
    return r;
  }
  r.fraction = std::clamp(best / total, 0.0, 1.0);
  return r;
}

// ---------------------------------------------------------------- subsets

enum class Subset { Rejected = 0, Basic = 1, Standard = 2, Premium = 3 };

inline std::string to_string(Subset s) {
  switch (s) {
    case Subset::Premium: return "Premium";
    case Subset::Standard: return "Standard";
    case Subset::Basic: return "Basic";
    default: return "Rejected";
  }
}

inline Subset subset_from_string(const std::string& s) {
  if (s == "Premium") return Subset::Premium;
  if (s == "Standard") return Subset::Standard;
  if (s == "Basic") return Subset::Basic;
  if (s == "Rejected") return Subset::Rejected;
  throw InvalidInput("unknown subset name: " + s);
}

struct SubsetRule {
  double dnsmos_min = 0.0;
  double pps_min = 0.0;
  double pps_max = 0.0;
  double primary_min = 0.0;

  bool admits(double dnsmos, double pps, double primary) const {
    return dnsmos >= dnsmos_min && pps >= pps_min && pps <= pps_max && primary >= primary_min;
  }
};

struct SubsetThresholds {
  SubsetRule basic{2.5, 12.0, 35.0, 0.8};
  SubsetRule standard{3.5, 16.0, 32.0, 0.9};
  SubsetRule premium{3.8, 18.0, 30.0, 1.0};

  // Each stricter subset must be strictly tighter in every coordinate.
  void validate() const {
    auto tighter = [](const SubsetRule& hi, const SubsetRule& lo) {
      return hi.dnsmos_min > lo.dnsmos_min && hi.pps_min > lo.pps_min && hi.pps_max < lo.pps_max &&
             hi.primary_min > lo.primary_min && hi.pps_min <= hi.pps_max;
    };
    require(basic.pps_min <= basic.pps_max, "thresholds: Basic PPS band is empty");
    require(tighter(standard, basic), "thresholds: Standard must be strictly nested inside Basic");
    require(tighter(premium, standard), "thresholds: Premium must be strictly nested inside Standard");
  }
};

struct Segment {
  std::string id;
  std::string song_id;
  std::string language;
  Span span;
  std::optional<double> pps;
  std::optional<double> dnsmos;
  std::optional<double> primary_frac;
  bool primary_warning = false;
  Subset subset = Subset::Rejected;
  std::vector<std::string> notes;

  double duration() const { return span.duration(); }
};

inline Subset assign_subset(double dnsmos, double pps, double primary, const SubsetThresholds& th) {
  require(std::isfinite(dnsmos) && std::isfinite(pps) && std::isfinite(primary), "assign_subset: non-finite metric");
  if (th.premium.admits(dnsmos, pps, primary)) return Subset::Premium;
  if (th.standard.admits(dnsmos, pps, primary)) return Subset::Standard;
  if (th.basic.admits(dnsmos, pps, primary)) return Subset::Basic;
  return Subset::Rejected;
}

inline Subset assign_subset(const Segment& seg, const SubsetThresholds& th) {
  if (!seg.dnsmos) throw InvalidInput("assign_subset: missing DNSMOS for " + seg.id);
  if (!seg.pps) throw InvalidInput("assign_subset: missing PPS for " + seg.id);
  if (!seg.primary_frac) throw InvalidInput("assign_subset: missing primary-singer fraction for " + seg.id);
  return assign_subset(*seg.dnsmos, *seg.pps, *seg.primary_frac, th);
}

inline json to_json(const SubsetRule& r) {
  return {{"dnsmos_min", r.dnsmos_min}, {"pps_min", r.pps_min}, {"pps_max", r.pps_max}, {"primary_min", r.primary_min}};
}

inline json to_json(const SubsetThresholds& t) {
  return {{"basic", to_json(t.basic)}, {"standard", to_json(t.standard)}, {"premium", to_json(t.premium)}};
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InvalidInput(where + ": unknown key '" + k + "'");
}

}  // namespace detail

inline SubsetRule subset_rule_from_json(const json& j, const std::string& where) {
  detail::check_keys(j, {"dnsmos_min", "pps_min", "pps_max", "primary_min"}, where);
  SubsetRule r;
  try {
    r.dnsmos_min = j.at("dnsmos_min").get<double>();
    r.pps_min = j.at("pps_min").get<double>();
    r.pps_max = j.at("pps_max").get<double>();
    r.primary_min = j.at("primary_min").get<double>();
  } catch (const json::exception& e) {
    throw InvalidInput(where + ": " + e.what());
  }
  return r;
}

inline SubsetThresholds thresholds_from_json(const json& j) {
  detail::check_keys(j, {"basic", "standard", "premium"}, "thresholds");
  SubsetThresholds t;
  if (j.contains("basic")) t.basic = subset_rule_from_json(j.at("basic"), "thresholds.basic");
  if (j.contains("standard")) t.standard = subset_rule_from_json(j.at("standard"), "thresholds.standard");
  if (j.contains("premium")) t.premium = subset_rule_from_json(j.at("premium"), "thresholds.premium");
  t.validate();
  return t;
}

// ---------------------------------------------------------------- ingest formats

struct SongRecord {
  std::string song_id;
  std::string language;
  double duration_s = 0.0;
  std::filesystem::path vocal_path;
  std::filesystem::path accomp_path;
  std::optional<std::filesystem::path> vad_path;
  std::optional<std::filesystem::path> transcript_path;
  std::optional<std::filesystem::path> phoneme_path;
  std::optional<std::filesystem::path> diarization_path;
  std::optional<std::filesystem::path> dnsmos_path;
};

// One JSON object per line; relative paths resolve against `base_dir`.
inline std::vector<SongRecord> read_song_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest: " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<SongRecord> out;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    detail::check_keys(j,
                       {"song_id", "language", "duration_s", "vocal_path", "accomp_path", "vad_path",
                        "transcript_path", "phoneme_path", "diarization_path", "dnsmos_path"},
                       where);
    SongRecord r;
    try {
      r.song_id = j.at("song_id").get<std::string>();
      r.language = j.at("language").get<std::string>();
      r.duration_s = j.at("duration_s").get<double>();
      r.vocal_path = resolve(j.at("vocal_path").get<std::string>());
      r.accomp_path = resolve(j.at("accomp_path").get<std::string>());
      if (j.contains("vad_path")) r.vad_path = resolve(j["vad_path"].get<std::string>());
      if (j.contains("transcript_path")) r.transcript_path = resolve(j["transcript_path"].get<std::string>());
      if (j.contains("phoneme_path")) r.phoneme_path = resolve(j["phoneme_path"].get<std::string>());
      if (j.contains("diarization_path")) r.diarization_path = resolve(j["diarization_path"].get<std::string>());
      if (j.contains("dnsmos_path")) r.dnsmos_path = resolve(j["dnsmos_path"].get<std::string>());
    } catch (const json::exception& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    require(!r.song_id.empty(), where + ": empty song_id");
    require(r.duration_s > 0.0, where + ": duration_s must be positive");
    require(ids.insert(r.song_id).second, where + ": duplicate song_id " + r.song_id);
    out.push_back(std::move(r));
  }
  return out;
}

// "speaker_id start_s end_s" per line.
inline std::vector<DiarizationTurn> read_diarization(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open diarization file: " + path.string());
  std::vector<DiarizationTurn> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    DiarizationTurn t;
    if (!(ls >> t.speaker)) continue;
    if (!(ls >> t.start_s >> t.end_s) || t.end_s < t.start_s)
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": malformed diarization line");
    out.push_back(t);
  }
  return out;
}

// "segment_id score" per line.
inline std::map<std::string, double> read_dnsmos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open DNSMOS file: " + path.string());
  std::map<std::string, double> out;
  std::string line, id;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    if (!(ls >> id)) continue;
    double score = 0.0;
    if (!(ls >> score) || !std::isfinite(score))
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": malformed DNSMOS line");
    out[id] = score;
  }
  return out;
}

// "segment_id<TAB>text" per line (also used for phoneme files).
inline std::map<std::string, std::string> read_tabbed(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open file: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected segment_id<TAB>text");
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

// ---------------------------------------------------------------- pipeline

struct PipelineOptions {
  SegmentationOptions segmentation{};
  SubsetThresholds thresholds{};
  std::uint64_t seed = 0;
  bool write_audio = true;
};

inline std::string segment_id(const std::string& song_id, std::size_t index) {
  std::ostringstream os;
  os << song_id << "_" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

inline json to_json(const Segment& s) {
  json j{{"segment_id", s.id},
         {"song_id", s.song_id},
         {"language", s.language},
         {"start_s", s.span.start_s},
         {"end_s", s.span.end_s},
         {"duration_s", s.duration()},
         {"subset", to_string(s.subset)},
         {"primary_warning", s.primary_warning},
         {"notes", s.notes}};
  j["pps"] = s.pps ? json(*s.pps) : json(nullptr);
  j["dnsmos"] = s.dnsmos ? json(*s.dnsmos) : json(nullptr);
  j["primary_frac"] = s.primary_frac ? json(*s.primary_frac) : json(nullptr);
  return j;
}

// Segments one song and scores each segment. Missing metrics reject the
// segment with a note instead of failing the run.
inline std::vector<Segment> process_song(const SongRecord& song, const PipelineOptions& opts,
                                         const std::filesystem::path& audio_out = {}) {
  auto seg_opts = opts.segmentation;
  seg_opts.seed = derive_seed(opts.seed, song.song_id);

  std::optional<AudioClip> vocal;
  auto load_vocal = [&]() -> const AudioClip& {
    if (!vocal) vocal = io::read_wav(song.vocal_path);
    return *vocal;
  };
  const VadLabels vad = song.vad_path ? io::read_vad(*song.vad_path) : energy_vad(load_vocal());
  const auto spans = segment_vad(vad, seg_opts);

  std::map<std::string, double> dnsmos;
  if (song.dnsmos_path) dnsmos = read_dnsmos(*song.dnsmos_path);
  std::map<std::string, std::string> transcript, phonemes;
  if (song.transcript_path) transcript = read_tabbed(*song.transcript_path);
  if (song.phoneme_path) phonemes = read_tabbed(*song.phoneme_path);
  std::vector<DiarizationTurn> turns;
  if (song.diarization_path) turns = read_diarization(*song.diarization_path);

  std::vector<Segment> out;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    Segment s;
    s.id = segment_id(song.song_id, k);
    s.song_id = song.song_id;
    s.language = song.language;
    s.span = spans[k];
    if (auto it = phonemes.find(s.id); it != phonemes.end())
      s.pps = compute_pps(count_phoneme_symbols(it->second), s.duration());
    else if (auto jt = transcript.find(s.id); jt != transcript.end())
      s.pps = compute_pps(count_phoneme_units(jt->second), s.duration());
    else
      s.notes.push_back("missing transcript");
    if (auto it = dnsmos.find(s.id); it != dnsmos.end())
      s.dnsmos = it->second;
    else
      s.notes.push_back("missing dnsmos");
    if (song.diarization_path) {
      const auto pf = primary_singer_fraction(turns, s.span);
      s.primary_frac = pf.fraction;
      s.primary_warning = pf.warning;
      if (pf.warning) s.notes.push_back("no diarized speech in segment");
    } else {
      s.notes.push_back("missing diarization");
    }
    s.subset = (s.pps && s.dnsmos && s.primary_frac) ? assign_subset(s, opts.thresholds) : Subset::Rejected;
    out.push_back(std::move(s));
  }

  if (opts.write_audio && !audio_out.empty() && !out.empty()) {
    const AudioClip accomp = io::read_wav(song.accomp_path);
    const AudioClip& voc = load_vocal();
    for (const auto& s : out) {
      io::write_wav(audio_out / (s.id + "_vocal.wav"), slice_clip(s.span, voc));
      io::write_wav(audio_out / (s.id + "_accomp.wav"), slice_clip(s.span, accomp));
    }
  }
  return out;
}

// ---------------------------------------------------------------- statistics

struct StatsReport {
  std::size_t segments = 0;
  std::size_t skipped_rows = 0;
  double total_s = 0.0;
  double mean_duration_s = 0.0;
  std::map<std::string, double> language_s;
  std::map<std::string, std::size_t> language_count;
  std::vector<std::size_t> histogram;  // 1 s bins starting at 0
  std::map<std::string, std::size_t> subset_count;
  std::map<std::string, double> subset_s;
  // Cumulative: a Premium segment also counts toward Standard and Basic.
  std::map<std::string, double> subset_inclusive_s;

  json to_json() const {
    return {{"segments", segments},
            {"skipped_rows", skipped_rows},
            {"total_s", total_s},
            {"total_h", total_s / 3600.0},
            {"mean_duration_s", mean_duration_s},
            {"language_s", language_s},
            {"language_count", language_count},
            {"histogram_1s", histogram},
            {"subset_count", subset_count},
            {"subset_s", subset_s},
            {"subset_inclusive_s", subset_inclusive_s}};
  }
};

struct SegmentRow {
  std::string language;
  double duration_s = 0.0;
  Subset subset = Subset::Rejected;
};

inline StatsReport dataset_stats(const std::vector<SegmentRow>& rows, std::size_t skipped = 0) {
  StatsReport r;
  r.skipped_rows = skipped;
  for (const char* name : {"Premium", "Standard", "Basic", "Rejected"}) {
    r.subset_count[name] = 0;
    r.subset_s[name] = 0.0;
  }
  for (const char* name : {"Premium", "Standard", "Basic"}) r.subset_inclusive_s[name] = 0.0;
  for (const auto& row : rows) {
    ++r.segments;
    r.total_s += row.duration_s;
    r.language_s[row.language] += row.duration_s;
    ++r.language_count[row.language];
    const auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(row.duration_s)));
    if (r.histogram.size() <= bin) r.histogram.resize(bin + 1, 0);
    ++r.histogram[bin];
    const auto name = to_string(row.subset);
    ++r.subset_count[name];
    r.subset_s[name] += row.duration_s;
    for (Subset s : {Subset::Basic, Subset::Standard, Subset::Premium})
      if (row.subset >= s) r.subset_inclusive_s[to_string(s)] += row.duration_s;
  }
  r.mean_duration_s = r.segments ? r.total_s / static_cast<double>(r.segments) : 0.0;
  return r;
}

// Reads a segment manifest (pipeline output); unreadable rows are counted
// and skipped.
inline StatsReport dataset_stats(const std::filesystem::path& segment_manifest) {
  std::ifstream in(segment_manifest);
  if (!in) throw InvalidInput("cannot open segment manifest: " + segment_manifest.string());
  std::vector<SegmentRow> rows;
  std::size_t skipped = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      SegmentRow row;
      row.language = j.at("language").get<std::string>();
      row.duration_s = j.at("duration_s").get<double>();
      row.subset = subset_from_string(j.at("subset").get<std::string>());
      if (!std::isfinite(row.duration_s) || row.duration_s < 0.0) throw InvalidInput("bad duration");
      rows.push_back(row);
    } catch (const std::exception&) {
      ++skipped;
    }
  }
  return dataset_stats(rows, skipped);
}

inline void write_stats(const StatsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "stats.json", r.to_json().dump(2) + "\n");
  std::ostringstream hist;
  hist << "bin_start_s\tcount\n";
  for (std::size_t b = 0; b < r.histogram.size(); ++b) hist << b << "\t" << r.histogram[b] << "\n";
  io::write_file(dir / "duration_hist.tsv", hist.str());
  std::ostringstream lang;
  lang << "language\tsegments\thours\n";
  for (const auto& [l, s] : r.language_s) lang << l << "\t" << r.language_count.at(l) << "\t" << s / 3600.0 << "\n";
  io::write_file(dir / "language.tsv", lang.str());
}

struct PipelineResult {
  std::vector<Segment> segments;
  StatsReport stats;
};

// Processes every song of a manifest into DIR/segments.jsonl, optional
// audio slices under DIR/audio, and statistics files.
inline PipelineResult run_pipeline(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                                   const PipelineOptions& opts) {
  opts.thresholds.validate();
  const auto songs = read_song_manifest(manifest);
  std::filesystem::create_directories(out_dir);
  PipelineResult result;
  std::vector<SegmentRow> rows;
  std::ostringstream jsonl;
  for (const auto& song : songs) {
    auto segs = process_song(song, opts, opts.write_audio ? out_dir / "audio" : std::filesystem::path{});
    for (auto& s : segs) {
      jsonl << to_json(s).dump() << "\n";
      rows.push_back({s.language, s.duration(), s.subset});
      result.segments.push_back(std::move(s));
    }
  }
  io::write_file(out_dir / "segments.jsonl", jsonl.str());
  result.stats = dataset_stats(rows);
  write_stats(result.stats, out_dir);
  return result;
}

}  // namespace rapgen
