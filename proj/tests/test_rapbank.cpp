#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "rapgen/rapbank.hpp"

using namespace rapgen;
using test_support::vad_from_runs;

namespace {

SegmentationOptions fixed_threshold(double mean) {
  SegmentationOptions o;
  o.threshold_mean_s = mean;
  o.threshold_std_s = 0.0;
  return o;
}

// Dense syllable-scale voicing: short runs separated by short pauses.
VadLabels dense_stream(Rng& rng, double total_s) {
  std::vector<std::pair<double, double>> runs;
  double t = 0.0;
  while (t < total_s) {
    const double len = 0.2 + 0.6 * rng.uniform();
    runs.push_back({t, std::min(total_s, t + len)});
    t += len + 0.05 + 0.35 * rng.uniform();
  }
  return vad_from_runs(total_s, runs);
}

}  // namespace

TEST(Segment, SingleRunAndHandTrace) {
  auto one = segment_vad(vad_from_runs(12.0, {{1.0, 11.0}}), fixed_threshold(18.0));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], (Span{1.0, 11.0}));

  auto three = segment_vad(vad_from_runs(31.0, {{0.0, 8.0}, {9.0, 17.0}, {21.0, 30.0}}), SegmentationOptions{});
  ASSERT_EQ(three.size(), 2u);
  EXPECT_EQ(three[0], (Span{0.0, 17.0}));
  EXPECT_EQ(three[1], (Span{21.0, 30.0}));
  SegmentationOptions d;
  EXPECT_EQ(d.merge_gap_s, 3.0);
  EXPECT_EQ(d.threshold_mean_s, 18.0);
  EXPECT_EQ(d.min_len_s, 3.0);
}

TEST(Segment, ThresholdStopsMergingAndShortGroupsDrop) {
  // Threshold 10: [0,6] absorbs [7,12] (span 6 < 10), then span 12 stops.
  auto s = segment_vad(vad_from_runs(30.0, {{0.0, 6.0}, {7.0, 12.0}, {13.0, 20.0}, {25.0, 27.0}}), fixed_threshold(10.0));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (Span{0.0, 12.0}));
  EXPECT_EQ(s[1], (Span{13.0, 20.0}));  // [25, 27] is only 2 s
  EXPECT_TRUE(segment_vad(VadLabels{}, SegmentationOptions{}).empty());
}

TEST(Segment, StreamInvariantsAndDeterminism) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::pair<double, double>> runs;
    double t = rng.uniform() * 2.0;
    while (t < 200.0) {
      const double len = 0.1 + 6.0 * rng.uniform();
      runs.push_back({t, std::min(200.0, t + len)});
      t += len + 0.01 + 5.0 * rng.uniform();
    }
    const auto vad = vad_from_runs(200.0, runs);
    SegmentationOptions o;
    o.seed = static_cast<std::uint64_t>(trial);
    const auto segs = segment_vad(vad, o);
    EXPECT_EQ(segs, segment_vad(vad, o));
    const auto voiced = voiced_runs(vad);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      EXPECT_GE(segs[i].duration(), 3.0 - 1e-9);
      if (i) {
        EXPECT_LE(segs[i - 1].end_s, segs[i].start_s);
      }
      // Every silence inside a segment is shorter than the merge gap.
      double prev_end = -1.0;
      for (const auto& r : voiced) {
        if (r.start_s < segs[i].start_s - 1e-9 || r.end_s > segs[i].end_s + 1e-9) continue;
        if (prev_end >= 0.0) {
          EXPECT_LT(r.start_s - prev_end, 3.0);
        }
        prev_end = r.end_s;
      }
    }
  }
}

TEST(Segment, DenseStreamMeanNearThresholdMean) {
  Rng rng(2);
  const auto vad = dense_stream(rng, 3600.0);
  SegmentationOptions o;
  o.seed = 3;
  const auto segs = segment_vad(vad, o);
  double total = 0.0;
  for (const auto& s : segs) total += s.duration();
  EXPECT_NEAR(total / segs.size(), 18.0, 1.5);
}

TEST(Segment, EnergyVadFallback) {
  AudioClip c;
  c.samples.assign(44100, 0.0);
  for (std::size_t i = 11025; i < 33075; ++i) c.samples[i] = 0.3 * std::sin(0.05 * i);
  auto v = energy_vad(c);
  ASSERT_EQ(v.voiced.size(), 100u);
  EXPECT_EQ(v.voiced[10], 0);
  EXPECT_EQ(v.voiced[50], 1);
  EXPECT_EQ(v.voiced[90], 0);
}

TEST(Slice, SampleAccurate) {
  AudioClip c;
  for (int i = 0; i < 3 * 44100; ++i) c.samples.push_back(i * 1e-6);
  auto full = slice_accompaniment({Span{0.0, c.duration_s()}}, c);
  EXPECT_EQ(full[0].samples, c.samples);
  auto one = slice_clip(Span{1.0, 2.0}, c);
  ASSERT_EQ(one.samples.size(), 44100u);
  EXPECT_EQ(one.samples.front(), c.samples[44100]);
  EXPECT_THROW(slice_clip(Span{2.5, 3.5}, c), InvalidInput);
}

TEST(Pps, Arithmetic) {
  EXPECT_EQ(compute_pps(0, 4.0), 0.0);
  EXPECT_EQ(compute_pps(36, 1.5), 24.0);
  EXPECT_THROW(compute_pps(3, 0.0), InvalidInput);
  EXPECT_THROW(compute_pps(3, -1.0), InvalidInput);
}

TEST(PrimarySinger, IntervalArithmetic) {
  const Span seg{0.0, 10.0};
  EXPECT_EQ(primary_singer_fraction({{"a", -1.0, 12.0}}, seg).fraction, 1.0);
  auto r = primary_singer_fraction({{"a", 0.0, 3.0}, {"b", 3.0, 7.0}, {"a", 7.0, 10.0}}, seg);
  EXPECT_NEAR(r.fraction, 0.6, 1e-12);
  EXPECT_EQ(r.speaker, "a");
  EXPECT_FALSE(r.warning);
  // Overlapping turns of one speaker count once.
  EXPECT_NEAR(primary_singer_fraction({{"a", 0.0, 4.0}, {"a", 2.0, 6.0}, {"b", 6.0, 10.0}}, seg).fraction, 0.6, 1e-12);
  auto empty = primary_singer_fraction({}, seg);
  EXPECT_EQ(empty.fraction, 1.0);
  EXPECT_TRUE(empty.warning);
  EXPECT_TRUE(primary_singer_fraction({{"a", 11.0, 12.0}}, seg).warning);
}

TEST(PrimarySinger, RangeAndRelabelInvariance) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DiarizationTurn> turns, renamed;
    const int n = static_cast<int>(rng.integer(1, 8));
    for (int i = 0; i < n; ++i) {
      const double a = rng.uniform() * 20.0;
      const std::string spk = "s" + std::to_string(rng.integer(0, 3));
      turns.push_back({spk, a, a + rng.uniform() * 5.0});
      renamed.push_back({"other_" + spk + "_x", turns.back().start_s, turns.back().end_s});
    }
    const Span seg{5.0, 15.0};
    const auto r = primary_singer_fraction(turns, seg);
    EXPECT_GE(r.fraction, 0.0);
    EXPECT_LE(r.fraction, 1.0);
    EXPECT_EQ(r.fraction, primary_singer_fraction(renamed, seg).fraction);
  }
}

TEST(Subsets, TableExamples) {
  SubsetThresholds t;
  EXPECT_EQ(assign_subset(3.9, 20.0, 1.0, t), Subset::Premium);
  EXPECT_EQ(assign_subset(2.4, 20.0, 1.0, t), Subset::Rejected);
  EXPECT_EQ(assign_subset(3.6, 17.0, 0.95, t), Subset::Standard);
  EXPECT_EQ(assign_subset(2.5, 12.0, 0.8, t), Subset::Basic);
  EXPECT_EQ(assign_subset(3.8, 30.0, 1.0, t), Subset::Premium);
  EXPECT_EQ(assign_subset(3.9, 35.1, 1.0, t), Subset::Rejected);
  Segment s;
  s.id = "x";
  s.pps = 20.0;
  s.primary_frac = 1.0;
  EXPECT_THROW(assign_subset(s, t), InvalidInput);
}

TEST(Subsets, NestingAndMonotonicity) {
  SubsetThresholds t;
  EXPECT_NO_THROW(t.validate());
  const double dn[] = {2.0, 2.5, 3.0, 3.5, 3.7, 3.8, 4.2};
  const double pp[] = {10.0, 12.0, 15.0, 16.0, 18.0, 24.0, 30.0, 31.0, 32.0, 34.0, 35.0, 36.0};
  const double pr[] = {0.7, 0.8, 0.85, 0.9, 0.99, 1.0};
  for (double d : dn)
    for (double p : pp)
      for (double f : pr) {
        const auto s = assign_subset(d, p, f, t);
        if (s >= Subset::Premium) {
          EXPECT_TRUE(t.standard.admits(d, p, f));
        }
        if (s >= Subset::Standard) {
          EXPECT_TRUE(t.basic.admits(d, p, f));
        }
        // Raising DNSMOS or primary share never demotes.
        EXPECT_GE(assign_subset(d + 0.5, p, f, t), s);
        EXPECT_GE(assign_subset(d, p, std::min(1.0, f + 0.1), t), s);
      }
  SubsetThresholds bad = t;
  bad.premium.pps_max = 33.0;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = t;
  bad.standard.primary_min = 0.8;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(Subsets, StrictJson) {
  auto t = thresholds_from_json(to_json(SubsetThresholds{}));
  EXPECT_EQ(t.premium.dnsmos_min, 3.8);
  EXPECT_THROW(thresholds_from_json(json{{"gold", json::object()}}), InvalidInput);
  auto j = to_json(SubsetThresholds{});
  j["basic"]["extra"] = 1;
  EXPECT_THROW(thresholds_from_json(j), InvalidInput);
}

TEST(Stats, EmptyAndHandSummed) {
  auto empty = dataset_stats(std::vector<SegmentRow>{});
  EXPECT_EQ(empty.segments, 0u);
  EXPECT_EQ(empty.total_s, 0.0);
  EXPECT_EQ(empty.mean_duration_s, 0.0);
  auto r = dataset_stats({{"en", 10.0, Subset::Premium}, {"en", 20.5, Subset::Basic}, {"zh", 15.0, Subset::Rejected}});
  EXPECT_EQ(r.segments, 3u);
  EXPECT_DOUBLE_EQ(r.total_s, 45.5);
  EXPECT_DOUBLE_EQ(r.language_s.at("en"), 30.5);
  EXPECT_DOUBLE_EQ(r.language_s.at("zh"), 15.0);
  EXPECT_DOUBLE_EQ(r.mean_duration_s, 45.5 / 3);
  EXPECT_EQ(r.histogram.size(), 21u);
  EXPECT_EQ(r.histogram[10], 1u);
  EXPECT_EQ(r.histogram[15], 1u);
  EXPECT_EQ(r.histogram[20], 1u);
  EXPECT_EQ(r.subset_count.at("Premium"), 1u);
  EXPECT_DOUBLE_EQ(r.subset_inclusive_s.at("Basic"), 30.5);
  EXPECT_DOUBLE_EQ(r.subset_inclusive_s.at("Standard"), 10.0);
}

TEST(Stats, SkipsUnreadableRows) {
  auto dir = std::filesystem::temp_directory_path() / "rapgen_stats_rows";
  std::filesystem::create_directories(dir);
  io::write_file(dir / "seg.jsonl",
                 "{\"language\":\"en\",\"duration_s\":4.0,\"subset\":\"Basic\"}\nnot json\n"
                 "{\"language\":\"en\",\"subset\":\"Basic\"}\n{\"language\":\"fr\",\"duration_s\":6.0,\"subset\":\"Gold\"}\n");
  auto r = dataset_stats(dir / "seg.jsonl");
  EXPECT_EQ(r.segments, 1u);
  EXPECT_EQ(r.skipped_rows, 3u);
}

TEST(Manifest, StrictParsing) {
  auto dir = std::filesystem::temp_directory_path() / "rapgen_manifest_strict";
  std::filesystem::create_directories(dir);
  io::write_file(dir / "m.jsonl", "{\"song_id\":\"a\",\"language\":\"en\",\"duration_s\":3,\"vocal_path\":\"v\","
                                  "\"accomp_path\":\"a\",\"colour\":\"red\"}\n");
  EXPECT_THROW(read_song_manifest(dir / "m.jsonl"), InvalidInput);
  io::write_file(dir / "m.jsonl", "{\"song_id\":\"a\",\"language\":\"en\",\"duration_s\":3,\"vocal_path\":\"v\","
                                  "\"accomp_path\":\"a\"}\n{\"song_id\":\"a\",\"language\":\"en\",\"duration_s\":3,"
                                  "\"vocal_path\":\"v\",\"accomp_path\":\"a\"}\n");
  EXPECT_THROW(read_song_manifest(dir / "m.jsonl"), InvalidInput);
  io::write_file(dir / "d.txt", "spk 1.0\n");
  EXPECT_THROW(read_diarization(dir / "d.txt"), InvalidInput);
}

TEST(Pipeline, ThreeSongFixture) {
  const auto root = std::filesystem::temp_directory_path() / "rapgen_pipeline_fixture";
  std::filesystem::remove_all(root);
  const auto manifest = test_support::write_three_song_fixture(root / "in");
  PipelineOptions opts;
  opts.seed = 5;
  auto res = run_pipeline(manifest, root / "out", opts);
  ASSERT_EQ(res.segments.size(), 4u);
  const std::vector<std::pair<std::string, Subset>> expect{{"alpha_000", Subset::Premium},
                                                           {"alpha_001", Subset::Standard},
                                                           {"beta_000", Subset::Rejected},
                                                           {"gamma_000", Subset::Basic}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(res.segments[i].id, expect[i].first);
    EXPECT_EQ(res.segments[i].subset, expect[i].second) << expect[i].first;
  }
  EXPECT_EQ(res.segments[1].span, (Span{13.0, 20.0}));
  EXPECT_NEAR(*res.segments[1].pps, 17.0, 1e-12);
  EXPECT_NEAR(*res.segments[1].primary_frac, 0.95, 1e-9);
  EXPECT_DOUBLE_EQ(res.stats.total_s, 32.0);
  EXPECT_DOUBLE_EQ(res.stats.language_s.at("en"), 20.0);
  EXPECT_DOUBLE_EQ(res.stats.language_s.at("zh"), 12.0);
  EXPECT_DOUBLE_EQ(res.stats.mean_duration_s, 8.0);
  EXPECT_DOUBLE_EQ(res.stats.subset_s.at("Rejected"), 5.0);

  auto wav = io::read_wav(root / "out" / "audio" / "alpha_001_accomp.wav");
  EXPECT_EQ(wav.samples.size(), 7u * 44100u);
  const auto first = io::read_file(root / "out" / "segments.jsonl");
  auto again = run_pipeline(manifest, root / "out2", opts);
  EXPECT_EQ(io::read_file(root / "out2" / "segments.jsonl"), first);
  auto from_file = dataset_stats(root / "out" / "segments.jsonl");
  EXPECT_EQ(from_file.to_json(), res.stats.to_json());
}
