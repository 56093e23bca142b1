#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "rapgen/lm.hpp"
#include "rapgen/lyrics.hpp"

using namespace rapgen;

namespace {

LMConfig tiny_config(int k = 2) {
  LMConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.intermediate = 32;
  c.heads = 2;
  c.speaker_dim = 8;
  c.shift_k = k;
  c.semantic_vocab = 9;
  c.lyrics_vocab = 6;
  c.accomp_dim = 5;
  c.max_len = 64;
  c.ref_mels = 6;
  c.ref_widths = {8, 8};
  return c;
}

FeatureMatrix random_accomp(Rng& rng, Eigen::Index n, Eigen::Index d) {
  FeatureMatrix f;
  f.frames = rng.normal_matrix<double>(n, d);
  return f;
}

LmExample random_example(Rng& rng, const LMConfig& c, int n, int lyr = 4) {
  LmExample ex;
  ex.lyrics.vocab = c.lyrics_vocab;
  for (int i = 0; i < lyr; ++i) ex.lyrics.ids.push_back(static_cast<int>(rng.integer(0, c.lyrics_vocab - 1)));
  for (int i = 0; i < n; ++i) ex.semantic.push_back(static_cast<int>(rng.integer(0, c.semantic_vocab - 2)));
  ex.accomp = random_accomp(rng, n, c.accomp_dim);
  ex.reference.frames = rng.normal_matrix<double>(5, c.ref_mels);
  return ex;
}

// Semantic-region logits [n x V] for step inputs [EOS, s_0 .. s_{n-2}] with
// raw accompaniment `accomp` (shifted internally).
MatD semantic_logits(const SemanticLM<double>& m, const LyricsTokens& lyr, const std::vector<int>& sem,
                     const FeatureMatrix& accomp, const Mat<double>& spk) {
  std::vector<int> inputs{m.config().eos_id()};
  inputs.insert(inputs.end(), sem.begin(), sem.end());
  const auto n = static_cast<Eigen::Index>(inputs.size());
  auto shifted = shift_accompaniment(accomp, m.config().shift_k, n);
  auto seq = m.build_mixed_sequence(lyr, inputs, shifted.frames, ad::constant<double>(spk));
  return m.forward(seq).value().bottomRows(n);
}

}  // namespace

TEST(Shift, IdentityAndEnumeratedMap) {
  FeatureMatrix a;
  a.frames = MatD(5, 2);
  for (int i = 0; i < 5; ++i) a.frames.row(i) << i + 1.0, -(i + 1.0);
  auto s0 = shift_accompaniment(a, 0, 7);
  EXPECT_EQ(s0.frames.topRows(5), a.frames);
  EXPECT_TRUE(s0.frames.bottomRows(2).isZero(0));
  EXPECT_EQ(shift_accompaniment(a, 0, 3).frames, a.frames.topRows(3));

  auto s2 = shift_accompaniment(a, 2, 5);
  for (int t = 0; t < 5; ++t) {
    if (t + 2 < 5)
      EXPECT_EQ(s2.frames.row(t), a.frames.row(t + 2));
    else
      EXPECT_TRUE(s2.frames.row(t).isZero(0));
  }
  EXPECT_THROW(shift_accompaniment(a, -1, 5), InvalidInput);
  EXPECT_EQ(LMConfig{}.shift_k, 150);
}

TEST(Mask, ForcedFullBranch) {
  Rng rng(1);
  auto a = random_accomp(rng, 10, 3);
  auto [m, d] = apply_accomp_mask(a, 42, 1.0);
  EXPECT_TRUE(d.full);
  EXPECT_TRUE(m.frames.isZero(0));
}

TEST(Mask, SeededSuffixFixture) {
  Rng rng(2);
  auto a = random_accomp(rng, 10, 3);
  a.frames.array() += 10.0;  // no accidental zeros
  // Seed 6 draws m = 3 for T = 10 (recorded trace).
  auto [m, d] = apply_accomp_mask(a, 6, 0.0);
  EXPECT_FALSE(d.full);
  EXPECT_EQ(d.suffix_len, 3);
  for (int t = 0; t < 10; ++t) {
    if (t >= 7)
      EXPECT_TRUE(m.frames.row(t).isZero(0)) << t;
    else
      EXPECT_EQ(m.frames.row(t), a.frames.row(t)) << t;
  }
  EXPECT_EQ(LMConfig{}.mask_full_prob, 0.5);
}

TEST(Mask, SuffixStaysInLatterHalfAndIsDeterministic) {
  Rng rng(3);
  for (Eigen::Index n : {0, 1, 2, 7, 10, 31}) {
    auto a = random_accomp(rng, n, 2);
    a.frames.array() += 5.0;
    std::vector<int> seen(static_cast<std::size_t>(n / 2 + 1), 0);
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
      auto [m, d] = apply_accomp_mask(a, seed, 0.3);
      auto again = apply_accomp_mask(a, seed, 0.3);
      EXPECT_EQ(again.second, d);
      EXPECT_EQ(again.first.frames, m.frames);
      if (d.full) {
        EXPECT_TRUE(m.frames.isZero(0));
        continue;
      }
      ASSERT_GE(d.suffix_len, 0);
      ASSERT_LE(d.suffix_len, n / 2);
      ++seen[static_cast<std::size_t>(d.suffix_len)];
      for (Eigen::Index t = 0; t < n; ++t)
        EXPECT_EQ(m.frames.row(t).isZero(0), t >= n - d.suffix_len);
    }
    for (int c : seen) EXPECT_GT(c, 0) << "suffix lengths should cover [0, T/2] for T=" << n;
  }
}

TEST(MixedSequence, LayoutAndAdditiveIdentity) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 5);
  LyricsTokens lyr{{1, 2, 3, 1}, c.lyrics_vocab};
  std::vector<int> sem{0, 3, 4, 7, 2, 8};
  auto seq = m.build_mixed_sequence(lyr, sem, MatD::Zero(6, c.accomp_dim),
                                    ad::constant<double>(Mat<double>::Zero(1, c.speaker_dim)));
  ASSERT_EQ(seq.length(), 11);
  EXPECT_EQ(seq.embeddings.rows(), 11);
  EXPECT_EQ(seq.tags[0], Region::Speaker);
  for (int i = 1; i <= 4; ++i) EXPECT_EQ(seq.tags[i], Region::Lyrics);
  for (int i = 5; i < 11; ++i) EXPECT_EQ(seq.tags[i], Region::Semantic);
  EXPECT_EQ(seq.semantic_offset(), 5);

  const auto& e = seq.embeddings.value();
  EXPECT_TRUE(e.row(0).isZero(0));
  const auto& sem_table = m.params().get("lm.semantic_emb.table").value();
  const auto& lyr_table = m.params().get("lm.lyrics_emb.table").value();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(e.row(1 + i), lyr_table.row(lyr.ids[i]));
  for (int i = 0; i < 6; ++i) EXPECT_EQ(e.row(5 + i), sem_table.row(sem[i]));

  EXPECT_THROW(m.build_mixed_sequence(lyr, sem, MatD::Zero(5, c.accomp_dim),
                                      ad::constant<double>(Mat<double>::Zero(1, c.speaker_dim))),
               InvalidInput);
  LMConfig full;
  EXPECT_EQ(full.hidden, 1024);
  EXPECT_EQ(full.heads, 16);
}

TEST(LmForward, CausalAtEveryPosition) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 6);
  Rng rng(7);
  MixedSequence<double> seq;
  seq.embeddings = ad::constant<double>(rng.normal_matrix<double>(12, c.hidden));
  seq.tags.assign(12, Region::Semantic);
  seq.tags[0] = Region::Speaker;
  const MatD base = m.forward(seq).value();
  for (int q = 0; q < 12; ++q) {
    MixedSequence<double> p = seq;
    Mat<double> e = seq.embeddings.value();
    e.row(q).array() += 3.0;
    p.embeddings = ad::constant<double>(e);
    const MatD out = m.forward(p).value();
    EXPECT_EQ(out.topRows(q), base.topRows(q)) << "perturbing " << q;
    EXPECT_NE(out.row(q), base.row(q));
  }
  seq.embeddings = ad::constant<double>(rng.normal_matrix<double>(65, c.hidden));
  seq.tags.assign(65, Region::Semantic);
  EXPECT_THROW(m.forward(seq), InvalidInput);
}

TEST(LmForward, ShiftWindowIsExact) {
  auto c = tiny_config(3);
  SemanticLM<double> m(c, 8);
  Rng rng(9);
  const int n = 10;
  auto ex = random_example(rng, c, n);
  Mat<double> spk = rng.normal_matrix<double>(1, c.speaker_dim);
  std::vector<int> prefix(ex.semantic.begin(), ex.semantic.end() - 1);
  const MatD base = semantic_logits(m, ex.lyrics, prefix, ex.accomp, spk);
  ASSERT_EQ(base.rows(), n);
  for (int f = 0; f < n; ++f) {
    auto a = ex.accomp;
    a.frames.row(f).array() += 2.5;
    const MatD out = semantic_logits(m, ex.lyrics, prefix, a, spk);
    for (int t = 0; t < n; ++t) {
      if (f > t + c.shift_k) {
        EXPECT_EQ(out.row(t), base.row(t)) << "frame " << f << " step " << t;
      } else if (f == t + c.shift_k) {
        EXPECT_NE(out.row(t), base.row(t)) << "frame " << f << " should reach step " << t;
      }
    }
  }
}

TEST(LmForward, FullMaskEquivalence) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 10);
  Rng rng(11);
  auto ex = random_example(rng, c, 8);
  auto other = ex;
  other.accomp = random_accomp(rng, 8, c.accomp_dim);
  const MaskDescriptor full{true, 0};
  EXPECT_EQ(m.example_loss_sum(ex, full, nullptr).item(), m.example_loss_sum(other, full, nullptr).item());
  EXPECT_NE(m.example_loss_sum(ex, {false, 0}, nullptr).item(),
            m.example_loss_sum(other, {false, 0}, nullptr).item());
}

TEST(LmLoss, ClosedFormsThroughModel) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 12);
  Rng rng(13);
  auto ex = random_example(rng, c, 6);
  m.params().get("lm.head.weight").mutable_value().setZero();
  int count = 0;
  const double sum = m.example_loss_sum(ex, {false, 0}, &count).item();
  EXPECT_EQ(count, 7);  // six tokens plus EOS
  EXPECT_NEAR(sum / count, std::log(double(c.semantic_vocab)), 1e-12);
  LmExample empty = ex;
  empty.semantic.clear();
  empty.accomp.frames.resize(0, c.accomp_dim);
  EXPECT_THROW(m.example_loss_sum(empty, {false, 0}, nullptr), InvalidInput);
}

TEST(LmLoss, GradientMatchesFiniteDifferences) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 14);
  Rng rng(15);
  std::vector<LmExample> batch{random_example(rng, c, 5), random_example(rng, c, 4, 3)};
  std::vector<MaskDescriptor> masks{{false, 2}, {false, 0}};
  std::vector<ad::Var<double>> params;
  for (auto& [name, p] : m.params().items()) params.push_back(p);
  auto r = test_support::gradcheck([&] { return m.batch_loss(batch, masks); }, params, 12);
  EXPECT_GT(r.checked, 200);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LmTraining, LossDecreasesAndAccumulates) {
  auto c = tiny_config(1);
  SemanticLM<double> m(c, 16);
  LmTrainOptions opts;
  opts.adam.lr = 3e-3;
  opts.grad_accum = 2;
  opts.seed = 17;
  LmTrainer<double> trainer(m, opts);
  Rng rng(18);
  std::vector<LmExample> data;
  for (int i = 0; i < 4; ++i) {
    auto ex = random_example(rng, c, 8);
    for (int t = 0; t < 8; ++t) ex.semantic[t] = (t * 3 + i) % 4;
    data.push_back(ex);
  }
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 60; ++s) {
    const double l = trainer.train_step({data[s % 4]});
    EXPECT_GE(l, 0.0);
    if (s == 0) first = l;
    last = l;
  }
  EXPECT_EQ(trainer.optimizer_steps(), 30);
  EXPECT_LT(last, 0.5 * first);
}

TEST(LmGenerate, DeterministicGreedyAndTruncated) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 19);
  Rng rng(20);
  auto ex = random_example(rng, c, 12);
  SpeakerEmbedding spk{rng.normal_matrix<double>(c.speaker_dim, 1).col(0)};
  SamplingOptions so;
  so.seed = 21;
  so.max_steps = 12;
  auto a = generate_semantic(m, ex.lyrics, ex.accomp, spk, so);
  auto b = generate_semantic(m, ex.lyrics, ex.accomp, spk, so);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.truncated, b.truncated);
  EXPECT_NO_THROW(a.validate());

  SamplingOptions greedy = so;
  greedy.temperature = 0.0;
  SamplingOptions cold = so;
  cold.temperature = 1e-6;
  cold.top_k = 0;
  EXPECT_EQ(generate_semantic(m, ex.lyrics, ex.accomp, spk, greedy).ids,
            generate_semantic(m, ex.lyrics, ex.accomp, spk, cold).ids);

  // EOS ties with token 0, and greedy ties go to the lower id, so EOS is
  // never emitted and the budget is exhausted.
  auto& head = m.params().get("lm.head.weight").mutable_value();
  head.col(c.eos_id()) = head.col(0);
  auto t = generate_semantic(m, ex.lyrics, ex.accomp, spk, greedy);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.ids.size(), 12u);
}

TEST(LmGenerate, MaskedAccompanimentIsIgnored) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 22);
  Rng rng(23);
  auto ex = random_example(rng, c, 10);
  auto other = random_accomp(rng, 10, c.accomp_dim);
  SpeakerEmbedding spk{rng.normal_matrix<double>(c.speaker_dim, 1).col(0)};
  SamplingOptions so;
  so.seed = 24;
  so.max_steps = 10;
  const MaskDescriptor full{true, 0};
  EXPECT_EQ(generate_semantic(m, ex.lyrics, mask_accompaniment(ex.accomp, full), spk, so).ids,
            generate_semantic(m, ex.lyrics, mask_accompaniment(other, full), spk, so).ids);
}

TEST(LmGenerate, GoldenSequence) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 25);
  Rng rng(26);
  auto ex = random_example(rng, c, 16);
  SamplingOptions so;
  so.seed = 32;
  so.max_steps = 16;
  auto seq = generate_semantic(m, ex.lyrics, ex.accomp, ex.reference, so);
  const std::vector<int> golden{5, 6, 1, 3, 4, 2, 6, 4, 0, 7, 5, 5, 0};
  EXPECT_EQ(seq.ids, golden);
  EXPECT_FALSE(seq.truncated);
}

TEST(LmCheckpoint, RoundTripGivesIdenticalLogits) {
  auto c = tiny_config();
  SemanticLM<double> a(c, 28), b(c, 29);
  Rng rng(30);
  auto ex = random_example(rng, c, 6);
  const auto bytes = nn::encode_checkpoint(a.params(), "{}");
  nn::decode_checkpoint_into(bytes, b.params());
  EXPECT_EQ(a.example_loss_sum(ex, {false, 1}, nullptr).item(), b.example_loss_sum(ex, {false, 1}, nullptr).item());
}

TEST(LmConfig, ParameterCount) {
  auto c = tiny_config();
  SemanticLM<double> m(c, 31);
  EXPECT_EQ(c.parameter_count(), m.params().count());
  LMConfig full;
  EXPECT_EQ(full.layers, 6);
  EXPECT_EQ(full.intermediate, 4096);
  const double millions = full.parameter_count() / 1e6;
  EXPECT_GT(millions, 90.0);
  EXPECT_LT(millions, 130.0);
  LMConfig bad = full;
  bad.heads = 7;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = full;
  bad.shift_k = -1;
  EXPECT_THROW(bad.validate(), InvalidInput);
}
