#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "rapgen/cfm.hpp"
#include "rapgen/lm.hpp"

using namespace rapgen;

namespace {

CFMConfig tiny_cfm() {
  CFMConfig c;
  c.n_mels = 4;
  c.speaker_dim = 2;
  c.input_dim = 10;
  c.intermediate_dim = 8;
  c.heads = 2;
  c.ff_mult = 2;
  c.transformers_per_block = 1;
  c.time_dim = 4;
  c.semantic_vocab = 5;
  c.ref_widths = {4, 2};
  c.segment_seconds = 0.1;
  return c;
}

CfmExample toy_example(Rng& rng, const CFMConfig& c, int tokens) {
  CfmExample ex;
  ex.token_rate_hz = kSslFrameRate;
  for (int i = 0; i < tokens; ++i) ex.tokens.push_back(static_cast<int>(rng.integer(0, c.semantic_vocab - 2)));
  const auto len = resampled_length(tokens, kSslFrameRate, kMelFrameRate);
  ex.mel.frames = rng.normal_matrix<double>(len, c.n_mels);
  ex.reference.frames = rng.normal_matrix<double>(6, c.n_mels);
  return ex;
}

}  // namespace

TEST(OtPath, EndpointsAndScalarFixture) {
  Rng rng(1);
  MatD x0 = rng.normal_matrix<double>(3, 4), x1 = rng.normal_matrix<double>(3, 4);
  auto s0 = ot_path_sample(x0, x1, 0.0, 1e-4);
  EXPECT_EQ(s0.x_t, x0);
  auto s1 = ot_path_sample(x0, x1, 1.0, 0.0);
  EXPECT_EQ(s1.x_t, x1);
  EXPECT_EQ(s1.u_t, MatD(x1 - x0));

  // x_t = (1 - 0.9 * 0.5) * 2 + 0.5 * 5 = 3.6, u_t = 5 - 0.9 * 2 = 3.2
  auto s = ot_path_sample(MatD::Constant(1, 1, 2.0), MatD::Constant(1, 1, 5.0), 0.5, 0.1);
  EXPECT_NEAR(s.x_t(0, 0), 3.6, 1e-15);
  EXPECT_NEAR(s.u_t(0, 0), 3.2, 1e-15);

  EXPECT_THROW(ot_path_sample(x0, MatD::Zero(3, 3), 0.5, 1e-4), InvalidInput);
  EXPECT_THROW(ot_path_sample(x0, x1, 1.5, 1e-4), InvalidInput);
  EXPECT_EQ(CFMConfig{}.sigma_min, 1e-4);
}

TEST(CfmLoss, OracleFieldAndConstantOffset) {
  Rng data(2);
  std::vector<MatD> x1s{data.normal_matrix<double>(5, 3), data.normal_matrix<double>(7, 3)};
  const double sigma = 1e-4;
  // Recover x0 from x_t to produce the exact conditional field.
  auto oracle = [&](double offset) {
    return [&, offset](const ad::Var<double>& x_t, double t, std::size_t i) {
      MatD x0 = (x_t.value() - t * x1s[i]) / (1.0 - (1.0 - sigma) * t);
      MatD u = x1s[i] - (1.0 - sigma) * x0;
      return ad::constant<double>(Mat<double>(u.array() + offset));
    };
  };
  Rng a(3), b(3);
  const double zero = cfm_loss<double>(x1s, oracle(0.0), sigma, a).item();
  EXPECT_GE(zero, 0.0);
  EXPECT_LT(zero, 1e-20);
  const double shifted = cfm_loss<double>(x1s, oracle(0.3), sigma, b).item();
  EXPECT_NEAR(shifted, 0.09, 1e-12);
}

TEST(Euler, ConstantFieldIsExact) {
  Rng rng(4);
  MatD x0 = rng.normal_matrix<double>(6, 5);
  MatD c = rng.normal_matrix<double>(6, 5);
  for (int steps : {1, 2, 3, 7, 20, 33, 100}) {
    MatD out = euler_integrate([&](const MatD&, double) { return c; }, x0, steps);
    EXPECT_EQ(out, MatD(x0 + c)) << steps;
  }
  EXPECT_THROW(euler_integrate([&](const MatD& x, double) { return x; }, x0, 0), InvalidInput);
  EXPECT_EQ(CFMConfig{}.sample_steps, 20);
}

TEST(Euler, LinearFieldClosedFormAndFirstOrder) {
  Rng rng(5);
  MatD x0 = rng.normal_matrix<double>(3, 3);
  auto linear = [](const MatD& x, double) { return x; };
  for (int n : {1, 5, 20}) {
    MatD out = euler_integrate(linear, x0, n);
    MatD expect = x0 * std::pow(1.0 + 1.0 / n, n);
    EXPECT_LT((out - expect).cwiseAbs().maxCoeff(), 1e-12) << n;
  }
  std::vector<double> err;
  for (int n : {20, 40, 80, 160}) err.push_back((euler_integrate(linear, x0, n) - std::exp(1.0) * x0).norm());
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double ratio = err[i - 1] / err[i];
    EXPECT_GE(ratio, 1.8);
    EXPECT_LE(ratio, 2.2);
  }
}

TEST(UNet, ZeroFinalLayerGivesZeroField) {
  auto c = tiny_cfm();
  nn::ParamStore<double> store;
  Rng rng(6);
  UNetField<double> net(store, "u", c, rng);
  net.zero_output_layer();
  auto out = net(ad::constant<double>(Mat<double>::Zero(9, 4)), 0.3, ad::constant<double>(Mat<double>::Zero(9, 4)),
                 ad::constant<double>(Mat<double>::Zero(1, 2)));
  EXPECT_TRUE(out.value().isZero(0));
}

TEST(UNet, ShapeLawAcrossConfigs) {
  Rng rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    auto c = tiny_cfm();
    c.down_blocks = c.up_blocks = 1 + trial % 3;
    c.mid_blocks = trial % 2;
    c.transformers_per_block = 1 + trial % 2;
    c.intermediate_dim = (trial % 2) ? 8 : 6;
    nn::ParamStore<double> store;
    UNetField<double> net(store, "u", c, rng);
    for (int len : {40, 37, 1}) {
      auto out = net(ad::constant<double>(rng.normal_matrix<double>(len, 4)), rng.uniform(),
                     ad::constant<double>(rng.normal_matrix<double>(len, 4)),
                     ad::constant<double>(rng.normal_matrix<double>(1, 2)));
      EXPECT_EQ(out.rows(), len);
      EXPECT_EQ(out.cols(), 4);
      EXPECT_TRUE(out.value().allFinite());
    }
  }
}

TEST(UNet, RejectsWrongChannelAssembly) {
  auto c = tiny_cfm();
  nn::ParamStore<double> store;
  Rng rng(8);
  UNetField<double> net(store, "u", c, rng);
  EXPECT_THROW(net(ad::constant<double>(Mat<double>::Zero(8, 4)), 0.5, ad::constant<double>(Mat<double>::Zero(8, 4)),
                   ad::constant<double>(Mat<double>::Zero(1, 3))),
               InvalidInput);
  auto bad = c;
  bad.input_dim = 11;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(UNet, FullScaleParameterCount) {
  CFMConfig full;
  EXPECT_EQ(full.input_dim, 320);
  EXPECT_EQ(full.intermediate_dim, 768);
  nn::ParamStore<float> store;
  Rng rng(9);
  UNetField<float> net(store, "u", full, rng);
  const double millions = store.count() / 1e6;
  EXPECT_GT(millions, 110.0);
  EXPECT_LT(millions, 140.0);
}

TEST(CfmLoss, GradientMatchesFiniteDifferences) {
  auto c = tiny_cfm();
  SemanticToMel<double> model(c, 10);
  Rng data(11);
  std::vector<CfmExample> batch{toy_example(data, c, 5), toy_example(data, c, 4)};
  model.norm() = {0.1, 1.3};
  std::vector<ad::Var<double>> params;
  for (auto& [name, p] : model.params().items()) params.push_back(p);
  auto r = test_support::gradcheck(
      [&] {
        Rng rng(12);
        return model.loss(batch, rng);
      },
      params, 6);
  EXPECT_GT(r.checked, 200);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(CfmSampler, DeterministicAndShaped) {
  auto c = tiny_cfm();
  SemanticToMel<double> model(c, 13);
  SpeakerEmbedding spk{VecD::Constant(2, 0.5)};
  std::vector<int> tokens{0, 1, 2, 3, 1, 0};
  auto a = model.sample(tokens, kSslFrameRate, spk, 20, 14);
  auto b = model.sample(tokens, kSslFrameRate, spk, 20, 14);
  auto other = model.sample(tokens, kSslFrameRate, spk, 20, 15);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_NE(a.frames, other.frames);
  EXPECT_EQ(a.length(), resampled_length(6, kSslFrameRate, kMelFrameRate));
  EXPECT_EQ(a.n_mels(), 4);
  EXPECT_THROW(model.sample(tokens, kSslFrameRate, SpeakerEmbedding{VecD::Zero(3)}, 20, 1), InvalidInput);
}

TEST(CfmTraining, FixedSegmentLength) {
  CFMConfig full;
  EXPECT_EQ(full.segment_seconds, 10.0);
  auto c = tiny_cfm();
  SemanticToMel<double> model(c, 16);
  Rng rng(17);
  auto longer = toy_example(rng, c, 20);
  auto shorter = toy_example(rng, c, 2);
  const auto target = std::llround(c.segment_seconds * kMelFrameRate);
  EXPECT_EQ(model.fit_segment(longer).mel.length(), target);
  auto padded = model.fit_segment(shorter);
  EXPECT_EQ(padded.mel.length(), target);
  EXPECT_EQ(padded.mel.frames.topRows(shorter.mel.length()), shorter.mel.frames);
  EXPECT_EQ(static_cast<Eigen::Index>(padded.tokens.size()), resampled_length(target, kMelFrameRate, kSslFrameRate));
}

TEST(CfmTraining, LossDecreasesOnTwoGaussianToy) {
  auto c = tiny_cfm();
  std::vector<double> improvement;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SemanticToMel<double> model(c, 100 + seed);
    CfmTrainer<double> trainer(model, nn::AdamOptions{3e-3}, 1, 200 + seed);
    Rng data(300 + seed);
    // Token 0 frames sit at -2, token 1 frames at +2 (two Gaussian modes).
    auto make = [&] {
      CfmExample ex;
      ex.tokens.assign(5, static_cast<int>(data.integer(0, 1)));
      const double centre = ex.tokens[0] == 0 ? -2.0 : 2.0;
      ex.mel.frames = (data.normal_matrix<double>(9, c.n_mels, 0.3).array() + centre).matrix();
      ex.reference.frames = data.normal_matrix<double>(4, c.n_mels);
      return ex;
    };
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step) losses.push_back(trainer.train_step({make(), make()}));
    const double head = std::accumulate(losses.begin(), losses.begin() + 20, 0.0) / 20;
    const double tail = std::accumulate(losses.end() - 20, losses.end(), 0.0) / 20;
    improvement.push_back(head - tail);
  }
  std::sort(improvement.begin(), improvement.end());
  EXPECT_GT(improvement[2], 0.0);
}

TEST(RefEnc, SingleFrameAndPermutationInvariance) {
  nn::ParamStore<double> store;
  Rng rng(18);
  ReferenceEncoder<double> enc(store, "r", RefEncoderConfig{}, rng);
  auto frame = ad::constant<double>(rng.normal_matrix<double>(1, kMelBins));
  const auto& attn = enc.attention();
  MatD expect = attn.o(attn.v(enc.feed_forward(frame))).value();
  EXPECT_LT((enc.forward(frame).value() - expect).cwiseAbs().maxCoeff(), 1e-12);

  MelSpectrogram mel;
  mel.frames = rng.normal_matrix<double>(258, kMelBins);  // 3 s at 86.1 fps
  auto base = enc.encode(mel);
  EXPECT_EQ(base.values.size(), kSpeakerDim);
  EXPECT_TRUE(base.values.allFinite());
  std::vector<int> perm(258);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    MelSpectrogram p;
    p.frames.resize(258, kMelBins);
    for (int i = 0; i < 258; ++i) p.frames.row(i) = mel.frames.row(perm[i]);
    EXPECT_LT((enc.encode(p).values - base.values).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(enc.encode(MelSpectrogram{}), InvalidInput);
}

TEST(RefEnc, FloatPermutationTolerance) {
  nn::ParamStore<float> store;
  Rng rng(19);
  ReferenceEncoder<float> enc(store, "r", RefEncoderConfig{}, rng);
  MelSpectrogram mel;
  mel.frames = rng.normal_matrix<double>(50, kMelBins);
  auto base = enc.encode(mel);
  MelSpectrogram rev;
  rev.frames = mel.frames.colwise().reverse();
  EXPECT_LT((enc.encode(rev).values - base.values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(RefEnc, LmAndCfmInstancesNeverShareParameters) {
  LMConfig lc;
  lc.layers = 1;
  lc.hidden = 16;
  lc.intermediate = 16;
  lc.heads = 2;
  lc.semantic_vocab = 6;
  lc.accomp_dim = 3;
  lc.max_len = 32;
  CFMConfig cc;
  cc.intermediate_dim = 8;
  cc.heads = 2;
  cc.time_dim = 4;
  cc.semantic_vocab = 6;
  cc.transformers_per_block = 1;
  SemanticLM<double> lm(lc, 20);
  SemanticToMel<double> cfm(cc, 20);
  std::vector<std::pair<std::string, ad::Var<double>>> lm_ref, cfm_ref;
  for (const auto& item : lm.params().items())
    if (item.first.rfind("lm.refenc", 0) == 0) lm_ref.push_back(item);
  for (const auto& item : cfm.params().items())
    if (item.first.rfind("cfm.refenc", 0) == 0) cfm_ref.push_back(item);
  ASSERT_EQ(lm_ref.size(), cfm_ref.size());
  ASSERT_FALSE(lm_ref.empty());
  std::vector<MatD> cfm_before;
  for (std::size_t i = 0; i < lm_ref.size(); ++i) {
    EXPECT_NE(lm_ref[i].second.node(), cfm_ref[i].second.node());
    cfm_before.push_back(cfm_ref[i].second.value());
  }
  // Training the LM leaves the CFM-side encoder untouched.
  Rng rng(21);
  LmExample ex;
  ex.lyrics = {{1, 2, 1}, lc.lyrics_vocab};
  ex.semantic = {0, 1, 2, 3};
  ex.accomp.frames = rng.normal_matrix<double>(4, 3);
  ex.reference.frames = rng.normal_matrix<double>(5, kMelBins);
  LmTrainOptions opts;
  opts.grad_accum = 1;
  LmTrainer<double> trainer(lm, opts);
  const MatD lm_before = lm_ref.front().second.value();
  for (int s = 0; s < 3; ++s) trainer.train_step({ex});
  EXPECT_NE(lm_ref.front().second.value(), lm_before);
  for (std::size_t i = 0; i < cfm_ref.size(); ++i) EXPECT_EQ(cfm_ref[i].second.value(), cfm_before[i]);
}

TEST(PointFlow, LearnsShiftedGaussian) {
  PointFlowField<double> field(2, 32, 2, 8, 22);
  nn::Adam<double> adam(field.params(), nn::AdamOptions{1e-2});
  Rng rng(23);
  for (int step = 0; step < 300; ++step) {
    MatD x1 = (rng.normal_matrix<double>(64, 2, 0.2).array() + 3.0).matrix();
    ad::backward(field.loss(x1, 1e-4, rng));
    adam.step();
  }
  MatD samples = field.sample(500, 20, 24);
  const RowVec<double> mean = samples.colwise().mean();
  EXPECT_NEAR(mean(0), 3.0, 0.3);
  EXPECT_NEAR(mean(1), 3.0, 0.3);
}
