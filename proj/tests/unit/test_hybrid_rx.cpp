#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "hdrx/baseline_rx.hpp"
#include "hdrx/hybrid_rx.hpp"
#include "hdrx/pipeline.hpp"

using namespace hdrx;
using namespace hdrx::model;

namespace {

pipeline::TtiRecord sample_record(dsp::Modulation m = dsp::Modulation::Qam16, std::uint64_t index = 0,
                                  double snr_lo = 0.0) {
  auto spec = pipeline::DatasetSpec::mini_train(m);
  spec.num_ttis = 100;
  spec.snr_lo_db = snr_lo;
  return pipeline::generate_tti(spec, index);
}

HybridConfig small_config() {
  HybridConfig c = HybridConfig::desk(dsp::LinkConfig::mini());
  c.pre_fft_filters = {4, 4};
  c.post_fft_filters = {6, 4};
  return c;
}

}  // namespace

TEST(Shapes, PreInputMiniAndPaper) {
  const auto mini = dsp::LinkConfig::mini();
  const auto paper = dsp::LinkConfig::paper();
  EXPECT_EQ(assemble_pre_input(dsp::TimeFrame(mini)).shape(), (std::vector<int>{70, 14, 2}));
  EXPECT_EQ(assemble_pre_input(dsp::TimeFrame(paper)).shape(), (std::vector<int>{552, 14, 2}));
}

TEST(Shapes, RealFrameHasZeroImagChannel) {
  const auto cfg = dsp::LinkConfig::mini();
  dsp::TimeFrame f(cfg);
  for (int r = 0; r < f.rows(); ++r)
    for (int l = 0; l < f.symbols(); ++l)
      if (r < f.valid_length(l)) f(r, l) = 0.1 * (r - l);
  const auto z = assemble_pre_input(f);
  for (int r = 0; r < 70; ++r)
    for (int l = 0; l < 14; ++l) {
      EXPECT_EQ(z.at(r, l, 1), 0.0);
      EXPECT_EQ(z.at(r, l, 0), f(r, l).real());
    }
}

TEST(Shapes, PostInputChannelsAndPilotSupport) {
  for (const auto& cfg : {dsp::LinkConfig::mini(), dsp::LinkConfig::paper()}) {
    const auto lay = dsp::DmrsLayout::make(cfg, 1);
    dsp::ResourceGrid ls(cfg.num_data_subcarriers, 14, dsp::GridKind::ChannelEstimate);
    for (int sc = 0; sc < cfg.num_data_subcarriers; sc += 2) ls(sc, 2) = cdouble(1.0 + sc, -0.5);
    nn::Tape tape;
    const auto freq = tape.input(nn::Tensor({cfg.num_data_subcarriers, 14, 2}, 0.3));
    const auto& z = tape.value(assemble_post_input(tape, freq, ls));
    EXPECT_EQ(z.shape(), (std::vector<int>{cfg.num_data_subcarriers, 14, 4}));
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc)
      for (int l = 0; l < 14; ++l) {
        EXPECT_EQ(z.at(sc, l, 0), 0.3);
        const bool pilot = lay.is_pilot(sc, l);
        EXPECT_EQ(z.at(sc, l, 2) != 0.0, pilot);
        EXPECT_EQ(z.at(sc, l, 3) != 0.0, pilot);
      }
  }
}

TEST(Shapes, PostInputMismatchThrows) {
  nn::Tape tape;
  const auto freq = tape.input(nn::Tensor({36, 14, 2}));
  EXPECT_THROW(assemble_post_input(tape, freq, dsp::ResourceGrid(20, 14, dsp::GridKind::ChannelEstimate)), ShapeError);
}

TEST(PreFft, ShapePreservedBothProfiles) {
  for (const auto& cfg : {dsp::LinkConfig::mini(), dsp::LinkConfig::paper()}) {
    HybridConfig c = HybridConfig::desk(cfg);
    c.pre_fft_filters = {4};
    c.post_fft_filters = {4};
    const HybridModel m(c);
    nn::Tape tape(false);
    const auto z = tape.input(assemble_pre_input(dsp::TimeFrame(cfg)));
    const auto out = m.pre_fft_forward(tape, z);
    const std::vector<int> in_shape = tape.value(z).shape();
    EXPECT_EQ(tape.value(out).shape(), in_shape);
  }
}

TEST(PreFft, ZeroHeadOutputsZero) {
  HybridModel m(small_config());
  m.pre_fft_head().zero();
  const auto rec = sample_record();
  nn::Tape tape(false);
  const auto& out = tape.value(m.pre_fft_forward(tape, tape.input(assemble_pre_input(rec.rx_frame))));
  for (auto v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Hybrid, OutputShapeDesk) {
  const HybridModel m(HybridConfig::desk(dsp::LinkConfig::mini()));
  const auto rec = sample_record();
  const auto llr = hybrid_forward(rec.rx_frame, rec.raw_ls, m);
  EXPECT_EQ(llr.subcarriers, 36);
  EXPECT_EQ(llr.symbols, 14);
  EXPECT_EQ(llr.depth, 8);
  for (auto v : llr.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Hybrid, SkipPathConsistencyIsExact) {
  HybridModel m(HybridConfig::desk(dsp::LinkConfig::mini()));
  m.pre_fft_head().zero();
  const auto rec = sample_record();
  const auto a = hybrid_forward(rec.rx_frame, rec.raw_ls, m);
  const auto b = deeprx_forward(rec.rx_frame, rec.raw_ls, m);
  ASSERT_EQ(a.values.size(), b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
}

TEST(Hybrid, DeepRxSharesPostFftParameterCount) {
  const auto link = dsp::LinkConfig::mini();
  const HybridModel h(HybridConfig::desk(link));
  const HybridModel d(HybridConfig::deeprx(link));
  EXPECT_EQ(h.post_fft_parameter_count(), d.post_fft_parameter_count());
  EXPECT_EQ(d.parameter_count(), d.post_fft_parameter_count());
  EXPECT_GT(h.parameter_count(), d.parameter_count());
  EXPECT_EQ(h.parameter_count(), 198274u);
  EXPECT_EQ(h.post_fft_parameter_count(), 179384u);
}

TEST(Hybrid, DeepRxMatchesOwnForward) {
  const HybridModel d(HybridConfig::deeprx(dsp::LinkConfig::mini()));
  const auto rec = sample_record();
  const auto a = d.infer(rec.rx_frame, rec.raw_ls);
  const auto b = deeprx_forward(rec.rx_frame, rec.raw_ls, d);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
}

TEST(Hybrid, EndToEndGradientCheck) {
  HybridModel m(small_config());
  const auto rec = sample_record(dsp::Modulation::Qam16, 3, 10.0);
  nn::GradCheckOptions opt;
  opt.coords_per_param = 20;
  const auto report = grad_check_model(m, rec.rx_frame, rec.raw_ls, rec.label_bits.values, rec.bit_mask.values, opt);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.entries.size(), m.parameters().size());
}

TEST(Hybrid, GradientReachesEveryPreFftKernel) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    HybridConfig c = HybridConfig::desk(dsp::LinkConfig::mini());
    c.init_seed = seed;
    c.zero_init_pre_head = false;
    HybridModel m(c);
    const auto rec = sample_record(dsp::Modulation::Qam16, seed);
    nn::Tape tape;
    const auto logits = m.forward(tape, rec.rx_frame, rec.raw_ls);
    tape.backward(nn::bce_with_logits(tape, logits, rec.label_bits.values, rec.bit_mask.values));
    for (auto& block : m.pre_fft_blocks()) {
      for (const auto* p : std::as_const(block).parameters()) {
        if (p->name.find("weight") == std::string::npos) continue;
        const auto* g = tape.find_param_grad(*p);
        ASSERT_NE(g, nullptr) << p->name;
        double norm = 0.0;
        for (auto v : g->values()) norm += v * v;
        EXPECT_GT(norm, 0.0) << p->name << " seed " << seed;
      }
    }
    const auto* gh = tape.find_param_grad(m.pre_fft_head().weight);
    ASSERT_NE(gh, nullptr);
  }
}

TEST(Hybrid, ZeroInitHeadStartsAsDeepRxAndLearnsHead) {
  const auto link = dsp::LinkConfig::mini();
  HybridModel h(HybridConfig::desk(link));
  const HybridModel d(HybridConfig::deeprx(link));
  const auto rec = sample_record(dsp::Modulation::Qam16, 2, 10.0);
  EXPECT_EQ(h.infer(rec.rx_frame, rec.raw_ls).values, d.infer(rec.rx_frame, rec.raw_ls).values);
  nn::Tape tape;
  tape.backward(nn::bce_with_logits(tape, h.forward(tape, rec.rx_frame, rec.raw_ls), rec.label_bits.values,
                                    rec.bit_mask.values));
  const auto* g = tape.find_param_grad(h.pre_fft_head().weight);
  ASSERT_NE(g, nullptr);
  double norm = 0.0;
  for (auto v : g->values()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Hybrid, CheckpointRoundTrip) {
  const HybridModel m(small_config());
  const auto path = std::filesystem::temp_directory_path() / "hdrx_hybrid_rt.ckpt";
  m.save(path.string());
  const auto back = HybridModel::load(path.string());
  EXPECT_EQ(back.config().to_json(), m.config().to_json());
  const auto rec = sample_record();
  const auto a = m.infer(rec.rx_frame, rec.raw_ls);
  const auto b = back.infer(rec.rx_frame, rec.raw_ls);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
  std::filesystem::remove(path);
}

TEST(Config, JsonRoundTripAndValidation) {
  const auto c = HybridConfig::paper(dsp::LinkConfig::paper(dsp::Modulation::Qam64));
  EXPECT_EQ(c.pre_fft_filters, (std::vector<int>{64, 128, 256}));
  EXPECT_EQ(HybridConfig::from_json(c.to_json()).to_json(), c.to_json());
  HybridConfig bad = c;
  bad.post_fft_filters.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.output_bits = 6;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(LlrToBits, SignRuleAndMask) {
  rx::LlrGrid llr(1, 1, 8);
  dsp::BitTensor mask(1, 1, 8);
  llr(0, 0, 0) = 5.0;
  llr(0, 0, 1) = -5.0;
  llr(0, 0, 2) = 0.0;
  llr(0, 0, 3) = 7.0;
  for (int b = 0; b < 3; ++b) mask(0, 0, b) = 1;
  const auto bits = llr_to_bits(llr, mask);
  EXPECT_EQ(bits(0, 0, 0), 1);
  EXPECT_EQ(bits(0, 0, 1), 0);
  EXPECT_EQ(bits(0, 0, 2), 0);
  EXPECT_EQ(bits(0, 0, 3), 0);
}

TEST(LlrToBits, MatchesClassicalHardDecisions) {
  const auto cfg = dsp::LinkConfig::mini();
  const auto lay = dsp::DmrsLayout::make(cfg, 1);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto rec = sample_record(dsp::Modulation::Qam16, i);
    const auto eq = rx::lmmse_equalize(dsp::ofdm_demodulate(rec.rx_frame, cfg), rec.true_channel,
                                       std::pow(10.0, -rec.snr_db / 10.0));
    const auto bits = llr_to_bits(rx::max_log_llr(eq, cfg.modulation), rec.bit_mask);
    for (int sc = 0; sc < 36; ++sc)
      for (int l = 0; l < 14; ++l) {
        if (!lay.is_data(sc, l)) continue;
        const auto hard = dsp::qam_hard_demap(eq.unbiased(sc, l), cfg.modulation);
        for (int b = 0; b < 4; ++b) EXPECT_EQ(bits(sc, l, b), hard[static_cast<std::size_t>(b)]);
      }
  }
}

TEST(Hybrid, PaddedRowsDoNotLeak) {
  const HybridModel m(small_config());
  auto rec = sample_record(dsp::Modulation::Qam16, 5, 12.0);
  const auto ref = m.infer(rec.rx_frame, rec.raw_ls);
  for (int l = 0; l < rec.rx_frame.symbols(); ++l)
    for (int row = rec.rx_frame.valid_length(l); row < rec.rx_frame.rows(); ++row) rec.rx_frame(row, l) = {3.0, -2.0};
  const auto pert = m.infer(rec.rx_frame, rec.raw_ls);
  EXPECT_EQ(ref.values, pert.values);
}
