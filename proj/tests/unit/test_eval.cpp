#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "hdrx/baseline_rx.hpp"
#include "hdrx/link_budget.hpp"
#include "hdrx/pipeline.hpp"
#include "hdrx/sweep.hpp"

using namespace hdrx;
using namespace hdrx::eval;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<LinkBudgetResult> reference_budget() {
  return link_budget(link_budget_from_json(read_file(std::string(HDRX_CONFIG_DIR) + "/link_budget.json")));
}

SweepSpec linear_spec() {
  SweepSpec s;
  s.receivers = {"lmmse_known", "theory"};
  s.linear_pa = true;
  s.ttis_per_point = 40;
  return s;
}

}  // namespace

TEST(Rma, MonotonicInDistance) {
  const RmaParams p;
  for (bool los : {true, false})
    for (double d = 10.0; d <= 5000.0; d *= 1.5) EXPECT_GT(rma_path_loss(2 * d, p, los), rma_path_loss(d, p, los));
}

TEST(Rma, NlosNeverBelowLos) {
  const RmaParams p;
  for (double d = 10.0; d <= 10000.0; d *= 1.3) EXPECT_GE(rma_path_loss(d, p, false), rma_path_loss(d, p, true));
}

TEST(Rma, TableDistancesGive125dB) {
  const RmaParams p;
  EXPECT_NEAR(rma_path_loss(4731.0, p, true), 125.0, 0.5);
  EXPECT_NEAR(rma_path_loss(723.0, p, false), 125.0, 0.5);
}

TEST(Rma, OutOfRangeThrows) {
  const RmaParams p;
  EXPECT_THROW(rma_path_loss(5.0, p, true), DomainError);
  EXPECT_THROW(rma_path_loss(20000.0, p, false), DomainError);
}

TEST(Rma, InversionRoundTrip) {
  const RmaParams p;
  for (bool los : {true, false})
    for (double pl : {80.0, 100.0, 125.0, 128.0, 135.0}) {
      const auto d = rma_max_distance(pl, p, los, 1e-3);
      ASSERT_TRUE(d.has_value());
      EXPECT_NEAR(rma_path_loss(*d, p, los), pl, 0.01);
    }
}

TEST(Rma, UnreachableFlagged) {
  const RmaParams p;
  EXPECT_FALSE(rma_max_distance(20.0, p, true).has_value());
  EXPECT_FALSE(rma_max_distance(400.0, p, false).has_value());
}

TEST(Rma, InvalidParamsRejected) {
  RmaParams p;
  p.bs_height_m = 5.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(LinkBudget, ReferenceLmmseColumn) {
  const auto r = reference_budget();
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0].eirp_dbm, 22.0);
  EXPECT_EQ(std::lround(r[0].sensitivity_dbm), -83);
  EXPECT_EQ(std::lround(r[0].max_path_loss_db), 125);
  EXPECT_NEAR(*r[0].max_distance_los_m / 4731.0, 1.0, 0.02);
  EXPECT_NEAR(*r[0].max_distance_nlos_m / 723.0, 1.0, 0.02);
}

TEST(LinkBudget, ReferenceHybridColumn) {
  const auto r = reference_budget();
  EXPECT_DOUBLE_EQ(r[1].eirp_dbm, 25.0);
  EXPECT_EQ(std::lround(r[1].max_path_loss_db), 128);
  EXPECT_NEAR(*r[1].max_distance_los_m / 5623.0, 1.0, 0.02);
  EXPECT_NEAR(*r[1].max_distance_nlos_m / 865.0, 1.0, 0.02);
  EXPECT_NEAR(*r[1].gain_los_percent, 19.0, 1.0);
  EXPECT_NEAR(*r[1].gain_nlos_percent, 19.0, 1.0);
}

TEST(LinkBudget, Arithmetic) {
  LinkBudgetParams p;
  const auto r = link_budget(p);
  EXPECT_NEAR(r.noise_power_dbm, -174.0 + 10.0 * std::log10(5e6), 1e-12);
  EXPECT_NEAR(r.sensitivity_dbm, r.noise_power_dbm + 2.0 + 19.0 + 3.0, 1e-12);
  EXPECT_NEAR(r.max_path_loss_db, r.eirp_dbm - r.sensitivity_dbm + 20.0, 1e-12);
}

TEST(LinkBudget, LinearInPaPower) {
  LinkBudgetParams a;
  a.ue_antenna_gain_db = 0.0;
  a.bs_antenna_gain_db = 0.0;
  LinkBudgetParams b = a;
  b.pa_output_power_dbm = a.pa_output_power_dbm + 3.7;
  EXPECT_NEAR(link_budget(b).max_path_loss_db - link_budget(a).max_path_loss_db, 3.7, 1e-12);
}

TEST(LinkBudget, BadBandwidthRejected) {
  LinkBudgetParams p;
  p.bandwidth_hz = 0.0;
  EXPECT_THROW(link_budget(p), ConfigError);
}

TEST(LinkBudget, JsonReportCarriesHashAndSeed) {
  const auto text = link_budget_to_json(reference_budget(), "abc123", 9);
  EXPECT_NE(text.find("\"config_sha256\""), std::string::npos);
  EXPECT_NE(text.find("abc123"), std::string::npos);
  EXPECT_NE(text.find("\"seed\""), std::string::npos);
}

TEST(SweepSpecTest, JsonRoundTripAndHash) {
  SweepSpec s;
  s.snr_grid_db = {10, 14};
  s.checkpoints["hybrid"] = "/tmp/x.ckpt";
  const auto back = SweepSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.config_hash(), s.config_hash());
  SweepSpec t = s;
  t.eval_seed = 1;
  EXPECT_NE(t.config_hash(), s.config_hash());
}

TEST(SweepSpecTest, MissingCheckpointNamesReceiver) {
  SweepSpec s;
  s.receivers = {"lmmse_known", "hybrid"};
  s.snr_grid_db = {10};
  try {
    run_ber_sweep(s);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("hybrid"), std::string::npos);
  }
}

TEST(SweepSpecTest, CommonRandomNumbersAcrossPoints) {
  SweepSpec s;
  const auto a = s.point_spec(10.0, 3.0);
  const auto b = s.point_spec(20.0, 1.0);
  EXPECT_EQ(a.master_seed, b.master_seed);
  EXPECT_EQ(a.pa_seeds, b.pa_seeds);
  EXPECT_EQ(a.snr_lo_db, 10.0);
  EXPECT_EQ(a.snr_hi_db, 10.0);
}

TEST(BerSweep, RowCountAndTheoryAgreement) {
  auto s = linear_spec();
  s.snr_grid_db = {6.0, 10.0, 14.0};
  s.ttis_per_point = 150;
  const auto rows = run_ber_sweep(s);
  ASSERT_EQ(rows.size(), s.receivers.size() * s.snr_grid_db.size());
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& m = rows[i];
    const auto& t = rows[3 + i];
    EXPECT_EQ(m.receiver, "lmmse_known");
    EXPECT_EQ(t.receiver, "theory");
    EXPECT_EQ(m.snr_db, t.snr_db);
    const double se = std::sqrt(t.ber * (1 - t.ber) / double(m.bit_count));
    EXPECT_LT(std::abs(m.ber - t.ber), 4 * se) << m.snr_db;
  }
}

TEST(BerSweep, CsvFormat) {
  std::vector<BerPoint> rows{{"theory", 10.0, 0.05, 0, 0}};
  std::ostringstream os;
  write_ber_csv(os, rows, "h", 3);
  std::istringstream in(os.str());
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "# config_sha256=h seed=3");
  EXPECT_EQ(l2, "receiver,snr_db,ber,bit_errors,bit_count");
  EXPECT_TRUE(l3.starts_with("theory,10,"));
}

TEST(BackoffSweep, LinearPaMatchesTheoryInversion) {
  auto s = linear_spec();
  s.backoff_grid_db = {3.0};
  s.ttis_per_point = 60;
  const auto rows = run_backoff_sweep(s);
  ASSERT_EQ(rows.size(), 2u * 2u);
  for (const auto& r : rows) {
    ASSERT_TRUE(r.snr_needed_db.has_value()) << r.receiver;
    EXPECT_NEAR(*r.snr_needed_db, rx::awgn_snr_for_ber(r.target_ber, s.modulation), 0.5) << r.receiver;
  }
}

TEST(BackoffSweep, NonincreasingInBackoff) {
  SweepSpec s;
  s.receivers = {"lmmse_known"};
  s.backoff_grid_db = {1.0, 3.0, 6.0};
  s.target_ber = {0.1};
  s.ttis_per_point = 20;
  const auto rows = run_backoff_sweep(s);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_TRUE(rows[i].snr_needed_db.has_value());
    if (rows[i - 1].snr_needed_db) {
      EXPECT_LE(*rows[i].snr_needed_db, *rows[i - 1].snr_needed_db + 1e-9);
    }
  }
}

TEST(BackoffSweep, SaturatedWhenCeilingMisses) {
  SweepSpec s;
  s.receivers = {"lmmse_known"};
  s.modulation = dsp::Modulation::Qam64;
  s.backoff_grid_db = {-6.0};
  s.target_ber = {0.001};
  s.ttis_per_point = 10;
  const auto rows = run_backoff_sweep(s);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].snr_needed_db.has_value());
  std::ostringstream os;
  write_backoff_csv(os, rows, "h", 1);
  EXPECT_NE(os.str().find("saturated"), std::string::npos);
}

TEST(Evm, ReportAnchorsAndDecreases) {
  const auto rows = report_evm({1.0, 2.0, 3.0, 4.0, 6.0, 60.0}, pipeline::reference_pa());
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_NEAR(rows[2].evm_percent, 8.0, 0.5);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].evm_percent, rows[i - 1].evm_percent);
  EXPECT_LT(rows.back().evm_percent, 0.1);
}
