#pragma once

// BER-vs-SNR sweeps, required-SNR-vs-backoff sweeps and EVM reporting.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hdrx/hybrid_rx.hpp"
#include "hdrx/pipeline.hpp"

namespace hdrx::eval {

struct SweepSpec {
  /// Any of lmmse_known, lmmse_est, deeprx, hybrid, theory.
  std::vector<std::string> receivers{"lmmse_known", "lmmse_est", "theory"};
  std::vector<double> snr_grid_db;
  std::vector<double> backoff_grid_db{1.0, 2.0, 3.0, 4.0, 6.0};
  std::vector<double> target_ber{0.1, 0.01};
  std::string profile = "mini";
  dsp::Modulation modulation = dsp::Modulation::Qam16;
  impair::ChannelProfile channel = impair::ChannelProfile::awgn();
  double backoff_db = 3.0;  // BER sweep operating point
  bool linear_pa = false;
  int ttis_per_point = 100;
  std::vector<std::uint64_t> pa_seeds{201, 202, 203, 204, 205, 206, 207, 208, 209, 210};
  std::uint64_t eval_seed = 4242;
  std::map<std::string, std::string> checkpoints;  // receiver -> checkpoint path
  double snr_floor_db = 0.0;
  double snr_ceiling_db = 30.0;
  double snr_tolerance_db = 0.1;

  void validate() const;
  std::string to_json() const;
  static SweepSpec from_json(const std::string& json);
  /// SHA-256 of the canonical JSON; stamped into every output.
  std::string config_hash() const;

  /// Evaluation dataset spec at one (snr, backoff) point. Every point shares
  /// the master seed, so payloads, PA draws and noise are common random numbers.
  pipeline::DatasetSpec point_spec(double snr_db, double backoff_db) const;
};

/// Preloaded ML models keyed by receiver name ("hybrid", "deeprx").
using ModelSet = std::map<std::string, const model::HybridModel*>;

struct BerPoint {
  std::string receiver;
  double snr_db = 0.0;
  double ber = 0.0;
  std::uint64_t bit_errors = 0;
  std::uint64_t bit_count = 0;
};

/// Rows ordered by receiver (spec order) then SNR; |receivers| x |snr grid| rows.
std::vector<BerPoint> run_ber_sweep(const SweepSpec& spec, const ModelSet& models);
std::vector<BerPoint> run_ber_sweep(const SweepSpec& spec);

struct BackoffPoint {
  std::string receiver;
  double backoff_db = 0.0;
  double target_ber = 0.0;
  std::optional<double> snr_needed_db;  // nullopt: saturated
};

/// Minimum SNR on [floor, ceiling] reaching each target BER, by bisection.
std::vector<BackoffPoint> run_backoff_sweep(const SweepSpec& spec, const ModelSet& models);
std::vector<BackoffPoint> run_backoff_sweep(const SweepSpec& spec);

/// Measured BER of one receiver at one operating point.
pipeline::BitCount measure_ber(const SweepSpec& spec, const std::string& receiver, double snr_db, double backoff_db,
                               const ModelSet& models);

struct EvmPoint {
  double backoff_db = 0.0;
  double evm_percent = 0.0;
};

std::vector<EvmPoint> report_evm(const std::vector<double>& backoffs_db, const impair::PaPolynomial& pa,
                                 double kappa = impair::kDefaultKappa, int reference_ttis = 64,
                                 std::uint64_t seed = 20211);

void write_ber_csv(std::ostream& os, const std::vector<BerPoint>& rows, const std::string& config_hash,
                   std::uint64_t seed);
void write_backoff_csv(std::ostream& os, const std::vector<BackoffPoint>& rows, const std::string& config_hash,
                       std::uint64_t seed);
void write_evm_csv(std::ostream& os, const std::vector<EvmPoint>& rows, const std::string& config_hash,
                   std::uint64_t seed);

}  // namespace hdrx::eval
