#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hdrx/common.hpp"
#include "hdrx/dsp.hpp"

namespace hdrx::impair {

/// Modified-Rapp AM-AM with a rational AM-PM term. The AM-PM term is a
/// function of the normalized drive x = G r / V_sat (x = 1 at the knee).
struct PaReferenceModel {
  double gain = 16.0;        // small-signal voltage gain G
  double v_sat = 1.0;        // output saturation amplitude
  double smoothness = 3.0;   // Rapp p
  double am_pm_a = 0.3;      // rad
  double am_pm_b = 0.7;
  double am_pm_q1 = 2.0;
  double am_pm_q2 = 4.0;

  void validate() const;
  /// Input amplitude at which the linear extrapolation reaches V_sat.
  double saturation_input() const { return v_sat / gain; }
};

struct PaResponse {
  double amplitude = 0.0;
  double phase = 0.0;
};

PaResponse pa_reference_eval(double r, const PaReferenceModel& model);

/// z -> z * sum_k c_k |z|^{k-1} over odd k. Inputs beyond `fit_range` are
/// evaluated at the fit-range edge (the reference is saturated there) and the
/// output magnitude is clamped at `v_sat`.
struct PaPolynomial {
  std::vector<cdouble> coefficients;  // c_1, c_3, ..., c_order
  double fit_range = 0.0;
  double v_sat = 1.0;
  double small_signal_gain = 1.0;

  int order() const { return 2 * static_cast<int>(coefficients.size()) - 1; }
  cdouble eval(cdouble z) const;
};

struct PaFit {
  PaPolynomial polynomial;
  double relative_rms_residual = 0.0;  // RMS complex-gain residual / G
  double condition_number = 0.0;       // of the scaled design matrix
};

/// Least-squares fit of the complex gain g(r) e^{j psi(r)} / r on
/// (0, fit_range]. Throws FittingError when the design matrix is rank
/// deficient.
PaFit fit_pa_polynomial(const PaReferenceModel& model, int order = 17, double fit_range = 0.0,
                        int num_points = 2000);

/// Adds independent complex Gaussian noise to every coefficient with per
/// component standard deviation delta |c_k| / sqrt(2).
PaPolynomial dither_pa(const PaPolynomial& poly, double delta, std::uint64_t seed);

/// Backoff calibration constant: at 3 dB backoff the undithered reference
/// polynomial produces 8.0 % EVM on the mini-profile 64-QAM reference grid.
/// Reproduced by calibrate_kappa() and checked in the test suite.
inline constexpr double kDefaultKappa = 0.8823775771;

/// Drives the PA with RMS input amplitude kappa * V_sat,in * 10^{-backoff/20}
/// (unit-power frames assumed) and divides the output by the linear gain, so
/// the small-signal path has unit gain. Padded rows stay zero.
dsp::TimeFrame apply_pa(const dsp::TimeFrame& frame, const PaPolynomial& poly, double backoff_db,
                        double kappa = kDefaultKappa);

/// Complex scalar a minimising sum |rx - a tx|^2 over REs where tx != 0.
cdouble best_linear_gain(std::span<const dsp::ResourceGrid> tx, std::span<const dsp::ResourceGrid> rx);
cdouble best_linear_gain(const dsp::ResourceGrid& tx, const dsp::ResourceGrid& rx);

/// EVM in percent after removing the best linear gain, over REs where tx != 0.
double compute_evm(std::span<const dsp::ResourceGrid> tx, std::span<const dsp::ResourceGrid> rx);
double compute_evm(const dsp::ResourceGrid& tx, const dsp::ResourceGrid& rx);

/// 64-QAM reference grids (no pilots) used for EVM reporting and calibration.
std::vector<dsp::ResourceGrid> evm_reference_grids(const dsp::LinkConfig& cfg, int count, std::uint64_t seed);

double measure_evm(const PaPolynomial& poly, double backoff_db, double kappa, const dsp::LinkConfig& cfg,
                   std::span<const dsp::ResourceGrid> reference);

/// Bisection for the kappa that yields `target_evm_percent` at `backoff_db`.
double calibrate_kappa(const PaPolynomial& poly, const dsp::LinkConfig& cfg, double target_evm_percent = 8.0,
                       double backoff_db = 3.0, int reference_ttis = 64, std::uint64_t seed = 20211);

/// Flag value for a noiseless link.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Per-sample noise variance giving per-data-RE SNR `snr_db`.
double noise_variance_for_snr(double snr_db, const dsp::LinkConfig& cfg);

dsp::TimeFrame apply_awgn(const dsp::TimeFrame& frame, double snr_db, std::uint64_t seed,
                          const dsp::LinkConfig& cfg);

enum class ChannelKind { Awgn, Tdl };

struct ChannelProfile {
  ChannelKind kind = ChannelKind::Awgn;
  std::vector<double> tap_delays_s;
  std::vector<double> tap_powers_db;
  double delay_spread_s = 0.0;
  double max_doppler_hz = 0.0;
  std::uint64_t seed = 0;

  static ChannelProfile awgn();
  /// TDL-A normalized delays scaled to `delay_spread_s`.
  static ChannelProfile tdl_a(double delay_spread_s = 100e-9, double max_doppler_hz = 40.0);
  void validate() const;
};

/// Integer-sample taps after quantizing the profile to the sample grid;
/// taps landing on the same sample are merged (powers add).
struct SampledTaps {
  std::vector<int> delays;
  std::vector<double> powers;  // linear, sum to 1
};
SampledTaps sample_taps(const ChannelProfile& profile, const dsp::LinkConfig& cfg);

struct TdlResult {
  dsp::TimeFrame frame;
  dsp::ResourceGrid true_channel;
};

/// Rayleigh taps held constant within a symbol and evolved across symbols by
/// a sum-of-sinusoids Jakes process. The convolution runs over the continuous
/// stream, so inter-symbol leakage falls inside the CP.
TdlResult apply_tdl(const dsp::TimeFrame& frame, const ChannelProfile& profile, std::uint64_t seed,
                    const dsp::LinkConfig& cfg);

std::string to_string(ChannelKind k);
ChannelKind channel_kind_from_string(const std::string& s);

}  // namespace hdrx::impair
