#pragma once

// Classical receiver: LS pilot estimates, interpolation, LMMSE, max-log
// demapping and closed-form AWGN references.

#include <vector>

#include "hdrx/dsp.hpp"

namespace hdrx::rx {

/// Y / p at pilot REs, exactly zero elsewhere.
dsp::ResourceGrid ls_estimate(const dsp::ResourceGrid& rx_grid, const dsp::DmrsLayout& layout);

/// Linear interpolation across subcarriers of the pilot symbol (nearest-edge
/// extrapolation), then constant extension across all symbols.
dsp::ResourceGrid interpolate_channel(const dsp::ResourceGrid& raw, const dsp::DmrsLayout& layout);

/// Noise variance from pilot residuals against the midpoint of the two
/// neighbouring pilots (exact for channels affine in frequency).
double estimate_noise_variance(const dsp::ResourceGrid& raw, const dsp::DmrsLayout& layout);

/// Per-RE LMMSE output. `symbols` is the (biased) LMMSE estimate
/// H* y / (|H|^2 + s2); `bias` = |H|^2 / (|H|^2 + s2) is its gain on x, and
/// `post_eq_noise_var` = s2 / |H|^2 is the noise variance of the unbiased
/// estimate symbols / bias used by the demapper.
struct EqualizedGrid {
  int subcarriers = 0;
  int symbols_count = 0;
  std::vector<cdouble> symbols;
  std::vector<double> bias;
  std::vector<double> post_eq_noise_var;

  std::size_t index(int sc, int sym) const { return static_cast<std::size_t>(sc) * symbols_count + sym; }
  cdouble symbol(int sc, int sym) const { return symbols[index(sc, sym)]; }
  cdouble unbiased(int sc, int sym) const;
};

inline constexpr double kDenominatorGuard = 1e-12;

EqualizedGrid lmmse_equalize(const dsp::ResourceGrid& rx_grid, const dsp::ResourceGrid& channel, double noise_var);

/// Real tensor N_D x N_symb x N_B; entries beyond bits-per-symbol are zero.
struct LlrGrid {
  int subcarriers = 0;
  int symbols = 0;
  int depth = 0;
  std::vector<double> values;

  LlrGrid() = default;
  LlrGrid(int sc, int sym, int d)
      : subcarriers(sc), symbols(sym), depth(d), values(static_cast<std::size_t>(sc) * sym * d, 0.0) {}
  std::size_t index(int sc, int sym, int b) const {
    return (static_cast<std::size_t>(sc) * symbols + sym) * depth + b;
  }
  double& operator()(int sc, int sym, int b) { return values[index(sc, sym, b)]; }
  double operator()(int sc, int sym, int b) const { return values[index(sc, sym, b)]; }
};

inline constexpr double kLlrClamp = 40.0;

/// Max-log LLRs, positive meaning "bit is 1" (sigmoid(L) = P(b = 1)).
LlrGrid max_log_llr(const EqualizedGrid& eq, dsp::Modulation m, int nb_max = dsp::kMaxBitsPerSymbol);

/// Single-symbol max-log LLRs for an unbiased symbol with noise variance.
std::vector<double> max_log_llr_symbol(cdouble x, double noise_var, dsp::Modulation m);

/// Q(x) = P(N(0,1) > x).
double q_function(double x);

/// Exact uncoded BER of Gray-mapped square QAM in AWGN at per-symbol SNR
/// Es/N0 (dB).
double awgn_ber_theory(double snr_db, dsp::Modulation m);

/// Inverse of awgn_ber_theory by bisection on [-20, 60] dB.
double awgn_snr_for_ber(double target_ber, dsp::Modulation m);

}  // namespace hdrx::rx
