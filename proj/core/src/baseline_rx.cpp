#include "hdrx/baseline_rx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hdrx::rx {

using dsp::DmrsLayout;
using dsp::ResourceGrid;

ResourceGrid ls_estimate(const ResourceGrid& rx_grid, const DmrsLayout& layout) {
  ResourceGrid est(rx_grid.subcarriers(), rx_grid.symbols(), dsp::GridKind::ChannelEstimate);
  const int l = layout.pilot_symbol;
  for (int sc = 0; sc < rx_grid.subcarriers(); sc += layout.pilot_stride) est(sc, l) = rx_grid(sc, l) / layout.pilot(sc);
  return est;
}

ResourceGrid interpolate_channel(const ResourceGrid& raw, const DmrsLayout& layout) {
  const int nsc = raw.subcarriers();
  const int stride = layout.pilot_stride;
  const int l = layout.pilot_symbol;
  const int last_pilot = ((nsc - 1) / stride) * stride;
  std::vector<cdouble> column(static_cast<std::size_t>(nsc));
  for (int sc = 0; sc < nsc; ++sc) {
    if (sc >= last_pilot) {
      column[sc] = raw(last_pilot, l);
      continue;
    }
    const int left = (sc / stride) * stride;
    const int right = left + stride;
    const double t = static_cast<double>(sc - left) / stride;
    column[sc] = (1.0 - t) * raw(left, l) + t * raw(right, l);
  }
  ResourceGrid out(nsc, raw.symbols(), dsp::GridKind::ChannelEstimate);
  for (int sc = 0; sc < nsc; ++sc)
    for (int sym = 0; sym < raw.symbols(); ++sym) out(sc, sym) = column[sc];
  return out;
}

double estimate_noise_variance(const ResourceGrid& raw, const DmrsLayout& layout) {
  const int l = layout.pilot_symbol;
  const int stride = layout.pilot_stride;
  double acc = 0.0;
  int n = 0;
  for (int sc = stride; sc + stride < raw.subcarriers(); sc += stride) {
    const cdouble e = raw(sc, l) - 0.5 * (raw(sc - stride, l) + raw(sc + stride, l));
    acc += std::norm(e);
    ++n;
  }
  // e = n_k - (n_{k-1} + n_{k+1}) / 2 has variance 1.5 s2.
  return n ? std::max(acc / n / 1.5, kDenominatorGuard) : kDenominatorGuard;
}

cdouble EqualizedGrid::unbiased(int sc, int sym) const {
  const auto i = index(sc, sym);
  return symbols[i] / std::max(bias[i], kDenominatorGuard);
}

EqualizedGrid lmmse_equalize(const ResourceGrid& rx_grid, const ResourceGrid& channel, double noise_var) {
  if (!rx_grid.same_shape(channel)) throw ShapeError("rx grid and channel shapes differ");
  if (noise_var < 0.0) throw ArgumentError("noise variance must be non-negative");
  EqualizedGrid eq;
  eq.subcarriers = rx_grid.subcarriers();
  eq.symbols_count = rx_grid.symbols();
  const auto n = rx_grid.data().size();
  eq.symbols.resize(n);
  eq.bias.resize(n);
  eq.post_eq_noise_var.resize(n);
  const auto ys = rx_grid.data();
  const auto hs = channel.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double h2 = std::norm(hs[i]);
    const double den = h2 + noise_var + kDenominatorGuard;
    eq.symbols[i] = std::conj(hs[i]) * ys[i] / den;
    eq.bias[i] = h2 / den;
    eq.post_eq_noise_var[i] = std::max((noise_var + kDenominatorGuard) / std::max(h2, kDenominatorGuard),
                                       kDenominatorGuard);
  }
  return eq;
}

std::vector<double> max_log_llr_symbol(cdouble x, double noise_var, dsp::Modulation m) {
  const int k = dsp::bits_per_symbol(m);
  const auto& pts = dsp::constellation(m);
  std::vector<double> d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d[i] = std::norm(x - pts[i]);
  std::vector<double> llr(static_cast<std::size_t>(k));
  const double inv = 1.0 / std::max(noise_var, kDenominatorGuard);
  for (int b = 0; b < k; ++b) {
    double min0 = std::numeric_limits<double>::infinity();
    double min1 = min0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if ((i >> (k - 1 - b)) & 1U)
        min1 = std::min(min1, d[i]);
      else
        min0 = std::min(min0, d[i]);
    }
    llr[static_cast<std::size_t>(b)] = std::clamp(inv * (min0 - min1), -kLlrClamp, kLlrClamp);
  }
  return llr;
}

LlrGrid max_log_llr(const EqualizedGrid& eq, dsp::Modulation m, int nb_max) {
  LlrGrid out(eq.subcarriers, eq.symbols_count, nb_max);
  for (int sc = 0; sc < eq.subcarriers; ++sc) {
    for (int sym = 0; sym < eq.symbols_count; ++sym) {
      const auto llr = max_log_llr_symbol(eq.unbiased(sc, sym), eq.post_eq_noise_var[eq.index(sc, sym)], m);
      for (std::size_t b = 0; b < llr.size(); ++b) out(sc, sym, static_cast<int>(b)) = llr[b];
    }
  }
  return out;
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double awgn_ber_theory(double snr_db, dsp::Modulation m) {
  if (std::isinf(snr_db)) return snr_db > 0 ? 0.0 : 0.5;
  const int order = 1 << dsp::bits_per_symbol(m);
  const int side = static_cast<int>(std::lround(std::sqrt(order)));
  const int bits_per_dim = dsp::bits_per_symbol(m) / 2;
  const double snr = std::pow(10.0, snr_db / 10.0);
  // Cho & Yoon closed form for Gray square QAM.
  const double arg = std::sqrt(3.0 * snr / (2.0 * (order - 1)));
  double total = 0.0;
  for (int k = 1; k <= bits_per_dim; ++k) {
    const int pow2 = 1 << (k - 1);
    const int limit = static_cast<int>((1.0 - std::pow(2.0, -k)) * side);
    double acc = 0.0;
    for (int i = 0; i < limit; ++i) {
      const int f = (i * pow2) / side;
      const double w = ((f % 2) ? -1.0 : 1.0) * (pow2 - std::floor(static_cast<double>(i) * pow2 / side + 0.5));
      acc += w * std::erfc((2 * i + 1) * arg);
    }
    total += acc / side;
  }
  return total / bits_per_dim;
}

double awgn_snr_for_ber(double target_ber, dsp::Modulation m) {
  double lo = -20.0;
  double hi = 60.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (awgn_ber_theory(mid, m) > target_ber ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace hdrx::rx
