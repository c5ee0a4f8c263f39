#include "hdrx/impairments.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "hdrx/rng.hpp"

namespace hdrx::impair {

using dsp::LinkConfig;
using dsp::ResourceGrid;
using dsp::TimeFrame;

void PaReferenceModel::validate() const {
  if (!(gain > 0.0)) throw ConfigError("PA gain must be positive");
  if (!(v_sat > 0.0)) throw ConfigError("PA saturation level must be positive");
  if (!(smoothness >= 1.0)) throw ConfigError("Rapp smoothness must be >= 1");
  if (!(am_pm_b > 0.0)) throw ConfigError("AM-PM parameter B must be positive");
}

PaResponse pa_reference_eval(double r, const PaReferenceModel& m) {
  if (r < 0.0) throw ArgumentError("PA input amplitude must be non-negative");
  const double lin = m.gain * r;
  const double two_p = 2.0 * m.smoothness;
  const double amplitude = std::isinf(m.v_sat) ? lin : lin / std::pow(1.0 + std::pow(lin / m.v_sat, two_p), 1.0 / two_p);
  const double x = std::isinf(m.v_sat) ? 0.0 : lin / m.v_sat;
  const double phase = m.am_pm_a * std::pow(x, m.am_pm_q1) / (1.0 + std::pow(x / m.am_pm_b, m.am_pm_q2));
  return {amplitude, phase};
}

cdouble PaPolynomial::eval(cdouble z) const {
  const double r = std::abs(z);
  if (r == 0.0) return {};
  const double re = fit_range > 0.0 ? std::min(r, fit_range) : r;
  const double r2 = re * re;
  cdouble gain{};
  for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) gain = gain * r2 + *it;
  cdouble out = gain * re * (z / r);
  const double mag = std::abs(out);
  if (mag > v_sat) out *= v_sat / mag;
  return out;
}

PaFit fit_pa_polynomial(const PaReferenceModel& model, int order, double fit_range, int num_points) {
  model.validate();
  if (order < 1 || order % 2 == 0) throw ArgumentError("polynomial order must be odd and positive");
  if (fit_range == 0.0) fit_range = 2.0 * model.saturation_input();
  if (!(fit_range > 0.0) || std::isinf(fit_range)) throw ArgumentError("fit range must be positive and finite");
  if (num_points < (order + 1) / 2) throw ArgumentError("too few fit points for the requested order");

  const int terms = (order + 1) / 2;
  // Fit in u = r / fit_range for conditioning, then rescale.
  Eigen::MatrixXcd design(num_points, terms);
  Eigen::VectorXcd target(num_points);
  for (int i = 0; i < num_points; ++i) {
    const double r = fit_range * (i + 1) / num_points;
    const double u = r / fit_range;
    const auto resp = pa_reference_eval(r, model);
    target(i) = std::polar(resp.amplitude / r, resp.phase);
    double p = 1.0;
    for (int k = 0; k < terms; ++k) {
      design(i, k) = p;
      p *= u * u;
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(design);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(design);
  if (qr.rank() < terms) {
    std::ostringstream os;
    os << "PA fit is rank deficient (rank " << qr.rank() << " of " << terms << ", condition " << cond << ")";
    throw FittingError(os.str());
  }
  const Eigen::VectorXcd a = qr.solve(target);
  const double rms = std::sqrt((design * a - target).squaredNorm() / num_points);

  PaFit fit;
  fit.condition_number = cond;
  fit.relative_rms_residual = rms / model.gain;
  fit.polynomial.fit_range = fit_range;
  fit.polynomial.v_sat = model.v_sat;
  fit.polynomial.small_signal_gain = model.gain;
  double scale = 1.0;
  for (int k = 0; k < terms; ++k) {
    fit.polynomial.coefficients.push_back(a(k) / scale);
    scale *= fit_range * fit_range;
  }
  return fit;
}

PaPolynomial dither_pa(const PaPolynomial& poly, double delta, std::uint64_t seed) {
  if (delta < 0.0) throw ArgumentError("dither delta must be non-negative");
  PaPolynomial out = poly;
  if (delta == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& c : out.coefficients) {
    const double sd = delta * std::abs(c) / std::sqrt(2.0);
    const double re = n01(rng);
    const double im = n01(rng);
    c += cdouble(sd * re, sd * im);
  }
  return out;
}

TimeFrame apply_pa(const TimeFrame& frame, const PaPolynomial& poly, double backoff_db, double kappa) {
  const double sat_in = poly.v_sat / poly.small_signal_gain;
  const double drive = kappa * sat_in * std::pow(10.0, -backoff_db / 20.0);
  const double out_scale = 1.0 / (poly.small_signal_gain * drive);
  TimeFrame out = frame;
  for (int l = 0; l < frame.symbols(); ++l)
    for (int r = 0; r < frame.valid_length(l); ++r) out(r, l) = poly.eval(drive * frame(r, l)) * out_scale;
  return out;
}

cdouble best_linear_gain(std::span<const ResourceGrid> tx, std::span<const ResourceGrid> rx) {
  if (tx.size() != rx.size()) throw ShapeError("tx/rx grid counts differ");
  cdouble num{};
  double den = 0.0;
  for (std::size_t g = 0; g < tx.size(); ++g) {
    if (!tx[g].same_shape(rx[g])) throw ShapeError("tx/rx grid shapes differ");
    const auto xs = tx[g].data();
    const auto ys = rx[g].data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] == cdouble{}) continue;
      num += std::conj(xs[i]) * ys[i];
      den += std::norm(xs[i]);
    }
  }
  if (den == 0.0) throw ArgumentError("transmit grid is all zeros");
  return num / den;
}

cdouble best_linear_gain(const ResourceGrid& tx, const ResourceGrid& rx) {
  return best_linear_gain(std::span<const ResourceGrid>(&tx, 1), std::span<const ResourceGrid>(&rx, 1));
}

double compute_evm(std::span<const ResourceGrid> tx, std::span<const ResourceGrid> rx) {
  const cdouble a = best_linear_gain(tx, rx);
  if (a == cdouble{}) return std::numeric_limits<double>::infinity();
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t g = 0; g < tx.size(); ++g) {
    const auto xs = tx[g].data();
    const auto ys = rx[g].data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] == cdouble{}) continue;
      err += std::norm(ys[i] / a - xs[i]);
      ref += std::norm(xs[i]);
    }
  }
  return 100.0 * std::sqrt(err / ref);
}

double compute_evm(const ResourceGrid& tx, const ResourceGrid& rx) {
  return compute_evm(std::span<const ResourceGrid>(&tx, 1), std::span<const ResourceGrid>(&rx, 1));
}

std::vector<ResourceGrid> evm_reference_grids(const LinkConfig& cfg, int count, std::uint64_t seed) {
  const auto& pts = dsp::constellation(dsp::Modulation::Qam64);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  std::vector<ResourceGrid> grids;
  grids.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    ResourceGrid g(cfg.num_data_subcarriers, cfg.num_symbols, dsp::GridKind::TxSymbols);
    for (auto& v : g.data()) v = pts[pick(rng)];
    grids.push_back(std::move(g));
  }
  return grids;
}

double measure_evm(const PaPolynomial& poly, double backoff_db, double kappa, const LinkConfig& cfg,
                   std::span<const ResourceGrid> reference) {
  std::vector<ResourceGrid> rx;
  rx.reserve(reference.size());
  for (const auto& g : reference) {
    const auto frame = apply_pa(dsp::ofdm_modulate(g, cfg), poly, backoff_db, kappa);
    rx.push_back(dsp::ofdm_demodulate(frame, cfg));
  }
  return compute_evm(reference, rx);
}

double calibrate_kappa(const PaPolynomial& poly, const LinkConfig& cfg, double target_evm_percent,
                       double backoff_db, int reference_ttis, std::uint64_t seed) {
  const auto ref = evm_reference_grids(cfg, reference_ttis, seed);
  double lo = 0.05;
  double hi = 5.0;
  if (measure_evm(poly, backoff_db, lo, cfg, ref) > target_evm_percent ||
      measure_evm(poly, backoff_db, hi, cfg, ref) < target_evm_percent)
    throw FittingError("target EVM not bracketed by kappa in [0.05, 5]");
  for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (measure_evm(poly, backoff_db, mid, cfg, ref) < target_evm_percent ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double noise_variance_for_snr(double snr_db, const LinkConfig& cfg) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0) * static_cast<double>(cfg.fft_size) / cfg.num_data_subcarriers;
}

TimeFrame apply_awgn(const TimeFrame& frame, double snr_db, std::uint64_t seed, const LinkConfig& cfg) {
  TimeFrame out = frame;
  const double var = noise_variance_for_snr(snr_db, cfg);
  if (var == 0.0) return out;
  const double sd = std::sqrt(var / 2.0);
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int l = 0; l < frame.symbols(); ++l) {
    for (int r = 0; r < frame.valid_length(l); ++r) {
      const double re = n01(rng);
      const double im = n01(rng);
      out(r, l) += cdouble(sd * re, sd * im);
    }
  }
  return out;
}

ChannelProfile ChannelProfile::awgn() { return {}; }

ChannelProfile ChannelProfile::tdl_a(double delay_spread_s, double max_doppler_hz) {
  // TR 38.901 Table 7.7.2-1 (TDL-A), normalized delays and powers.
  static constexpr double kDelays[] = {0.0000, 0.3819, 0.4025, 0.5868, 0.4610, 0.5375, 0.6708, 0.5750,
                                       0.7618, 1.5375, 1.8978, 2.2242, 2.1718, 2.4942, 2.5119, 3.0582,
                                       4.0810, 4.4579, 4.5695, 4.7966, 5.0066, 5.3043, 9.6586};
  static constexpr double kPowers[] = {-13.4, 0.0,   -2.2,  -4.0,  -6.0,  -8.2,  -9.9,  -10.5,
                                       -7.5,  -15.9, -6.6,  -16.7, -12.4, -15.2, -10.8, -11.3,
                                       -12.7, -16.2, -18.3, -18.9, -16.6, -19.9, -29.7};
  ChannelProfile p;
  p.kind = ChannelKind::Tdl;
  p.delay_spread_s = delay_spread_s;
  p.max_doppler_hz = max_doppler_hz;
  for (double d : kDelays) p.tap_delays_s.push_back(d * delay_spread_s);
  p.tap_powers_db.assign(std::begin(kPowers), std::end(kPowers));
  return p;
}

void ChannelProfile::validate() const {
  if (kind == ChannelKind::Awgn) return;
  if (tap_delays_s.empty() || tap_delays_s.size() != tap_powers_db.size())
    throw ConfigError("TDL profile needs matching, non-empty delay and power lists");
  for (double d : tap_delays_s)
    if (d < 0.0) throw ConfigError("TDL tap delays must be non-negative");
  if (max_doppler_hz < 0.0) throw ConfigError("Doppler must be non-negative");
}

SampledTaps sample_taps(const ChannelProfile& profile, const LinkConfig& cfg) {
  profile.validate();
  std::map<int, double> merged;
  double total = 0.0;
  const double fs = cfg.sample_rate_hz();
  for (std::size_t i = 0; i < profile.tap_delays_s.size(); ++i) {
    const int d = static_cast<int>(std::lround(profile.tap_delays_s[i] * fs));
    const double p = std::pow(10.0, profile.tap_powers_db[i] / 10.0);
    merged[d] += p;
    total += p;
  }
  SampledTaps taps;
  for (const auto& [d, p] : merged) {
    if (d > cfg.cp_short)
      throw ConfigError("TDL tap delay of " + std::to_string(d) + " samples exceeds the short CP (" +
                        std::to_string(cfg.cp_short) + ")");
    taps.delays.push_back(d);
    taps.powers.push_back(p / total);
  }
  return taps;
}

TdlResult apply_tdl(const TimeFrame& frame, const ChannelProfile& profile, std::uint64_t seed, const LinkConfig& cfg) {
  const auto taps = sample_taps(profile, cfg);
  const int num_taps = static_cast<int>(taps.delays.size());
  const int nsym = cfg.num_symbols;
  constexpr int kSinusoids = 16;

  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * kPi);
  // coeff[t * nsym + l]: tap t during symbol l
  std::vector<cdouble> coeff(static_cast<std::size_t>(num_taps) * nsym);
  const double fs = cfg.sample_rate_hz();
  for (int t = 0; t < num_taps; ++t) {
    double doppler[kSinusoids];
    double phase[kSinusoids];
    for (int m = 0; m < kSinusoids; ++m) {
      doppler[m] = profile.max_doppler_hz * std::cos(uni(rng));
      phase[m] = uni(rng);
    }
    const double amp = std::sqrt(taps.powers[t] / kSinusoids);
    for (int l = 0; l < nsym; ++l) {
      const double time = (cfg.stream_offset(l) + cfg.cp_of(l) + 0.5 * cfg.fft_size) / fs;
      cdouble h{};
      for (int m = 0; m < kSinusoids; ++m) h += std::polar(amp, 2.0 * kPi * doppler[m] * time + phase[m]);
      coeff[static_cast<std::size_t>(t) * nsym + l] = h;
    }
  }

  const auto x = dsp::frame_to_stream(frame, cfg);
  std::vector<cdouble> y(x.size());
  for (int l = 0; l < nsym; ++l) {
    const int start = cfg.stream_offset(l);
    const int len = cfg.cp_of(l) + cfg.fft_size;
    for (int n = start; n < start + len; ++n) {
      cdouble acc{};
      for (int t = 0; t < num_taps; ++t) {
        const int src = n - taps.delays[t];
        if (src >= 0) acc += coeff[static_cast<std::size_t>(t) * nsym + l] * x[static_cast<std::size_t>(src)];
      }
      y[static_cast<std::size_t>(n)] = acc;
    }
  }

  TdlResult out{dsp::stream_to_frame(y, cfg),
                ResourceGrid(cfg.num_data_subcarriers, nsym, dsp::GridKind::ChannelEstimate)};
  for (int l = 0; l < nsym; ++l) {
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc) {
      const int bin = cfg.fft_bin(sc);
      cdouble h{};
      for (int t = 0; t < num_taps; ++t)
        h += coeff[static_cast<std::size_t>(t) * nsym + l] *
             std::polar(1.0, -2.0 * kPi * bin * taps.delays[t] / cfg.fft_size);
      out.true_channel(sc, l) = h;
    }
  }
  return out;
}

std::string to_string(ChannelKind k) { return k == ChannelKind::Awgn ? "awgn" : "tdl"; }

ChannelKind channel_kind_from_string(const std::string& s) {
  if (s == "awgn") return ChannelKind::Awgn;
  if (s == "tdl" || s == "tdl-a") return ChannelKind::Tdl;
  throw ConfigError("unknown channel kind '" + s + "'");
}

}  // namespace hdrx::impair
