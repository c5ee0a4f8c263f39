#include "hdrx/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "hdrx/rng.hpp"

namespace hdrx::dsp {

int bits_per_symbol(Modulation m) { return m == Modulation::Qam16 ? 4 : 6; }

std::string to_string(Modulation m) { return m == Modulation::Qam16 ? "qam16" : "qam64"; }

Modulation modulation_from_string(const std::string& s) {
  if (s == "qam16" || s == "16qam" || s == "QAM16") return Modulation::Qam16;
  if (s == "qam64" || s == "64qam" || s == "QAM64") return Modulation::Qam64;
  throw ConfigError("unknown modulation '" + s + "'");
}

LinkConfig LinkConfig::mini(Modulation m) {
  LinkConfig c;
  c.modulation = m;
  return c;
}

LinkConfig LinkConfig::paper(Modulation m) {
  LinkConfig c;
  c.fft_size = 512;
  c.num_data_subcarriers = 312;
  c.cp_long = 40;
  c.cp_short = 36;
  c.modulation = m;
  return c;
}

LinkConfig LinkConfig::profile(const std::string& name, Modulation m) {
  if (name == "mini") return mini(m);
  if (name == "paper") return paper(m);
  throw ConfigError("unknown profile '" + name + "' (expected mini or paper)");
}

void LinkConfig::validate() const {
  if (fft_size <= 0 || !is_power_of_two(static_cast<std::size_t>(fft_size)))
    throw ConfigError("fft_size must be a positive power of two, got " + std::to_string(fft_size));
  if (num_data_subcarriers <= 0 || num_data_subcarriers > fft_size - 1)
    throw ConfigError("num_data_subcarriers must be in [1, N-1]");
  const int neg = num_data_subcarriers / 2;
  const int pos = num_data_subcarriers - neg;
  if (neg > fft_size / 2 || pos > fft_size / 2 - 1)
    throw ConfigError("occupied band does not fit around DC");
  if (num_symbols <= 0) throw ConfigError("num_symbols must be positive");
  if (cp_short < 0 || cp_short > cp_long || cp_long >= fft_size)
    throw ConfigError("CP lengths must satisfy 0 <= cp_short <= cp_long < N");
  for (int s : long_cp_symbols) {
    if (s < 0 || s >= num_symbols) throw ConfigError("long CP symbol index out of range");
  }
  if (max_bits != kMaxBitsPerSymbol) throw ConfigError("max_bits must be 8");
  if (subcarrier_spacing_hz <= 0.0) throw ConfigError("subcarrier spacing must be positive");
}

int LinkConfig::cp_of(int symbol) const {
  return std::find(long_cp_symbols.begin(), long_cp_symbols.end(), symbol) != long_cp_symbols.end()
             ? cp_long
             : cp_short;
}

int LinkConfig::fft_bin(int sc) const {
  const int neg = num_data_subcarriers / 2;
  return sc < neg ? fft_size - neg + sc : sc - neg + 1;
}

double LinkConfig::power_scale() const {
  return static_cast<double>(fft_size) / std::sqrt(static_cast<double>(num_data_subcarriers));
}

int LinkConfig::stream_offset(int symbol) const {
  int off = 0;
  for (int l = 0; l < symbol; ++l) off += cp_of(l) + fft_size;
  return off;
}

int LinkConfig::stream_length() const { return stream_offset(num_symbols); }

bool is_power_of_two(std::size_t n) { return n != 0 && std::has_single_bit(n); }

void dft_inplace(std::span<cdouble> x, Direction dir) {
  const std::size_t n = x.size();
  if (!is_power_of_two(n)) throw ConfigError("DFT length must be a power of two, got " + std::to_string(n));
  if (n == 1) return;

  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  const double sign = dir == Direction::Forward ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // direct twiddles keep the error at O(eps log N)
      const double ang = sign * 2.0 * kPi * static_cast<double>(k) / static_cast<double>(len);
      const cdouble w(std::cos(ang), std::sin(ang));
      for (std::size_t i = k; i < n; i += len) {
        const cdouble u = x[i];
        const cdouble v = x[i + half] * w;
        x[i] = u + v;
        x[i + half] = u - v;
      }
    }
  }
  if (dir == Direction::Inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= inv;
  }
}

std::vector<cdouble> dft(std::span<const cdouble> x, Direction dir) {
  std::vector<cdouble> out(x.begin(), x.end());
  dft_inplace(out, dir);
  return out;
}

namespace {

std::vector<cdouble> make_constellation(Modulation m) {
  const int k = bits_per_symbol(m);
  const std::size_t size = std::size_t{1} << k;
  std::vector<cdouble> pts(size);
  for (std::size_t i = 0; i < size; ++i) {
    int b[6] = {0, 0, 0, 0, 0, 0};
    for (int j = 0; j < k; ++j) b[j] = static_cast<int>((i >> (k - 1 - j)) & 1U);
    double re = 0.0;
    double im = 0.0;
    if (m == Modulation::Qam16) {
      re = (1 - 2 * b[0]) * (2 - (1 - 2 * b[2]));
      im = (1 - 2 * b[1]) * (2 - (1 - 2 * b[3]));
      pts[i] = cdouble(re, im) / std::sqrt(10.0);
    } else {
      re = (1 - 2 * b[0]) * (4 - (1 - 2 * b[2]) * (2 - (1 - 2 * b[4])));
      im = (1 - 2 * b[1]) * (4 - (1 - 2 * b[3]) * (2 - (1 - 2 * b[5])));
      pts[i] = cdouble(re, im) / std::sqrt(42.0);
    }
  }
  return pts;
}

}  // namespace

const std::vector<cdouble>& constellation(Modulation m) {
  static const std::vector<cdouble> qam16 = make_constellation(Modulation::Qam16);
  static const std::vector<cdouble> qam64 = make_constellation(Modulation::Qam64);
  return m == Modulation::Qam16 ? qam16 : qam64;
}

cdouble qam_map(std::span<const std::uint8_t> bits, Modulation m) {
  const int k = bits_per_symbol(m);
  if (static_cast<int>(bits.size()) != k)
    throw ArgumentError("qam_map expects " + std::to_string(k) + " bits, got " + std::to_string(bits.size()));
  std::size_t idx = 0;
  for (auto b : bits) idx = (idx << 1) | (b & 1U);
  return constellation(m)[idx];
}

int qam_hard_index(cdouble symbol, Modulation m) {
  const auto& pts = constellation(m);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  // strict '<' keeps the lowest index on ties
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = std::norm(symbol - pts[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<std::uint8_t> qam_hard_demap(cdouble symbol, Modulation m) {
  const int k = bits_per_symbol(m);
  const int idx = qam_hard_index(symbol, m);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) bits[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>((idx >> (k - 1 - j)) & 1);
  return bits;
}

ResourceGrid::ResourceGrid(int subcarriers, int symbols, GridKind kind)
    : subcarriers_(subcarriers),
      symbols_(symbols),
      kind_(kind),
      data_(static_cast<std::size_t>(subcarriers) * symbols, cdouble{}) {}

TimeFrame::TimeFrame(const LinkConfig& cfg)
    : rows_(cfg.frame_rows()),
      symbols_(cfg.num_symbols),
      valid_length_(static_cast<std::size_t>(cfg.num_symbols)),
      samples_(static_cast<std::size_t>(cfg.frame_rows()) * cfg.num_symbols, cdouble{}) {
  for (int l = 0; l < symbols_; ++l) valid_length_[l] = cfg.cp_of(l) + cfg.fft_size;
}

double TimeFrame::active_power() const {
  double acc = 0.0;
  std::size_t n = 0;
  for (int l = 0; l < symbols_; ++l) {
    for (int r = 0; r < valid_length_[l]; ++r) {
      acc += std::norm((*this)(r, l));
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

DmrsLayout DmrsLayout::make(const LinkConfig& cfg, std::uint64_t seed, int pilot_symbol, int pilot_stride) {
  if (pilot_symbol < 0 || pilot_symbol >= cfg.num_symbols) throw ConfigError("pilot symbol out of range");
  if (pilot_stride <= 0) throw ConfigError("pilot stride must be positive");
  DmrsLayout d;
  d.pilot_symbol = pilot_symbol;
  d.pilot_stride = pilot_stride;
  d.seed = seed;
  const int count = (cfg.num_data_subcarriers + pilot_stride - 1) / pilot_stride;
  std::uint64_t state = seed;
  const double a = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < count; ++i) {
    state = splitmix64(state);
    const double re = (state & 1U) ? -a : a;
    const double im = (state & 2U) ? -a : a;
    d.pilot_values.emplace_back(re, im);
  }
  return d;
}

std::size_t BitTensor::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

std::size_t num_data_res(const LinkConfig& cfg, const DmrsLayout& layout) {
  std::size_t n = 0;
  for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc)
    for (int l = 0; l < cfg.num_symbols; ++l)
      if (layout.is_data(sc, l)) ++n;
  return n;
}

TxGrid build_tx_grid(const LinkConfig& cfg, const DmrsLayout& layout, std::span<const std::uint8_t> payload_bits) {
  const int k = cfg.bits();
  const std::size_t expected = num_data_res(cfg, layout) * static_cast<std::size_t>(k);
  if (payload_bits.size() != expected)
    throw ArgumentError("payload has " + std::to_string(payload_bits.size()) + " bits, layout needs " +
                        std::to_string(expected));

  TxGrid tx{ResourceGrid(cfg.num_data_subcarriers, cfg.num_symbols, GridKind::TxSymbols),
            BitTensor(cfg.num_data_subcarriers, cfg.num_symbols, cfg.max_bits),
            BitTensor(cfg.num_data_subcarriers, cfg.num_symbols, cfg.max_bits)};
  std::size_t pos = 0;
  for (int l = 0; l < cfg.num_symbols; ++l) {
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc) {
      if (layout.is_pilot(sc, l)) {
        tx.grid(sc, l) = layout.pilot(sc);
      } else if (layout.is_data(sc, l)) {
        const auto bits = payload_bits.subspan(pos, static_cast<std::size_t>(k));
        tx.grid(sc, l) = qam_map(bits, cfg.modulation);
        for (int b = 0; b < k; ++b) {
          tx.label_bits(sc, l, b) = bits[static_cast<std::size_t>(b)] & 1U;
          tx.bit_mask(sc, l, b) = 1;
        }
        pos += static_cast<std::size_t>(k);
      }
    }
  }
  return tx;
}

TimeFrame ofdm_modulate(const ResourceGrid& grid, const LinkConfig& cfg) {
  if (grid.subcarriers() != cfg.num_data_subcarriers || grid.symbols() != cfg.num_symbols)
    throw ShapeError("grid shape does not match link config");
  TimeFrame frame(cfg);
  const int n = cfg.fft_size;
  const double scale = cfg.power_scale();
  std::vector<cdouble> buf(static_cast<std::size_t>(n));
  for (int l = 0; l < cfg.num_symbols; ++l) {
    std::fill(buf.begin(), buf.end(), cdouble{});
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc) buf[static_cast<std::size_t>(cfg.fft_bin(sc))] = grid(sc, l);
    dft_inplace(buf, Direction::Inverse);
    const int cp = cfg.cp_of(l);
    for (int r = 0; r < cp; ++r) frame(r, l) = scale * buf[static_cast<std::size_t>(n - cp + r)];
    for (int r = 0; r < n; ++r) frame(cp + r, l) = scale * buf[static_cast<std::size_t>(r)];
  }
  return frame;
}

ResourceGrid ofdm_demodulate(const TimeFrame& frame, const LinkConfig& cfg) {
  if (frame.rows() != cfg.frame_rows() || frame.symbols() != cfg.num_symbols)
    throw ShapeError("frame shape does not match link config");
  ResourceGrid grid(cfg.num_data_subcarriers, cfg.num_symbols, GridKind::RxSymbols);
  const int n = cfg.fft_size;
  const double inv_scale = 1.0 / cfg.power_scale();
  std::vector<cdouble> buf(static_cast<std::size_t>(n));
  for (int l = 0; l < cfg.num_symbols; ++l) {
    const int cp = cfg.cp_of(l);
    for (int r = 0; r < n; ++r) buf[static_cast<std::size_t>(r)] = frame(cp + r, l);
    dft_inplace(buf, Direction::Forward);
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc)
      grid(sc, l) = inv_scale * buf[static_cast<std::size_t>(cfg.fft_bin(sc))];
  }
  return grid;
}

std::vector<cdouble> frame_to_stream(const TimeFrame& frame, const LinkConfig& cfg) {
  std::vector<cdouble> out;
  out.reserve(static_cast<std::size_t>(cfg.stream_length()));
  for (int l = 0; l < cfg.num_symbols; ++l)
    for (int r = 0; r < frame.valid_length(l); ++r) out.push_back(frame(r, l));
  return out;
}

TimeFrame stream_to_frame(std::span<const cdouble> stream, const LinkConfig& cfg) {
  if (static_cast<int>(stream.size()) != cfg.stream_length()) throw ShapeError("stream length mismatch");
  TimeFrame frame(cfg);
  std::size_t pos = 0;
  for (int l = 0; l < cfg.num_symbols; ++l)
    for (int r = 0; r < frame.valid_length(l); ++r) frame(r, l) = stream[pos++];
  return frame;
}

}  // namespace hdrx::dsp
