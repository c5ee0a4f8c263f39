#pragma once

// Complex baseband primitives: DFT, QAM, CP-OFDM framing, DMRS layout and
// transmit grid assembly.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hdrx/common.hpp"

namespace hdrx::dsp {

enum class Modulation { Qam16, Qam64 };

int bits_per_symbol(Modulation m);
std::string to_string(Modulation m);
Modulation modulation_from_string(const std::string& s);

inline constexpr int kMaxBitsPerSymbol = 8;

/// Numerology of one TTI. Data subcarriers form a contiguous block split
/// around an unused DC bin (lower half gets floor(N_D/2)).
struct LinkConfig {
  int fft_size = 64;
  int num_data_subcarriers = 36;
  int num_symbols = 14;
  int cp_long = 6;
  int cp_short = 5;
  std::vector<int> long_cp_symbols{0, 7};
  double subcarrier_spacing_hz = 15e3;
  Modulation modulation = Modulation::Qam16;
  int max_bits = kMaxBitsPerSymbol;

  /// Desk-scale profile: N=64, N_D=36, CP 6/5.
  static LinkConfig mini(Modulation m = Modulation::Qam16);
  /// Full 5 MHz profile: N=512, N_D=312, CP 40/36.
  static LinkConfig paper(Modulation m = Modulation::Qam16);
  static LinkConfig profile(const std::string& name, Modulation m);

  /// Throws ConfigError on any invariant violation.
  void validate() const;

  int cp_of(int symbol) const;
  int frame_rows() const { return cp_long + fft_size; }
  int bits() const { return bits_per_symbol(modulation); }
  double sample_rate_hz() const { return fft_size * subcarrier_spacing_hz; }
  /// FFT bin carrying data subcarrier index `sc` (ascending frequency order).
  int fft_bin(int sc) const;
  /// Time-domain scale applied after the 1/N inverse DFT so that the active
  /// samples have unit average power: N / sqrt(N_D).
  double power_scale() const;
  /// Start of symbol `l` in the continuous transmit stream.
  int stream_offset(int symbol) const;
  int stream_length() const;
};

bool is_power_of_two(std::size_t n);

enum class Direction { Forward, Inverse };

/// Radix-2 in-place transform. Forward: X_k = sum x_n e^{-j2pi kn/N};
/// inverse includes the 1/N factor.
void dft_inplace(std::span<cdouble> x, Direction dir);
std::vector<cdouble> dft(std::span<const cdouble> x, Direction dir);

/// Gray-mapped constellation (TS 38.211 5.1.4), unit average energy.
/// Point index i carries bits b0..b_{k-1} with b0 the MSB of i.
const std::vector<cdouble>& constellation(Modulation m);
cdouble qam_map(std::span<const std::uint8_t> bits, Modulation m);
/// Nearest point; ties resolve to the smaller bit pattern.
std::vector<std::uint8_t> qam_hard_demap(cdouble symbol, Modulation m);
int qam_hard_index(cdouble symbol, Modulation m);

enum class GridKind { TxSymbols, RxSymbols, ChannelEstimate };

/// Complex values indexed by (subcarrier, OFDM symbol).
class ResourceGrid {
 public:
  ResourceGrid() = default;
  ResourceGrid(int subcarriers, int symbols, GridKind kind);

  int subcarriers() const { return subcarriers_; }
  int symbols() const { return symbols_; }
  GridKind kind() const { return kind_; }
  void set_kind(GridKind k) { kind_ = k; }

  cdouble& operator()(int sc, int sym) { return data_[static_cast<std::size_t>(sc) * symbols_ + sym]; }
  cdouble operator()(int sc, int sym) const { return data_[static_cast<std::size_t>(sc) * symbols_ + sym]; }

  std::span<cdouble> data() { return data_; }
  std::span<const cdouble> data() const { return data_; }

  bool same_shape(const ResourceGrid& other) const {
    return subcarriers_ == other.subcarriers_ && symbols_ == other.symbols_;
  }

 private:
  int subcarriers_ = 0;
  int symbols_ = 0;
  GridKind kind_ = GridKind::TxSymbols;
  std::vector<cdouble> data_;
};

/// Per-TTI time samples, (cp_long + N) rows by N_symb columns. Column l holds
/// CP and body of symbol l in rows [0, cp_of(l) + N); remaining rows are zero.
class TimeFrame {
 public:
  TimeFrame() = default;
  explicit TimeFrame(const LinkConfig& cfg);

  int rows() const { return rows_; }
  int symbols() const { return symbols_; }
  int valid_length(int sym) const { return valid_length_[sym]; }

  cdouble& operator()(int row, int sym) { return samples_[static_cast<std::size_t>(row) * symbols_ + sym]; }
  cdouble operator()(int row, int sym) const { return samples_[static_cast<std::size_t>(row) * symbols_ + sym]; }

  std::span<cdouble> samples() { return samples_; }
  std::span<const cdouble> samples() const { return samples_; }

  /// Mean |x|^2 over valid (non-padded) samples.
  double active_power() const;

 private:
  int rows_ = 0;
  int symbols_ = 0;
  std::vector<int> valid_length_;
  std::vector<cdouble> samples_;
};

/// Single-symbol DMRS: pilots on every `pilot_stride`-th subcarrier of
/// `pilot_symbol`; the other subcarriers of that symbol are reserved (zero).
struct DmrsLayout {
  int pilot_symbol = 2;
  int pilot_stride = 2;
  std::uint64_t seed = 0;
  std::vector<cdouble> pilot_values;  // one per pilot subcarrier, |p| = 1

  static DmrsLayout make(const LinkConfig& cfg, std::uint64_t seed, int pilot_symbol = 2,
                         int pilot_stride = 2);

  bool is_pilot(int sc, int sym) const { return sym == pilot_symbol && sc % pilot_stride == 0; }
  bool is_reserved(int sc, int sym) const { return sym == pilot_symbol && sc % pilot_stride != 0; }
  bool is_data(int /*sc*/, int sym) const { return sym != pilot_symbol; }
  cdouble pilot(int sc) const { return pilot_values[static_cast<std::size_t>(sc / pilot_stride)]; }
  int num_pilots() const { return static_cast<int>(pilot_values.size()); }
};

/// Dense 0/1 tensor of shape N_D x N_symb x N_B.
struct BitTensor {
  int subcarriers = 0;
  int symbols = 0;
  int depth = 0;
  std::vector<std::uint8_t> values;

  BitTensor() = default;
  BitTensor(int sc, int sym, int d)
      : subcarriers(sc), symbols(sym), depth(d), values(static_cast<std::size_t>(sc) * sym * d, 0) {}

  std::size_t index(int sc, int sym, int b) const {
    return (static_cast<std::size_t>(sc) * symbols + sym) * depth + b;
  }
  std::uint8_t& operator()(int sc, int sym, int b) { return values[index(sc, sym, b)]; }
  std::uint8_t operator()(int sc, int sym, int b) const { return values[index(sc, sym, b)]; }
  std::size_t count() const;
};

std::size_t num_data_res(const LinkConfig& cfg, const DmrsLayout& layout);

struct TxGrid {
  ResourceGrid grid;
  BitTensor label_bits;
  BitTensor bit_mask;
};

/// Maps payload bits onto data REs in (symbol-major, subcarrier-minor) order.
TxGrid build_tx_grid(const LinkConfig& cfg, const DmrsLayout& layout,
                     std::span<const std::uint8_t> payload_bits);

TimeFrame ofdm_modulate(const ResourceGrid& grid, const LinkConfig& cfg);
ResourceGrid ofdm_demodulate(const TimeFrame& frame, const LinkConfig& cfg);

/// Flattens a frame into the continuous transmit stream (CP+body per symbol).
std::vector<cdouble> frame_to_stream(const TimeFrame& frame, const LinkConfig& cfg);
TimeFrame stream_to_frame(std::span<const cdouble> stream, const LinkConfig& cfg);

}  // namespace hdrx::dsp
