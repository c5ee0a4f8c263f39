#pragma once

// HybridDeepRx: time-domain ResNet -> fixed FFT bridge -> frequency-domain
// ResNet with raw DMRS estimates -> N_B LLRs per RE. With `use_pre_fft`
// disabled the same class is the frequency-only DeepRx baseline.

#include <cstdint>
#include <string>
#include <vector>

#include "hdrx/baseline_rx.hpp"
#include "hdrx/dsp.hpp"
#include "hdrx/nn.hpp"

namespace hdrx::model {

struct HybridConfig {
  dsp::LinkConfig link = dsp::LinkConfig::mini();
  std::vector<int> pre_fft_filters{8, 16, 32};
  std::vector<int> post_fft_filters{32, 64, 64, 32, 16};
  bool use_pre_fft = true;
  /// Bridge input is Z_pre + preFFT(Z_pre) instead of preFFT(Z_pre).
  bool global_skip = true;
  /// Start the pre-FFT head at zero so that, with the global skip, training
  /// begins from the DeepRx function and learns the time-domain correction.
  bool zero_init_pre_head = true;
  int output_bits = dsp::kMaxBitsPerSymbol;
  std::uint64_t init_seed = 7;

  static HybridConfig desk(const dsp::LinkConfig& link);
  /// 64/128/256 pre-FFT filters on the full-size numerology.
  static HybridConfig paper(const dsp::LinkConfig& link);
  static HybridConfig deeprx(const dsp::LinkConfig& link);

  void validate() const;
  std::string to_json() const;
  static HybridConfig from_json(const std::string& json);
};

class HybridModel {
 public:
  explicit HybridModel(HybridConfig config);

  const HybridConfig& config() const { return config_; }

  /// Ordered parameter list (stable across runs; checkpoint order).
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t post_fft_parameter_count() const;

  /// Pre-FFT ResNet plus 2-filter 1x1 head; output has the input's shape.
  nn::Var pre_fft_forward(nn::Tape& tape, nn::Var z_pre) const;
  /// Post-FFT ResNet plus N_B-filter 1x1 head.
  nn::Var post_fft_forward(nn::Tape& tape, nn::Var z_post) const;

  /// Full pipeline on the tape; returns the N_D x N_symb x N_B logits.
  nn::Var forward(nn::Tape& tape, const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls) const;
  /// DeepRx path of this model: the bridge consumes the raw frame directly.
  nn::Var forward_without_pre_fft(nn::Tape& tape, const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls) const;

  rx::LlrGrid infer(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls) const;

  void save(const std::string& path, const nn::AdamState* optimizer = nullptr) const;
  /// Restores a model; throws IoError on a malformed architecture header or
  /// missing parameters.
  static HybridModel load(const std::string& path);

  nn::ConvLayer& pre_fft_head() { return pre_head_; }
  std::vector<nn::ResBlock>& pre_fft_blocks() { return pre_blocks_; }

 private:
  HybridConfig config_;
  std::vector<nn::ResBlock> pre_blocks_;
  nn::ConvLayer pre_head_;
  std::vector<nn::ResBlock> post_blocks_;
  nn::ConvLayer post_head_;
};

/// Channels [Re, Im] of the padded time frame, (cp_long + N) x N_symb x 2.
nn::Tensor assemble_pre_input(const dsp::TimeFrame& frame);

/// Channels [Re Y, Im Y, Re H_ls, Im H_ls], N_D x N_symb x 4.
nn::Var assemble_post_input(nn::Tape& tape, nn::Var freq, const dsp::ResourceGrid& raw_ls);
nn::Tensor raw_ls_tensor(const dsp::ResourceGrid& raw_ls);

rx::LlrGrid hybrid_forward(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls, const HybridModel& model);
rx::LlrGrid deeprx_forward(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls, const HybridModel& model);

rx::LlrGrid to_llr_grid(const nn::Tensor& logits);

/// Finite-difference check of one TTI's masked BCE against every parameter.
nn::GradCheckReport grad_check_model(HybridModel& model, const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls,
                                     std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask,
                                     const nn::GradCheckOptions& options = {});

/// bit = 1 iff LLR > 0 on masked positions (ties decide 0); 0 elsewhere.
dsp::BitTensor llr_to_bits(const rx::LlrGrid& llr, const dsp::BitTensor& mask);

}  // namespace hdrx::model
