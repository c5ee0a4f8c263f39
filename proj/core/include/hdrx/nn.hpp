#pragma once

// Minimal reverse-mode differentiation engine over real double tensors.
//
// Activations use (height, width, channels) layout with channels fastest.
// A Tape records the forward pass of one example; Tape::backward replays the
// recorded adjoints in reverse. Model parameters are never written by the
// tape: parameter gradients accumulate in tape-owned buffers, so a model can
// be shared by several tapes (threads) and stays immutable during a pass.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdrx/common.hpp"
#include "hdrx/dsp.hpp"

namespace hdrx::nn {

// Cache-line aligned storage. Vectorized reductions peel differently depending on
// the start address, so fixed alignment keeps results bit-identical run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// (h, w, c) element of a rank-3 tensor.
  double& at(int h, int w, int c) { return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c]; }
  double at(int h, int w, int c) const {
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }

  void fill(double v);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_string() const;

 private:
  std::vector<int> shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Same-padded, stride-1 2D convolution. Kernel layout (kh, kw, in, out).
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(const std::string& name, int kernel_size, int in_channels, int out_channels);

  int kernel_size() const { return kernel_size_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

  /// He-uniform kernels (bound sqrt(6 / fan_in)), zero bias; seeded by name.
  void init_he_uniform(std::uint64_t seed);
  void zero();

  Parameter weight;
  Parameter bias;

 private:
  int kernel_size_ = 0;
  int in_channels_ = 0;
  int out_channels_ = 0;
};

class Tape;

/// Handle to a tape node.
struct Var {
  int id = -1;
};

class Tape {
 public:
  /// A non-recording tape evaluates forward only (no adjoint bookkeeping).
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  Var input(Tensor value);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Adds a node. `adjoint` receives the tape and must add into the gradients
  /// of the node's inputs (via grad_slot) and parameters (via param_grad).
  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor& upstream)> adjoint);

  /// Seeds d(root) = 1 for a scalar root, or `upstream` for a tensor root.
  void backward(Var root);
  void backward(Var root, const Tensor& upstream);

  Tensor& grad_slot(Var v);
  Tensor& param_grad(const Parameter& p);
  /// Parameter gradient if this tape touched `p`, else nullptr.
  const Tensor* find_param_grad(const Parameter& p) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Tensor&)> adjoint;
  };
  bool recording_;
  std::vector<Node> nodes_;
  std::map<const Parameter*, Tensor> param_grads_;
};

Var conv2d(Tape& tape, Var x, const ConvLayer& layer);
Var relu(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var concat_channels(Tape& tape, Var a, Var b);
/// sum_i x_i w_i as a scalar node (test losses).
Var weighted_sum(Tape& tape, Var x, const Tensor& weights);

/// Pre-activation residual block without normalisation:
/// out = shortcut(x) + conv2(relu(conv1(relu(x)))), shortcut is identity or
/// a 1x1 projection when the channel count changes.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in_channels, int out_channels, int kernel_size = 3);

  Var forward(Tape& tape, Var x) const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void init(std::uint64_t seed);

  ConvLayer conv1;
  ConvLayer conv2;
  std::optional<ConvLayer> projection;
};

/// Fixed CP-removal + DFT layer: (cp_long + N) x N_symb x 2 real tensor ->
/// N_D x N_symb x 2, identical to ofdm_demodulate on the complex frame.
Tensor fft_bridge_forward(const Tensor& z, const dsp::LinkConfig& cfg);
/// Exact adjoint of fft_bridge_forward.
Tensor fft_bridge_backward(const Tensor& upstream, const dsp::LinkConfig& cfg);
Var fft_bridge(Tape& tape, Var z, const dsp::LinkConfig& cfg);
/// Inner-product test |<Ax, y> - <x, A^T y>| / |<Ax, y>| on random x, y.
double fft_bridge_adjoint_error(const dsp::LinkConfig& cfg, std::uint64_t seed);

struct BceResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

/// Masked mean binary cross-entropy on logits (labels and mask are 0/1 with
/// the logits' element count). Throws ArgumentError on an empty mask.
BceResult bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels,
                          std::span<const std::uint8_t> mask);
Var bce_with_logits(Tape& tape, Var logits, std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// One bias-corrected Adam update of `params` from their `grad` slots.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Global L2 norm of all parameter gradients.
double grad_norm(std::span<Parameter* const> params);
void clip_grad_norm(std::span<Parameter* const> params, double max_norm);
void zero_grads(std::span<Parameter* const> params);
/// Adds tape-held parameter gradients into Parameter::grad (scaled).
void accumulate_grads(const Tape& tape, std::span<Parameter* const> params, double scale = 1.0);

struct GradCheckOptions {
  double step = 1e-5;
  int coords_per_param = 50;
  double tolerance = 1e-4;
  double denominator_floor = 1e-8;
  std::uint64_t seed = 1234;
  /// Step halvings allowed when the estimate is not stable under refinement.
  int max_refinements = 8;
};

struct GradCheckEntry {
  std::string name;
  int coords = 0;
  double max_rel_error = 0.0;
  int refined = 0;  // coordinates whose stencil crossed a non-smooth point
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  int coords = 0;
  int refined = 0;
  bool passed = false;
};

/// `loss(true)` must run forward + backward, leaving analytic gradients in
/// the parameters' grad slots (after zeroing); `loss(false)` forward only.
/// Compares against central differences on a random coordinate subsample;
/// where the estimate is unstable under step halving the step is refined.
GradCheckReport grad_check(const std::function<double(bool)>& loss, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

/// Checkpoint file: little-endian, "HDRXCKPT", u32 version, u32 JSON length,
/// JSON architecture header, u32 parameter count, then per parameter
/// {u32 name length, name, u32 rank, u32 dims..., f64 values...}, then a u8
/// optimizer flag and, when set, {u64 step, f64 lr, beta1, beta2, eps,
/// f64 moments (m then v) per parameter in the same order}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string architecture_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(const std::string& path, const std::string& architecture_json,
                     std::span<const Parameter* const> params, const AdamState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);
/// Copies tensors into `params` by name; throws IoError on missing names or
/// shape mismatch.
void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params);

}  // namespace hdrx::nn
