#include "hdrx/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "hdrx/rng.hpp"

namespace hdrx::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void add_into(Tensor& dst, const Tensor& src, double scale = 1.0) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + " expects a rank-3 tensor, got " + t.shape_string());
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ')';
  return os.str();
}

ConvLayer::ConvLayer(const std::string& name, int kernel_size, int in_channels, int out_channels)
    : weight(name + ".weight", {kernel_size, kernel_size, in_channels, out_channels}),
      bias(name + ".bias", {out_channels}),
      kernel_size_(kernel_size),
      in_channels_(in_channels),
      out_channels_(out_channels) {
  if (kernel_size <= 0 || kernel_size % 2 == 0) throw ConfigError("conv kernel size must be odd and positive");
  if (in_channels <= 0 || out_channels <= 0) throw ConfigError("conv channel counts must be positive");
}

void ConvLayer::init_he_uniform(std::uint64_t seed) {
  Rng rng(name_seed(weight.name, seed));
  const double fan_in = static_cast<double>(kernel_size_ * kernel_size_ * in_channels_);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight.value.values()) w = dist(rng);
  bias.value.fill(0.0);
}

void ConvLayer::zero() {
  weight.value.fill(0.0);
  bias.value.fill(0.0);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}); }

Var Tape::input(Tensor value) { return push(std::move(value), recording_, {}); }

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> adjoint) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_ && requires_grad;
  if (n.requires_grad) n.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_slot(Var v) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_slot(v); }

Tensor& Tape::param_grad(const Parameter& p) {
  auto it = param_grads_.find(&p);
  if (it == param_grads_.end()) it = param_grads_.emplace(&p, Tensor(p.value.shape())).first;
  return it->second;
}

const Tensor* Tape::find_param_grad(const Parameter& p) const {
  auto it = param_grads_.find(&p);
  return it == param_grads_.end() ? nullptr : &it->second;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw ShapeError("backward(root) needs a scalar root; pass an upstream tensor");
  backward(root, Tensor(value(root).shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& upstream) {
  if (!recording_) throw ArgumentError("backward on a non-recording tape");
  if (!upstream.same_shape(value(root))) throw ShapeError("upstream gradient shape mismatch");
  add_into(grad_slot(root), upstream);
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.adjoint || n.grad.empty()) continue;
    n.adjoint(*this, n.grad);
  }
}

Var conv2d(Tape& tape, Var x, const ConvLayer& layer) {
  const Tensor& in = tape.value(x);
  require_rank3(in, "conv2d");
  if (in.dim(2) != layer.in_channels())
    throw ShapeError("conv2d " + layer.weight.name + ": input has " + std::to_string(in.dim(2)) +
                     " channels, layer expects " + std::to_string(layer.in_channels()));
  const int h = in.dim(0);
  const int w = in.dim(1);
  const int cin = layer.in_channels();
  const int cout = layer.out_channels();
  const int k = layer.kernel_size();
  const int pad = k / 2;
  const Eigen::Index pixels = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index patch = static_cast<Eigen::Index>(k) * k * cin;

  ConstMapMat kernel(layer.weight.value.data(), patch, cout);
  Eigen::Map<const Eigen::RowVectorXd> bias(layer.bias.value.data(), cout);

  Tensor out({h, w, cout});
  MapMat y(out.data(), pixels, cout);

  auto col = std::make_shared<RowMat>();
  if (k == 1) {
    y.noalias() = ConstMapMat(in.data(), pixels, cin) * kernel;
  } else {
    col->resize(pixels, patch);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double* dst = col->data() + (static_cast<Eigen::Index>(r) * w + c) * patch;
        for (int dr = 0; dr < k; ++dr) {
          const int rr = r + dr - pad;
          for (int dc = 0; dc < k; ++dc, dst += cin) {
            const int cc = c + dc - pad;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) {
              std::memset(dst, 0, sizeof(double) * static_cast<std::size_t>(cin));
            } else {
              std::memcpy(dst, in.data() + (static_cast<std::size_t>(rr) * w + cc) * cin,
                          sizeof(double) * static_cast<std::size_t>(cin));
            }
          }
        }
      }
    }
    y.noalias() = *col * kernel;
  }
  y.rowwise() += bias;

  const bool need_input_grad = tape.requires_grad(x);
  return tape.push(std::move(out), true, [x, &layer, col, h, w, cin, cout, k, pad, pixels, patch,
                                          need_input_grad](Tape& t, const Tensor& g) {
    ConstMapMat dy(g.data(), pixels, cout);
    ConstMapMat kernel(layer.weight.value.data(), patch, cout);
    Tensor& gw = t.param_grad(layer.weight);
    Tensor& gb = t.param_grad(layer.bias);
    MapMat dw(gw.data(), patch, cout);
    Eigen::Map<Eigen::RowVectorXd> db(gb.data(), cout);
    db += dy.colwise().sum();
    if (k == 1) {
      ConstMapMat xin(t.value(x).data(), pixels, cin);
      dw.noalias() += xin.transpose() * dy;
      if (need_input_grad) {
        MapMat dx(t.grad_slot(x).data(), pixels, cin);
        dx.noalias() += dy * kernel.transpose();
      }
      return;
    }
    dw.noalias() += col->transpose() * dy;
    if (!need_input_grad) return;
    const RowMat dcol = dy * kernel.transpose();
    Tensor& gx = t.grad_slot(x);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double* src = dcol.data() + (static_cast<Eigen::Index>(r) * w + c) * patch;
        for (int dr = 0; dr < k; ++dr) {
          const int rr = r + dr - pad;
          for (int dc = 0; dc < k; ++dc, src += cin) {
            const int cc = c + dc - pad;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
            double* dst = gx.data() + (static_cast<std::size_t>(rr) * w + cc) * cin;
            for (int ch = 0; ch < cin; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  });
}

Var relu(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return tape.push(std::move(out), tape.requires_grad(x), [x](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(x);
    Tensor& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) gx[i] += g[i];
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  if (!va.same_shape(vb)) throw ShapeError("add: " + va.shape_string() + " vs " + vb.shape_string());
  Tensor out = va;
  add_into(out, vb);
  return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b), [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) add_into(t.grad_slot(a), g);
    if (t.requires_grad(b)) add_into(t.grad_slot(b), g);
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  require_rank3(va, "concat_channels");
  require_rank3(vb, "concat_channels");
  if (va.dim(0) != vb.dim(0) || va.dim(1) != vb.dim(1))
    throw ShapeError("concat_channels: spatial mismatch " + va.shape_string() + " vs " + vb.shape_string());
  const int ca = va.dim(2);
  const int cb = vb.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(va.dim(0)) * va.dim(1);
  Tensor out({va.dim(0), va.dim(1), ca + cb});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(va.data() + p * ca, ca, out.data() + p * (ca + cb));
    std::copy_n(vb.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
  }
  return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                   [a, b, ca, cb, pixels](Tape& t, const Tensor& g) {
                     if (t.requires_grad(a)) {
                       Tensor& ga = t.grad_slot(a);
                       for (std::size_t p = 0; p < pixels; ++p)
                         for (int c = 0; c < ca; ++c) ga[p * ca + c] += g[p * (ca + cb) + c];
                     }
                     if (t.requires_grad(b)) {
                       Tensor& gb = t.grad_slot(b);
                       for (std::size_t p = 0; p < pixels; ++p)
                         for (int c = 0; c < cb; ++c) gb[p * cb + c] += g[p * (ca + cb) + ca + c];
                     }
                   });
}

Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
  const Tensor& in = tape.value(x);
  if (!in.same_shape(weights)) throw ShapeError("weighted_sum: weight shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * weights[i];
  return tape.push(Tensor({1}, s), tape.requires_grad(x), [x, weights](Tape& t, const Tensor& g) {
    add_into(t.grad_slot(x), weights, g[0]);
  });
}

ResBlock::ResBlock(const std::string& name, int in_channels, int out_channels, int kernel_size)
    : conv1(name + ".conv1", kernel_size, in_channels, out_channels),
      conv2(name + ".conv2", kernel_size, out_channels, out_channels) {
  if (in_channels != out_channels) projection.emplace(name + ".proj", 1, in_channels, out_channels);
}

Var ResBlock::forward(Tape& tape, Var x) const {
  Var h = relu(tape, x);
  h = conv2d(tape, h, conv1);
  h = relu(tape, h);
  h = conv2d(tape, h, conv2);
  const Var shortcut = projection ? conv2d(tape, x, *projection) : x;
  return add(tape, shortcut, h);
}

std::vector<Parameter*> ResBlock::parameters() {
  std::vector<Parameter*> out{&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias};
  if (projection) {
    out.push_back(&projection->weight);
    out.push_back(&projection->bias);
  }
  return out;
}

std::vector<const Parameter*> ResBlock::parameters() const {
  std::vector<const Parameter*> out{&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias};
  if (projection) {
    out.push_back(&projection->weight);
    out.push_back(&projection->bias);
  }
  return out;
}

void ResBlock::init(std::uint64_t seed) {
  conv1.init_he_uniform(seed);
  conv2.init_he_uniform(seed);
  if (projection) projection->init_he_uniform(seed);
}

Tensor fft_bridge_forward(const Tensor& z, const dsp::LinkConfig& cfg) {
  require_rank3(z, "fft_bridge");
  if (z.dim(0) != cfg.frame_rows() || z.dim(1) != cfg.num_symbols || z.dim(2) != 2)
    throw ShapeError("fft_bridge: input " + z.shape_string() + " does not match the link config");
  const int n = cfg.fft_size;
  const double inv_scale = 1.0 / cfg.power_scale();
  Tensor out({cfg.num_data_subcarriers, cfg.num_symbols, 2});
  std::vector<cdouble> buf(static_cast<std::size_t>(n));
  for (int l = 0; l < cfg.num_symbols; ++l) {
    const int cp = cfg.cp_of(l);
    for (int r = 0; r < n; ++r) buf[static_cast<std::size_t>(r)] = cdouble(z.at(cp + r, l, 0), z.at(cp + r, l, 1));
    dsp::dft_inplace(buf, dsp::Direction::Forward);
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc) {
      const cdouble v = inv_scale * buf[static_cast<std::size_t>(cfg.fft_bin(sc))];
      out.at(sc, l, 0) = v.real();
      out.at(sc, l, 1) = v.imag();
    }
  }
  return out;
}

Tensor fft_bridge_backward(const Tensor& upstream, const dsp::LinkConfig& cfg) {
  require_rank3(upstream, "fft_bridge_backward");
  if (upstream.dim(0) != cfg.num_data_subcarriers || upstream.dim(1) != cfg.num_symbols || upstream.dim(2) != 2)
    throw ShapeError("fft_bridge_backward: gradient " + upstream.shape_string() + " does not match the link config");
  const int n = cfg.fft_size;
  // adjoint of (1/c) DFT restricted to the occupied bins: (N/c) IDFT
  const double scale = static_cast<double>(n) / cfg.power_scale();
  Tensor gz({cfg.frame_rows(), cfg.num_symbols, 2});
  std::vector<cdouble> buf(static_cast<std::size_t>(n));
  for (int l = 0; l < cfg.num_symbols; ++l) {
    std::fill(buf.begin(), buf.end(), cdouble{});
    for (int sc = 0; sc < cfg.num_data_subcarriers; ++sc)
      buf[static_cast<std::size_t>(cfg.fft_bin(sc))] = cdouble(upstream.at(sc, l, 0), upstream.at(sc, l, 1));
    dsp::dft_inplace(buf, dsp::Direction::Inverse);
    const int cp = cfg.cp_of(l);
    for (int r = 0; r < n; ++r) {
      gz.at(cp + r, l, 0) = scale * buf[static_cast<std::size_t>(r)].real();
      gz.at(cp + r, l, 1) = scale * buf[static_cast<std::size_t>(r)].imag();
    }
  }
  return gz;
}

Var fft_bridge(Tape& tape, Var z, const dsp::LinkConfig& cfg) {
  return tape.push(fft_bridge_forward(tape.value(z), cfg), tape.requires_grad(z), [z, cfg](Tape& t, const Tensor& g) {
    add_into(t.grad_slot(z), fft_bridge_backward(g, cfg));
  });
}

BceResult bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels,
                          std::span<const std::uint8_t> mask) {
  if (labels.size() != logits.size() || mask.size() != logits.size())
    throw ShapeError("bce_with_logits: labels/mask size must equal the logit count");
  const auto count = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (count == 0.0) throw ArgumentError("bce_with_logits: empty mask");
  BceResult r;
  r.grad = Tensor(logits.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    const double x = logits[i];
    const double b = labels[i] ? 1.0 : 0.0;
    // max(x, 0) - x b + log(1 + e^{-|x|})
    acc += std::max(x, 0.0) - x * b + std::log1p(std::exp(-std::abs(x)));
    const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    r.grad[i] = (sig - b) / count;
  }
  r.loss = acc / count;
  return r;
}

Var bce_with_logits(Tape& tape, Var logits, std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask) {
  auto res = bce_with_logits(tape.value(logits), labels, mask);
  auto grad = std::make_shared<Tensor>(std::move(res.grad));
  return tape.push(Tensor({1}, res.loss), tape.requires_grad(logits), [logits, grad](Tape& t, const Tensor& g) {
    add_into(t.grad_slot(logits), *grad, g[0]);
  });
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("Adam state does not match the parameter list");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!m.same_shape(p.value)) throw ShapeError("Adam moment shape mismatch for " + p.name);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double grad_norm(std::span<Parameter* const> params) {
  double acc = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.values()) acc += g * g;
  return std::sqrt(acc);
}

void clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto* p : params)
    for (double& g : p->grad.values()) g *= s;
}

double fft_bridge_adjoint_error(const dsp::LinkConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor x({cfg.frame_rows(), cfg.num_symbols, 2});
  Tensor y({cfg.num_data_subcarriers, cfg.num_symbols, 2});
  for (auto& v : x.values()) v = n01(rng);
  for (auto& v : y.values()) v = n01(rng);
  const Tensor ax = fft_bridge_forward(x, cfg);
  const Tensor aty = fft_bridge_backward(y, cfg);
  double lhs = 0.0;
  double rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += ax[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

void accumulate_grads(const Tape& tape, std::span<Parameter* const> params, double scale) {
  for (auto* p : params)
    if (const Tensor* g = tape.find_param_grad(*p)) add_into(p->grad, *g, scale);
}

GradCheckReport grad_check(const std::function<double(bool)>& loss, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  zero_grads(params);
  const double base = loss(true);
  // Central differences cannot resolve gradients below the loss roundoff divided by the step.
  const auto floor_at = [&](double h) {
    const double roundoff = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)) / h;
    return std::max(options.denominator_floor, 10.0 * roundoff / options.tolerance);
  };
  const auto rel = [](double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
  };
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), static_cast<std::size_t>(options.coords_per_param)));

    GradCheckEntry entry{p.name, 0, 0.0, 0};
    for (std::size_t j : idx) {
      const double orig = p.value[j];
      const auto central = [&](double h) {
        p.value[j] = orig + h;
        const double up = loss(false);
        p.value[j] = orig - h;
        const double down = loss(false);
        p.value[j] = orig;
        return (up - down) / (2.0 * h);
      };
      const double a = analytic[pi][j];
      double h = options.step;
      double numeric = central(h);
      double err = rel(a, numeric, floor_at(h));
      // A stencil straddling ReLU kinks gives estimates that drift with the step.
      // Halve until two successive estimates agree to tol/100; a wrong adjoint still fails.
      for (int k = 0; k < options.max_refinements && err >= 0.1 * options.tolerance; ++k) {
        const double finer = central(h / 2.0);
        if (rel(numeric, finer, floor_at(h / 2.0)) < 0.01 * options.tolerance) break;
        h /= 2.0;
        numeric = finer;
        err = rel(a, numeric, floor_at(h));
        if (k == 0) ++entry.refined;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.coords;
    }
    report.coords += entry.coords;
    report.refined += entry.refined;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace hdrx::nn
