#include "hdrx/hybrid_rx.hpp"

#include <algorithm>
#include <random>

#include <json.hpp>

#include "hdrx/rng.hpp"

namespace hdrx::model {

using json = nlohmann::json;

HybridConfig HybridConfig::desk(const dsp::LinkConfig& link) {
  HybridConfig c;
  c.link = link;
  return c;
}

HybridConfig HybridConfig::paper(const dsp::LinkConfig& link) {
  HybridConfig c;
  c.link = link;
  c.pre_fft_filters = {64, 128, 256};
  return c;
}

HybridConfig HybridConfig::deeprx(const dsp::LinkConfig& link) {
  HybridConfig c = desk(link);
  c.use_pre_fft = false;
  return c;
}

void HybridConfig::validate() const {
  link.validate();
  if (use_pre_fft && pre_fft_filters.empty()) throw ConfigError("pre-FFT filter list must not be empty");
  if (post_fft_filters.empty()) throw ConfigError("post-FFT filter list must not be empty");
  for (int f : pre_fft_filters)
    if (f <= 0) throw ConfigError("filter counts must be positive");
  for (int f : post_fft_filters)
    if (f <= 0) throw ConfigError("filter counts must be positive");
  if (output_bits != dsp::kMaxBitsPerSymbol) throw ConfigError("output_bits must be 8");
}

std::string HybridConfig::to_json() const {
  json j;
  j["kind"] = use_pre_fft ? "hybrid" : "deeprx";
  j["pre_fft_filters"] = use_pre_fft ? pre_fft_filters : std::vector<int>{};
  j["post_fft_filters"] = post_fft_filters;
  j["global_skip"] = global_skip;
  j["zero_init_pre_head"] = zero_init_pre_head;
  j["output_bits"] = output_bits;
  j["init_seed"] = init_seed;
  j["link"] = {{"fft_size", link.fft_size},
               {"num_data_subcarriers", link.num_data_subcarriers},
               {"num_symbols", link.num_symbols},
               {"cp_long", link.cp_long},
               {"cp_short", link.cp_short},
               {"long_cp_symbols", link.long_cp_symbols},
               {"subcarrier_spacing_hz", link.subcarrier_spacing_hz},
               {"modulation", dsp::to_string(link.modulation)}};
  return j.dump();
}

HybridConfig HybridConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  HybridConfig c;
  c.use_pre_fft = j.at("kind").get<std::string>() == "hybrid";
  c.pre_fft_filters = j.at("pre_fft_filters").get<std::vector<int>>();
  c.post_fft_filters = j.at("post_fft_filters").get<std::vector<int>>();
  c.global_skip = j.at("global_skip").get<bool>();
  c.zero_init_pre_head = j.value("zero_init_pre_head", false);
  c.output_bits = j.at("output_bits").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  const auto& l = j.at("link");
  c.link.fft_size = l.at("fft_size").get<int>();
  c.link.num_data_subcarriers = l.at("num_data_subcarriers").get<int>();
  c.link.num_symbols = l.at("num_symbols").get<int>();
  c.link.cp_long = l.at("cp_long").get<int>();
  c.link.cp_short = l.at("cp_short").get<int>();
  c.link.long_cp_symbols = l.at("long_cp_symbols").get<std::vector<int>>();
  c.link.subcarrier_spacing_hz = l.at("subcarrier_spacing_hz").get<double>();
  c.link.modulation = dsp::modulation_from_string(l.at("modulation").get<std::string>());
  return c;
}

HybridModel::HybridModel(HybridConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.use_pre_fft) {
    int ch = 2;
    for (std::size_t i = 0; i < config_.pre_fft_filters.size(); ++i) {
      pre_blocks_.emplace_back("pre.block" + std::to_string(i), ch, config_.pre_fft_filters[i]);
      ch = config_.pre_fft_filters[i];
    }
    pre_head_ = nn::ConvLayer("pre.head", 1, ch, 2);
  }
  int ch = 4;
  for (std::size_t i = 0; i < config_.post_fft_filters.size(); ++i) {
    post_blocks_.emplace_back("post.block" + std::to_string(i), ch, config_.post_fft_filters[i]);
    ch = config_.post_fft_filters[i];
  }
  post_head_ = nn::ConvLayer("post.head", 1, ch, config_.output_bits);

  for (auto& b : pre_blocks_) b.init(config_.init_seed);
  if (config_.use_pre_fft) {
    pre_head_.init_he_uniform(config_.init_seed);
    if (config_.zero_init_pre_head) pre_head_.zero();
  }
  for (auto& b : post_blocks_) b.init(config_.init_seed);
  post_head_.init_he_uniform(config_.init_seed);
}

std::vector<nn::Parameter*> HybridModel::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& b : pre_blocks_)
    for (auto* p : b.parameters()) out.push_back(p);
  if (config_.use_pre_fft) {
    out.push_back(&pre_head_.weight);
    out.push_back(&pre_head_.bias);
  }
  for (auto& b : post_blocks_)
    for (auto* p : b.parameters()) out.push_back(p);
  out.push_back(&post_head_.weight);
  out.push_back(&post_head_.bias);
  return out;
}

std::vector<const nn::Parameter*> HybridModel::parameters() const {
  auto mut = const_cast<HybridModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t HybridModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

std::size_t HybridModel::post_fft_parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->name.rfind("post.", 0) == 0) n += p->value.size();
  return n;
}

nn::Var HybridModel::pre_fft_forward(nn::Tape& tape, nn::Var z_pre) const {
  if (!config_.use_pre_fft) throw ConfigError("model has no pre-FFT network");
  nn::Var h = z_pre;
  for (const auto& b : pre_blocks_) h = b.forward(tape, h);
  return nn::conv2d(tape, h, pre_head_);
}

nn::Var HybridModel::post_fft_forward(nn::Tape& tape, nn::Var z_post) const {
  nn::Var h = z_post;
  for (const auto& b : post_blocks_) h = b.forward(tape, h);
  return nn::conv2d(tape, h, post_head_);
}

nn::Var HybridModel::forward(nn::Tape& tape, const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls) const {
  if (!config_.use_pre_fft) return forward_without_pre_fft(tape, frame, raw_ls);
  const nn::Var z = tape.input(assemble_pre_input(frame));
  nn::Var pre = pre_fft_forward(tape, z);
  if (config_.global_skip) pre = nn::add(tape, z, pre);
  const nn::Var freq = nn::fft_bridge(tape, pre, config_.link);
  return post_fft_forward(tape, assemble_post_input(tape, freq, raw_ls));
}

nn::Var HybridModel::forward_without_pre_fft(nn::Tape& tape, const dsp::TimeFrame& frame,
                                             const dsp::ResourceGrid& raw_ls) const {
  const nn::Var z = tape.input(assemble_pre_input(frame));
  const nn::Var freq = nn::fft_bridge(tape, z, config_.link);
  return post_fft_forward(tape, assemble_post_input(tape, freq, raw_ls));
}

rx::LlrGrid HybridModel::infer(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls) const {
  nn::Tape tape(false);
  return to_llr_grid(tape.value(forward(tape, frame, raw_ls)));
}

void HybridModel::save(const std::string& path, const nn::AdamState* optimizer) const {
  const auto params = parameters();
  nn::save_checkpoint(path, config_.to_json(), params, optimizer);
}

HybridModel HybridModel::load(const std::string& path) {
  const auto ck = nn::load_checkpoint(path);
  HybridConfig cfg;
  try {
    cfg = HybridConfig::from_json(ck.architecture_json);
  } catch (const json::exception& e) {
    throw IoError("checkpoint architecture header is not a model description: " + path + " (" + e.what() + ")");
  }
  HybridModel m(cfg);
  const auto params = m.parameters();
  nn::restore_parameters(ck, params);
  return m;
}

nn::Tensor assemble_pre_input(const dsp::TimeFrame& frame) {
  nn::Tensor t({frame.rows(), frame.symbols(), 2});
  for (int l = 0; l < frame.symbols(); ++l) {
    // padded rows stay zero whatever the frame holds there
    for (int r = 0; r < frame.valid_length(l); ++r) {
      t.at(r, l, 0) = frame(r, l).real();
      t.at(r, l, 1) = frame(r, l).imag();
    }
  }
  return t;
}

nn::Tensor raw_ls_tensor(const dsp::ResourceGrid& raw_ls) {
  nn::Tensor t({raw_ls.subcarriers(), raw_ls.symbols(), 2});
  for (int sc = 0; sc < raw_ls.subcarriers(); ++sc) {
    for (int l = 0; l < raw_ls.symbols(); ++l) {
      t.at(sc, l, 0) = raw_ls(sc, l).real();
      t.at(sc, l, 1) = raw_ls(sc, l).imag();
    }
  }
  return t;
}

nn::Var assemble_post_input(nn::Tape& tape, nn::Var freq, const dsp::ResourceGrid& raw_ls) {
  const auto& f = tape.value(freq);
  if (f.rank() != 3 || f.dim(0) != raw_ls.subcarriers() || f.dim(1) != raw_ls.symbols() || f.dim(2) != 2)
    throw ShapeError("post-FFT input " + f.shape_string() + " does not match the LS grid");
  return nn::concat_channels(tape, freq, tape.constant(raw_ls_tensor(raw_ls)));
}

rx::LlrGrid hybrid_forward(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls, const HybridModel& model) {
  return model.infer(frame, raw_ls);
}

rx::LlrGrid deeprx_forward(const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls, const HybridModel& model) {
  nn::Tape tape(false);
  return to_llr_grid(tape.value(model.forward_without_pre_fft(tape, frame, raw_ls)));
}

rx::LlrGrid to_llr_grid(const nn::Tensor& logits) {
  rx::LlrGrid g(logits.dim(0), logits.dim(1), logits.dim(2));
  std::copy(logits.values().begin(), logits.values().end(), g.values.begin());
  return g;
}

nn::GradCheckReport grad_check_model(HybridModel& model, const dsp::TimeFrame& frame, const dsp::ResourceGrid& raw_ls,
                                     std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask,
                                     const nn::GradCheckOptions& options) {
  auto params = model.parameters();
  // Zero biases leave ReLU inputs exactly on the kink over zero-padded rows, and a zeroed
  // pre-FFT head blocks every gradient upstream of it; move all-zero tensors off first.
  Rng rng(derive_seed(options.seed, 0, Stream::Init));
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto* p : params) {
    const auto& v = p->value.values();
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
      for (auto& x : p->value.values()) x = jitter(rng);
  }
  const auto loss = [&](bool with_grad) {
    nn::Tape tape(with_grad);
    const auto l = nn::bce_with_logits(tape, model.forward(tape, frame, raw_ls), labels, mask);
    const double v = tape.value(l)[0];
    if (with_grad) {
      tape.backward(l);
      nn::accumulate_grads(tape, params);
    }
    return v;
  };
  return nn::grad_check(loss, params, options);
}

dsp::BitTensor llr_to_bits(const rx::LlrGrid& llr, const dsp::BitTensor& mask) {
  if (llr.values.size() != mask.values.size()) throw ShapeError("LLR grid and mask sizes differ");
  dsp::BitTensor bits(mask.subcarriers, mask.symbols, mask.depth);
  for (std::size_t i = 0; i < llr.values.size(); ++i) bits.values[i] = (mask.values[i] && llr.values[i] > 0.0) ? 1 : 0;
  return bits;
}

}  // namespace hdrx::model
