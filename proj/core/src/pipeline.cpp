#include "hdrx/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "hdrx/hash.hpp"
#include "hdrx/rng.hpp"

namespace hdrx::pipeline {

DatasetSpec DatasetSpec::mini_train(dsp::Modulation m, double backoff_db) {
  DatasetSpec s;
  s.modulation = m;
  s.num_ttis = 2000;
  s.snr_mode = SnrMode::Uniform;
  for (std::uint64_t i = 1; i <= 30; ++i) s.pa_seeds.push_back(i);
  s.backoff_db = backoff_db;
  s.master_seed = 1001;
  return s;
}

DatasetSpec DatasetSpec::mini_val(dsp::Modulation m, double backoff_db) {
  DatasetSpec s;
  s.modulation = m;
  s.num_ttis = 1600;
  s.snr_mode = SnrMode::Grid;
  s.snr_step_db = 2.0;
  for (std::uint64_t i = 101; i <= 110; ++i) s.pa_seeds.push_back(i);
  s.backoff_db = backoff_db;
  s.master_seed = 2002;
  return s;
}

void DatasetSpec::validate() const {
  link().validate();
  if (num_ttis <= 0) throw ConfigError("num_ttis must be positive");
  if (!(snr_lo_db <= snr_hi_db)) throw ConfigError("SNR range must satisfy lo <= hi");
  if (snr_mode == SnrMode::Grid && !(snr_step_db > 0.0)) throw ConfigError("SNR grid step must be positive");
  if (pa_seeds.empty()) throw ConfigError("pa_seeds must not be empty");
  if (dither_delta < 0.0) throw ConfigError("dither_delta must be non-negative");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  channel.validate();
  if (channel.kind == impair::ChannelKind::Tdl) impair::sample_taps(channel, link());
}

std::vector<double> DatasetSpec::snr_grid() const {
  std::vector<double> g;
  if (snr_mode == SnrMode::Uniform) return g;
  for (int k = 0;; ++k) {
    const double s = snr_lo_db + k * snr_step_db;
    if (s > snr_hi_db + 1e-9) break;
    g.push_back(s);
  }
  return g;
}

void check_pa_disjoint(const DatasetSpec& train, const DatasetSpec& val) {
  const std::set<std::uint64_t> a(train.pa_seeds.begin(), train.pa_seeds.end());
  for (auto s : val.pa_seeds)
    if (a.count(s))
      throw ConfigError("training and validation PA seeds overlap (seed " + std::to_string(s) + ")");
}

const impair::PaPolynomial& reference_pa() {
  static const impair::PaPolynomial poly = impair::fit_pa_polynomial(impair::PaReferenceModel{}).polynomial;
  return poly;
}

TtiRecord generate_tti(const DatasetSpec& spec, std::uint64_t tti_index) {
  if (tti_index >= static_cast<std::uint64_t>(spec.num_ttis))
    throw ArgumentError("tti_index " + std::to_string(tti_index) + " out of range");
  const auto cfg = spec.link();
  const auto layout = dsp::DmrsLayout::make(cfg, spec.pilot_seed);
  const auto seed = [&](Stream s) { return derive_seed(spec.master_seed, tti_index, s); };

  TtiRecord rec;
  rec.tti_index = tti_index;

  std::vector<std::uint8_t> payload(dsp::num_data_res(cfg, layout) * static_cast<std::size_t>(cfg.bits()));
  {
    Rng rng(seed(Stream::Payload));
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng() >> 63);
  }
  auto tx = dsp::build_tx_grid(cfg, layout, payload);
  rec.label_bits = std::move(tx.label_bits);
  rec.bit_mask = std::move(tx.bit_mask);

  if (spec.snr_lo_db == spec.snr_hi_db) {
    rec.snr_db = spec.snr_lo_db;  // also covers a noiseless (+inf) spec
  } else if (spec.snr_mode == SnrMode::Uniform) {
    Rng rng(seed(Stream::Snr));
    rec.snr_db = std::uniform_real_distribution<double>(spec.snr_lo_db, spec.snr_hi_db)(rng);
  } else {
    const auto grid = spec.snr_grid();
    rec.snr_db = grid[tti_index % grid.size()];
  }
  rec.pa_seed = spec.pa_seeds[tti_index % spec.pa_seeds.size()];
  rec.backoff_db = spec.backoff_db;
  if (!spec.backoff_grid.empty()) {
    Rng rng(seed(Stream::Backoff));
    rec.backoff_db = spec.backoff_grid[rng() % spec.backoff_grid.size()];
  }

  auto frame = dsp::ofdm_modulate(tx.grid, cfg);
  cdouble pa_gain{1.0, 0.0};
  if (!spec.linear_pa) {
    const auto poly = impair::dither_pa(reference_pa(), spec.dither_delta, derive_seed(rec.pa_seed, 0, Stream::Dither));
    frame = impair::apply_pa(frame, poly, rec.backoff_db, spec.kappa);
    pa_gain = impair::best_linear_gain(tx.grid, dsp::ofdm_demodulate(frame, cfg));
  }

  rec.true_channel = dsp::ResourceGrid(cfg.num_data_subcarriers, cfg.num_symbols, dsp::GridKind::ChannelEstimate);
  if (spec.channel.kind == impair::ChannelKind::Tdl) {
    auto res = impair::apply_tdl(frame, spec.channel, seed(Stream::Channel), cfg);
    frame = std::move(res.frame);
    for (std::size_t i = 0; i < rec.true_channel.data().size(); ++i)
      rec.true_channel.data()[i] = pa_gain * res.true_channel.data()[i];
  } else {
    std::fill(rec.true_channel.data().begin(), rec.true_channel.data().end(), pa_gain);
  }

  rec.rx_frame = impair::apply_awgn(frame, rec.snr_db, seed(Stream::Noise), cfg);
  rec.raw_ls = rx::ls_estimate(dsp::ofdm_demodulate(rec.rx_frame, cfg), layout);
  return rec;
}

std::string to_string(ReceiverKind k) {
  switch (k) {
    case ReceiverKind::LmmseKnown: return "lmmse_known";
    case ReceiverKind::LmmseEst: return "lmmse_est";
    case ReceiverKind::DeepRx: return "deeprx";
    case ReceiverKind::Hybrid: return "hybrid";
  }
  return "?";
}

ReceiverKind receiver_from_string(const std::string& s) {
  if (s == "lmmse_known") return ReceiverKind::LmmseKnown;
  if (s == "lmmse_est") return ReceiverKind::LmmseEst;
  if (s == "deeprx") return ReceiverKind::DeepRx;
  if (s == "hybrid") return ReceiverKind::Hybrid;
  throw ConfigError("unknown receiver '" + s + "'");
}

rx::LlrGrid detect(ReceiverKind kind, const TtiRecord& record, const dsp::LinkConfig& cfg,
                   const dsp::DmrsLayout& layout, const model::HybridModel* model) {
  switch (kind) {
    case ReceiverKind::LmmseKnown: {
      const double var = std::isinf(record.snr_db) ? 0.0 : std::pow(10.0, -record.snr_db / 10.0);
      const auto eq = rx::lmmse_equalize(dsp::ofdm_demodulate(record.rx_frame, cfg), record.true_channel, var);
      return rx::max_log_llr(eq, cfg.modulation, cfg.max_bits);
    }
    case ReceiverKind::LmmseEst: {
      const auto h = rx::interpolate_channel(record.raw_ls, layout);
      const double var = rx::estimate_noise_variance(record.raw_ls, layout);
      const auto eq = rx::lmmse_equalize(dsp::ofdm_demodulate(record.rx_frame, cfg), h, var);
      return rx::max_log_llr(eq, cfg.modulation, cfg.max_bits);
    }
    case ReceiverKind::DeepRx:
      if (!model) throw ConfigError("receiver 'deeprx' needs a checkpoint");
      return model::deeprx_forward(record.rx_frame, record.raw_ls, *model);
    case ReceiverKind::Hybrid:
      if (!model) throw ConfigError("receiver 'hybrid' needs a checkpoint");
      if (!model->config().use_pre_fft) throw ConfigError("receiver 'hybrid' needs a model with a pre-FFT network");
      return model::hybrid_forward(record.rx_frame, record.raw_ls, *model);
  }
  throw ConfigError("unknown receiver");
}

BitCount count_errors(const rx::LlrGrid& llr, const TtiRecord& record) {
  const auto& mask = record.bit_mask.values;
  const auto& labels = record.label_bits.values;
  if (llr.values.size() != mask.size()) throw ShapeError("LLR grid does not match the record's bit mask");
  BitCount c;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++c.bits;
    const std::uint8_t hard = llr.values[i] > 0.0 ? 1 : 0;
    if (hard != labels[i]) ++c.errors;
  }
  return c;
}

std::vector<BerRow> evaluate(const Detector& detector, std::span<const TtiRecord> records) {
  std::map<double, BitCount> groups;
  for (const auto& r : records) {
    const auto c = count_errors(detector(r), r);
    auto& g = groups[r.snr_db];
    g.errors += c.errors;
    g.bits += c.bits;
  }
  std::vector<BerRow> rows;
  for (const auto& [snr, c] : groups) rows.push_back({snr, c.errors, c.bits, c.ber()});
  return rows;
}

std::vector<BerRow> evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset) {
  const auto model = model::HybridModel::load(checkpoint.string());
  const auto cfg = dataset.spec.link();
  const auto& mc = model.config().link;
  if (mc.fft_size != cfg.fft_size || mc.num_data_subcarriers != cfg.num_data_subcarriers ||
      mc.num_symbols != cfg.num_symbols || mc.cp_long != cfg.cp_long || mc.modulation != cfg.modulation)
    throw IoError("checkpoint architecture does not match the dataset profile: " + checkpoint.string());
  const auto layout = dsp::DmrsLayout::make(cfg, dataset.spec.pilot_seed);
  const auto kind = model.config().use_pre_fft ? ReceiverKind::Hybrid : ReceiverKind::DeepRx;
  return evaluate([&](const TtiRecord& r) { return detect(kind, r, cfg, layout, &model); }, dataset.records);
}

std::string TrainHyper::to_json() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), R"({"lr":%.17g,"batch":%d,"epochs":%d,"clip_norm":%.17g,"seed":%llu})", lr, batch,
                epochs, clip_norm, static_cast<unsigned long long>(seed));
  return buf;
}

LossBer loss_and_ber(const model::HybridModel& model, std::span<const TtiRecord> records) {
  if (records.empty()) return {};
  double loss = 0.0;
  BitCount total;
  for (const auto& r : records) {
    nn::Tape tape(false);
    const auto out = model.forward(tape, r.rx_frame, r.raw_ls);
    const auto& logits = tape.value(out);
    loss += nn::bce_with_logits(logits, r.label_bits.values, r.bit_mask.values).loss;
    const auto c = count_errors(model::to_llr_grid(logits), r);
    total.errors += c.errors;
    total.bits += c.bits;
  }
  return {loss / static_cast<double>(records.size()), total.ber()};
}

namespace {

void write_metric(std::ostream& os, int epoch, const char* split, double loss, double ber, double wall) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g,%.3f\n", epoch, split, loss, ber, wall);
  os << buf;
  os.flush();
}

}  // namespace

TrainResult train(const model::HybridConfig& architecture, std::span<const TtiRecord> train_set,
                  std::span<const TtiRecord> val_set, const TrainHyper& hyper, const std::filesystem::path& out_dir,
                  const ProgressFn& progress) {
  if (train_set.empty()) throw ArgumentError("training set is empty");
  if (val_set.empty()) throw ArgumentError("validation set is empty");
  if (hyper.batch <= 0 || hyper.epochs < 0 || !(hyper.lr > 0.0))
    throw ConfigError("invalid training hyperparameters " + hyper.to_json());
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  model::HybridConfig arch = architecture;
  arch.init_seed = derive_seed(hyper.seed, 0, Stream::Init);
  model::HybridModel model(arch);
  auto params = model.parameters();
  nn::AdamState opt;
  opt.config.lr = hyper.lr;

  TrainResult result;
  result.checkpoint = out_dir / "best.ckpt";
  result.metrics_csv = out_dir / "metrics.csv";
  std::ofstream csv(result.metrics_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write metrics log: " + result.metrics_csv.string());
  csv << "# seed=" << hyper.seed << " config_sha256=" << sha256_hex(arch.to_json() + hyper.to_json()) << '\n';
  csv << "epoch,split,loss,ber,wall_seconds\n";

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  const auto record_epoch = [&](EpochMetrics m) {
    m.wall_seconds = elapsed();
    write_metric(csv, m.epoch, "train", m.train_loss, m.train_ber, m.wall_seconds);
    write_metric(csv, m.epoch, "val", m.val_loss, m.val_ber, m.wall_seconds);
    result.history.push_back(m);
    if (m.epoch == 0 || m.val_loss < result.best_val_loss) {
      result.best_val_loss = m.val_loss;
      result.best_epoch = m.epoch;
      model.save(result.checkpoint.string(), &opt);
    }
    if (progress) progress(m);
  };

  {
    EpochMetrics m;
    const auto tr = loss_and_ber(model, train_set);
    const auto va = loss_and_ber(model, val_set);
    m.train_loss = tr.loss;
    m.train_ber = tr.ber;
    m.val_loss = va.loss;
    m.val_ber = va.ber;
    record_epoch(m);
  }

  std::vector<std::size_t> order(train_set.size());
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(epoch), Stream::Shuffle));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    double loss_sum = 0.0;
    BitCount bits;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      const double scale = 1.0 / static_cast<double>(end - start);
      nn::zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& r = train_set[order[k]];
        nn::Tape tape;
        const auto logits = model.forward(tape, r.rx_frame, r.raw_ls);
        const auto loss = nn::bce_with_logits(tape, logits, r.label_bits.values, r.bit_mask.values);
        batch_loss += tape.value(loss)[0];
        const auto c = count_errors(model::to_llr_grid(tape.value(logits)), r);
        bits.errors += c.errors;
        bits.bits += c.bits;
        tape.backward(loss);
        nn::accumulate_grads(tape, params, scale);
      }
      ++step;
      if (!std::isfinite(batch_loss) || !std::isfinite(nn::grad_norm(params))) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "non-finite loss at epoch %d, step %llu (lr %.3g)", epoch,
                      static_cast<unsigned long long>(step), opt.config.lr);
        throw TrainingError(buf);
      }
      loss_sum += batch_loss;
      nn::clip_grad_norm(params, hyper.clip_norm);
      nn::adam_step(params, opt);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_ber = bits.ber();
    const auto va = loss_and_ber(model, val_set);
    m.val_loss = va.loss;
    m.val_ber = va.ber;
    record_epoch(m);
  }
  model.save((out_dir / "last.ckpt").string(), &opt);
  return result;
}

}  // namespace hdrx::pipeline
