#pragma once

// Dataset generation, persistence, training and BER evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hdrx/baseline_rx.hpp"
#include "hdrx/dsp.hpp"
#include "hdrx/hybrid_rx.hpp"
#include "hdrx/impairments.hpp"

namespace hdrx::pipeline {

enum class SnrMode { Uniform, Grid };

struct DatasetSpec {
  std::string profile = "mini";
  dsp::Modulation modulation = dsp::Modulation::Qam16;
  int num_ttis = 2000;
  double snr_lo_db = 0.0;
  double snr_hi_db = 30.0;
  SnrMode snr_mode = SnrMode::Uniform;
  double snr_step_db = 2.0;  // Grid mode: lo, lo + step, ..., hi
  std::vector<std::uint64_t> pa_seeds;
  impair::ChannelProfile channel = impair::ChannelProfile::awgn();
  double backoff_db = 3.0;
  /// When non-empty each TTI draws its backoff uniformly from this list.
  std::vector<double> backoff_grid;
  /// Bypass the PA entirely (ideal linear transmitter).
  bool linear_pa = false;
  double dither_delta = 1e-3;
  double kappa = impair::kDefaultKappa;
  std::uint64_t pilot_seed = 1;
  std::uint64_t master_seed = 1;

  /// 2000 TTIs, PA seeds 1..30, uniform SNR 0-30 dB.
  static DatasetSpec mini_train(dsp::Modulation m, double backoff_db = 3.0);
  /// 1600 TTIs, PA seeds 101..110, SNR grid {0, 2, ..., 30} dB.
  static DatasetSpec mini_val(dsp::Modulation m, double backoff_db = 3.0);

  void validate() const;
  dsp::LinkConfig link() const { return dsp::LinkConfig::profile(profile, modulation); }
  std::vector<double> snr_grid() const;

  std::string to_json() const;
  static DatasetSpec from_json(const std::string& json);
};

/// Throws ConfigError when the two specs share a PA seed.
void check_pa_disjoint(const DatasetSpec& train, const DatasetSpec& val);

struct TtiRecord {
  std::uint64_t tti_index = 0;
  double snr_db = 0.0;
  double backoff_db = 0.0;
  std::uint64_t pa_seed = 0;
  dsp::TimeFrame rx_frame;
  dsp::ResourceGrid raw_ls;
  /// Genie effective channel: best linear PA gain times the multipath
  /// frequency response. Used only by the known-channel reference receiver.
  dsp::ResourceGrid true_channel;
  dsp::BitTensor label_bits;
  dsp::BitTensor bit_mask;
};

/// Undithered least-squares fit of the default reference PA (cached).
const impair::PaPolynomial& reference_pa();

TtiRecord generate_tti(const DatasetSpec& spec, std::uint64_t tti_index);

struct Manifest {
  std::uint32_t format_version = 0;
  std::string spec_json;
  std::uint64_t count = 0;
  std::string content_hash;  // SHA-256 hex of the record section
  std::string data_path;
};

/// Dataset file: little-endian "HDRXDSET", u32 version, u32 spec JSON length,
/// spec JSON, u64 count, u32 frame rows, u32 symbols, u32 N_D, u32 N_B, then
/// `count` records of {u64 tti_index, f64 snr_db, f64 backoff_db, u64
/// pa_seed, complex f64 rx frame (row-major), raw LS grid, true channel grid,
/// packed label bits, packed mask bits}. The content hash covers the records.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string serialize_record(const TtiRecord& record);

/// Streams `spec.num_ttis` records to `path` and writes `path`.json.
Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& path);

struct Dataset {
  DatasetSpec spec;
  std::vector<TtiRecord> records;
  std::string content_hash;
};

Dataset load_dataset(const std::filesystem::path& path);
/// Generates the records in memory (identical to a save/load round trip).
Dataset make_dataset(const DatasetSpec& spec);

// -- receivers and BER accounting --

enum class ReceiverKind { LmmseKnown, LmmseEst, DeepRx, Hybrid };
std::string to_string(ReceiverKind k);
ReceiverKind receiver_from_string(const std::string& s);

/// Detects one record. ML receivers need `model` (ignored otherwise).
rx::LlrGrid detect(ReceiverKind kind, const TtiRecord& record, const dsp::LinkConfig& cfg,
                   const dsp::DmrsLayout& layout, const model::HybridModel* model);

struct BitCount {
  std::uint64_t errors = 0;
  std::uint64_t bits = 0;
  double ber() const { return bits ? static_cast<double>(errors) / static_cast<double>(bits) : 0.0; }
};

BitCount count_errors(const rx::LlrGrid& llr, const TtiRecord& record);

struct BerRow {
  double snr_db = 0.0;
  std::uint64_t bit_errors = 0;
  std::uint64_t bit_count = 0;
  double ber = 0.0;
};

using Detector = std::function<rx::LlrGrid(const TtiRecord&)>;

/// Per-SNR BER over masked bits, rows sorted by SNR.
std::vector<BerRow> evaluate(const Detector& detector, std::span<const TtiRecord> records);
/// Loads a checkpoint and evaluates it (Hybrid or DeepRx per its header).
std::vector<BerRow> evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset);

// -- training --

struct TrainHyper {
  double lr = 1e-3;
  int batch = 8;
  int epochs = 20;
  double clip_norm = 10.0;
  std::uint64_t seed = 1;

  std::string to_json() const;
  static TrainHyper from_json(const std::string& json);
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_ber = 0.0;
  double val_loss = 0.0;
  double val_ber = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;  // epoch 0 is the untrained model
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::filesystem::path checkpoint;   // best-validation weights
  std::filesystem::path metrics_csv;
};

using ProgressFn = std::function<void(const EpochMetrics&)>;

/// Adam on the masked BCE. Writes best.ckpt, last.ckpt and metrics.csv
/// (epoch,split,loss,ber,wall_seconds) under `out_dir`. Throws TrainingError
/// on a non-finite loss.
TrainResult train(const model::HybridConfig& architecture, std::span<const TtiRecord> train_set,
                  std::span<const TtiRecord> val_set, const TrainHyper& hyper,
                  const std::filesystem::path& out_dir, const ProgressFn& progress = {});

struct LossBer {
  double loss = 0.0;
  double ber = 0.0;
};
LossBer loss_and_ber(const model::HybridModel& model, std::span<const TtiRecord> records);

}  // namespace hdrx::pipeline
