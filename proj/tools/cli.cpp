#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "hdrx/hash.hpp"
#include "hdrx/hybrid_rx.hpp"
#include "hdrx/link_budget.hpp"
#include "hdrx/pipeline.hpp"
#include "hdrx/sweep.hpp"

namespace hdrx::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile = "mini";
  std::string out = ".";
};

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_config(const Common& c) {
  if (c.config.empty()) return json::object();
  try {
    return json::parse(read_file(c.config));
  } catch (const json::exception& e) {
    throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

dsp::Modulation parse_mod(const std::string& s) { return dsp::modulation_from_string(s); }

// Dataset spec from an inline JSON object or defaults for a split.
pipeline::DatasetSpec dataset_spec(const json& j, const std::string& split, dsp::Modulation m, double backoff,
                                   const std::string& profile) {
  auto s = split == "val" ? pipeline::DatasetSpec::mini_val(m, backoff) : pipeline::DatasetSpec::mini_train(m, backoff);
  s.profile = profile;
  if (!j.is_null() && !j.empty()) {
    json merged = json::parse(s.to_json());
    merged.merge_patch(j);
    s = pipeline::DatasetSpec::from_json(merged.dump());
  }
  return s;
}

// {"path": "..."} loads a stored dataset; anything else is a spec.
pipeline::Dataset dataset_from(const json& j, const std::string& split, dsp::Modulation m, double backoff,
                               const std::string& profile) {
  if (j.is_object() && j.contains("path")) return pipeline::load_dataset(j["path"].get<std::string>());
  return pipeline::make_dataset(dataset_spec(j, split, m, backoff, profile));
}

model::HybridConfig architecture(const json& j, const std::string& kind, dsp::Modulation m,
                                 const std::string& profile) {
  const auto link = dsp::LinkConfig::profile(profile, m);
  auto a = profile == "paper" ? model::HybridConfig::paper(link) : model::HybridConfig::desk(link);
  a.use_pre_fft = kind != "deeprx";
  if (j.is_object()) {
    if (j.contains("kind")) a.use_pre_fft = j["kind"].get<std::string>() != "deeprx";
    a.pre_fft_filters = j.value("pre_fft_filters", a.pre_fft_filters);
    a.post_fft_filters = j.value("post_fft_filters", a.post_fft_filters);
    a.global_skip = j.value("global_skip", a.global_skip);
    a.zero_init_pre_head = j.value("zero_init_pre_head", a.zero_init_pre_head);
  }
  a.validate();
  return a;
}

std::string stamp_hash(const std::string& subcommand, const json& cfg, std::uint64_t seed) {
  return sha256_hex(subcommand + cfg.dump() + std::to_string(seed));
}

int run_datagen(const Common& c, const std::string& split, const std::string& mod, double backoff,
                std::optional<int> ttis, std::ostream& out) {
  const json cfg = read_config(c);
  auto spec = dataset_spec(cfg, split, parse_mod(mod), backoff, c.profile);
  if (ttis) spec.num_ttis = *ttis;
  if (c.seed) spec.master_seed = *c.seed;
  const auto path = fs::path(c.out) / (split + ".bin");
  const auto m = pipeline::generate_dataset(spec, path);
  out << json{{"data", path.string()}, {"count", m.count}, {"content_hash", m.content_hash},
              {"format_version", m.format_version}}
             .dump(2)
      << '\n';
  return kExitOk;
}

int run_train(const Common& c, const std::string& kind, const std::string& mod, double backoff,
              std::optional<int> epochs, std::optional<int> ttis, std::ostream& out) {
  const json cfg = read_config(c);
  const auto m = parse_mod(cfg.value("modulation", mod));
  auto train_json = cfg.value("train", json::object());
  auto val_json = cfg.value("val", json::object());
  if (ttis && !train_json.contains("path")) train_json["num_ttis"] = *ttis;
  const auto arch = architecture(cfg.value("architecture", json::object()), kind, m, c.profile);
  auto hyper = pipeline::TrainHyper::from_json(cfg.value("hyper", json::object()).dump());
  if (c.seed) hyper.seed = *c.seed;
  if (epochs) hyper.epochs = *epochs;

  const auto train_ds = dataset_from(train_json, "train", m, backoff, c.profile);
  const auto val_ds = dataset_from(val_json, "val", m, backoff, c.profile);
  pipeline::check_pa_disjoint(train_ds.spec, val_ds.spec);

  const auto res = pipeline::train(arch, train_ds.records, val_ds.records, hyper, c.out,
                                   [&](const pipeline::EpochMetrics& e) {
                                     out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss "
                                         << e.val_loss << " val_ber " << e.val_ber << " (" << std::fixed
                                         << std::setprecision(1) << e.wall_seconds << " s)" << std::defaultfloat
                                         << std::setprecision(6) << '\n';
                                   });
  out << "best epoch " << res.best_epoch << ", checkpoint " << res.checkpoint.string() << ", metrics "
      << res.metrics_csv.string() << '\n';
  return kExitOk;
}

int run_eval(const Common& c, const std::string& checkpoint, const std::string& data, std::ostream& out) {
  if (checkpoint.empty()) throw ArgumentError("eval needs --checkpoint");
  const json cfg = read_config(c);
  const auto probe = model::HybridModel::load(checkpoint);
  const auto m = probe.config().link.modulation;
  pipeline::Dataset ds;
  if (!data.empty()) {
    ds = pipeline::load_dataset(data);
  } else {
    auto spec = dataset_spec(cfg, "val", m, cfg.value("backoff_db", 3.0), c.profile);
    if (c.seed) spec.master_seed = *c.seed;
    ds = pipeline::make_dataset(spec);
  }
  const auto rows = pipeline::evaluate(checkpoint, ds);
  std::ostringstream csv;
  csv << "# config_sha256=" << sha256_hex(ds.spec.to_json() + ds.content_hash) << " seed=" << ds.spec.master_seed
      << '\n'
      << "snr_db,bit_errors,bit_count,ber\n";
  for (const auto& r : rows) csv << r.snr_db << ',' << r.bit_errors << ',' << r.bit_count << ',' << r.ber << '\n';
  write_text(fs::path(c.out) / "eval.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

eval::SweepSpec sweep_spec(const Common& c, const std::string& hybrid_ckpt, const std::string& deeprx_ckpt) {
  auto spec = c.config.empty() ? eval::SweepSpec{} : eval::SweepSpec::from_json(read_file(c.config));
  if (!c.config.empty()) {
    const json j = read_config(c);
    if (!j.contains("profile")) spec.profile = c.profile;
  } else {
    spec.profile = c.profile;
  }
  if (c.seed) spec.eval_seed = *c.seed;
  if (!hybrid_ckpt.empty()) spec.checkpoints["hybrid"] = hybrid_ckpt;
  if (!deeprx_ckpt.empty()) spec.checkpoints["deeprx"] = deeprx_ckpt;
  return spec;
}

int run_ber_sweep(const Common& c, const std::string& hybrid, const std::string& deeprx, std::ostream& out) {
  auto spec = sweep_spec(c, hybrid, deeprx);
  if (spec.snr_grid_db.empty())
    for (int s = 0; s <= 30; s += 2) spec.snr_grid_db.push_back(s);
  const auto rows = eval::run_ber_sweep(spec);
  std::ostringstream csv;
  eval::write_ber_csv(csv, rows, spec.config_hash(), spec.eval_seed);
  write_text(fs::path(c.out) / "ber_sweep.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int run_backoff_sweep(const Common& c, const std::string& hybrid, const std::string& deeprx, std::ostream& out) {
  const auto spec = sweep_spec(c, hybrid, deeprx);
  const auto rows = eval::run_backoff_sweep(spec);
  std::ostringstream csv;
  eval::write_backoff_csv(csv, rows, spec.config_hash(), spec.eval_seed);
  write_text(fs::path(c.out) / "backoff_sweep.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int run_evm(const Common& c, std::vector<double> backoffs, double kappa, std::ostream& out) {
  const json cfg = read_config(c);
  if (cfg.contains("backoff_grid_db")) backoffs = cfg["backoff_grid_db"].get<std::vector<double>>();
  kappa = cfg.value("kappa", kappa);
  const std::uint64_t seed = c.seed.value_or(20211);
  const auto rows = eval::report_evm(backoffs, pipeline::reference_pa(), kappa, 64, seed);
  std::ostringstream csv;
  eval::write_evm_csv(csv, rows, stamp_hash("evm", json{{"backoffs", backoffs}, {"kappa", kappa}}, seed), seed);
  write_text(fs::path(c.out) / "evm.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

std::string default_link_budget_config() {
  return R"({
  "rma": {"carrier_ghz": 3.5, "bs_height_m": 35, "ut_height_m": 1.5, "street_width_m": 20, "building_height_m": 5},
  "columns": [
    {"name": "lmmse", "pa_output_power_dbm": 26, "pa_backoff_db": 4, "ue_coupling_loss_db": 4, "ue_antenna_gain_db": 0,
     "bandwidth_hz": 5e6, "bs_noise_figure_db": 2, "snr_requirement_db": 19, "bs_coupling_loss_db": 3,
     "bs_antenna_gain_db": 20},
    {"name": "hybriddeeprx", "pa_output_power_dbm": 29, "pa_backoff_db": 1, "ue_coupling_loss_db": 4,
     "ue_antenna_gain_db": 0, "bandwidth_hz": 5e6, "bs_noise_figure_db": 2, "snr_requirement_db": 19,
     "bs_coupling_loss_db": 3, "bs_antenna_gain_db": 20}
  ]
})";
}

int run_link_budget(const Common& c, std::ostream& out) {
  const std::string text = c.config.empty() ? default_link_budget_config() : read_file(c.config);
  const auto cols = eval::link_budget_from_json(text);
  const auto results = eval::link_budget(cols);
  const std::uint64_t seed = c.seed.value_or(0);
  const auto report = eval::link_budget_to_json(results, sha256_hex(json::parse(text).dump()), seed);
  write_text(fs::path(c.out) / "link_budget.json", report + "\n");
  out << report << '\n';
  return kExitOk;
}

int run_grad_check(const Common& c, int coords, std::ostream& out) {
  const std::uint64_t seed = c.seed.value_or(1234);
  auto spec = pipeline::DatasetSpec::mini_val(dsp::Modulation::Qam16);
  spec.profile = c.profile;
  spec.num_ttis = 1;
  spec.snr_lo_db = spec.snr_hi_db = 10.0;
  spec.master_seed = seed;
  const auto rec = pipeline::generate_tti(spec, 0);
  const auto link = spec.link();
  model::HybridModel model(c.profile == "paper" ? model::HybridConfig::paper(link) : model::HybridConfig::desk(link));

  nn::GradCheckOptions opts;
  opts.coords_per_param = coords;
  opts.seed = seed;
  const auto report = model::grad_check_model(model, rec.rx_frame, rec.raw_ls, rec.label_bits.values,
                                              rec.bit_mask.values, opts);
  const double adj = nn::fft_bridge_adjoint_error(link, seed);
  for (const auto& e : report.entries)
    out << std::left << std::setw(28) << e.name << " coords " << std::setw(4) << e.coords << " max_rel_error "
        << std::scientific << std::setprecision(3) << e.max_rel_error << std::defaultfloat << '\n';
  out << "fft_bridge adjoint_error " << std::scientific << std::setprecision(3) << adj << '\n';
  out << "max_rel_error " << report.max_rel_error << std::defaultfloat << " over " << report.coords
      << " coordinates (" << report.refined << " refined at a kink)\n";
  const bool ok = report.passed && adj < 1e-10;
  out << (ok ? "gradient check passed" : "gradient check FAILED") << '\n';
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"HybridDeepRx OFDM receiver simulator", "hdrx"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config, "JSON configuration file");
  app.add_option("--seed", common.seed, "Master seed");
  app.add_option("--profile", common.profile, "Numerology profile")->check(CLI::IsMember({"mini", "paper"}));
  app.add_option("--out", common.out, "Output directory");

  std::string split = "train";
  std::string mod = "qam16";
  double backoff = 3.0;
  std::optional<int> ttis;
  auto* datagen = app.add_subcommand("datagen", "Generate a dataset file and manifest");
  datagen->add_option("--split", split, "train or val defaults")->check(CLI::IsMember({"train", "val"}));
  datagen->add_option("--modulation", mod)->check(CLI::IsMember({"qam16", "qam64"}));
  datagen->add_option("--backoff", backoff, "PA backoff in dB");
  datagen->add_option("--ttis", ttis, "Number of TTIs");

  std::string kind = "hybrid";
  std::optional<int> epochs;
  auto* train = app.add_subcommand("train", "Train a HybridDeepRx or DeepRx model");
  train->add_option("--kind", kind)->check(CLI::IsMember({"hybrid", "deeprx"}));
  train->add_option("--modulation", mod)->check(CLI::IsMember({"qam16", "qam64"}));
  train->add_option("--backoff", backoff, "PA backoff in dB");
  train->add_option("--epochs", epochs);
  train->add_option("--ttis", ttis, "Training TTIs");

  std::string checkpoint;
  std::string data;
  auto* evalc = app.add_subcommand("eval", "Per-SNR BER of a checkpoint");
  evalc->add_option("--checkpoint", checkpoint)->required();
  evalc->add_option("--data", data, "Stored dataset (default: generated validation set)");

  std::string hybrid_ckpt;
  std::string deeprx_ckpt;
  auto* ber = app.add_subcommand("ber-sweep", "BER versus SNR for several receivers");
  ber->add_option("--hybrid", hybrid_ckpt, "HybridDeepRx checkpoint");
  ber->add_option("--deeprx", deeprx_ckpt, "DeepRx checkpoint");
  auto* bo = app.add_subcommand("backoff-sweep", "Required SNR versus PA backoff");
  bo->add_option("--hybrid", hybrid_ckpt, "HybridDeepRx checkpoint");
  bo->add_option("--deeprx", deeprx_ckpt, "DeepRx checkpoint");

  std::vector<double> evm_backoffs{1, 2, 3, 4, 6};
  double kappa = impair::kDefaultKappa;
  auto* evm = app.add_subcommand("evm", "EVM of the reference PA versus backoff");
  evm->add_option("--backoffs", evm_backoffs)->delimiter(',');
  evm->add_option("--kappa", kappa);

  auto* lb = app.add_subcommand("link-budget", "Uplink coverage link budget");

  int coords = 50;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check of the full model");
  gc->add_option("--coords", coords, "Coordinates per parameter tensor")->check(CLI::PositiveNumber);

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    if (rc == 0) return kExitOk;
    if (argv.size() <= 1) err << app.help();
    return kExitUsage;
  }

  try {
    if (*datagen) return run_datagen(common, split, mod, backoff, ttis, out);
    if (*train) return run_train(common, kind, mod, backoff, epochs, ttis, out);
    if (*evalc) return run_eval(common, checkpoint, data, out);
    if (*ber) return run_ber_sweep(common, hybrid_ckpt, deeprx_ckpt, out);
    if (*bo) return run_backoff_sweep(common, hybrid_ckpt, deeprx_ckpt, out);
    if (*evm) return run_evm(common, evm_backoffs, kappa, out);
    if (*lb) return run_link_budget(common, out);
    if (*gc) return run_grad_check(common, coords, out);
  } catch (const std::exception& e) {
    err << "hdrx: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace hdrx::cli
