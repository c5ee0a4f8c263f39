#include "hdrx/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "hdrx/hash.hpp"

namespace hdrx::eval {

using json = nlohmann::json;

namespace {

bool is_ml(const std::string& r) { return r == "hybrid" || r == "deeprx"; }

void check_receiver_name(const std::string& r) {
  if (r == "theory") return;
  pipeline::receiver_from_string(r);
}

const model::HybridModel* model_for(const std::string& receiver, const ModelSet& models) {
  if (!is_ml(receiver)) return nullptr;
  const auto it = models.find(receiver);
  if (it == models.end() || it->second == nullptr)
    throw ConfigError("receiver '" + receiver + "' needs a checkpoint");
  return it->second;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void stamp(std::ostream& os, const std::string& config_hash, std::uint64_t seed) {
  os << "# config_sha256=" << config_hash << " seed=" << seed << '\n';
}

// Owns models loaded from the spec's checkpoint paths.
struct LoadedModels {
  std::map<std::string, model::HybridModel> owned;
  ModelSet view;

  explicit LoadedModels(const SweepSpec& spec) {
    for (const auto& r : spec.receivers) {
      if (!is_ml(r)) continue;
      const auto it = spec.checkpoints.find(r);
      if (it == spec.checkpoints.end()) throw ConfigError("receiver '" + r + "' needs a checkpoint");
      owned.emplace(r, model::HybridModel::load(it->second));
    }
    for (auto& [name, m] : owned) view[name] = &m;
  }
};

}  // namespace

void SweepSpec::validate() const {
  if (receivers.empty()) throw ConfigError("sweep needs at least one receiver");
  for (const auto& r : receivers) check_receiver_name(r);
  if (ttis_per_point <= 0) throw ConfigError("ttis_per_point must be positive");
  if (pa_seeds.empty()) throw ConfigError("sweep needs at least one PA seed");
  if (!(snr_floor_db < snr_ceiling_db)) throw ConfigError("SNR floor must be below the ceiling");
  if (!(snr_tolerance_db > 0.0)) throw ConfigError("SNR tolerance must be positive");
  for (double t : target_ber)
    if (!(t > 0.0 && t < 0.5)) throw ConfigError("target BER must lie in (0, 0.5)");
  dsp::LinkConfig::profile(profile, modulation).validate();
}

std::string SweepSpec::to_json() const {
  json j;
  j["receivers"] = receivers;
  j["snr_grid_db"] = snr_grid_db;
  j["backoff_grid_db"] = backoff_grid_db;
  j["target_ber"] = target_ber;
  j["profile"] = profile;
  j["modulation"] = dsp::to_string(modulation);
  j["channel"] = {{"kind", impair::to_string(channel.kind)}};
  if (channel.kind == impair::ChannelKind::Tdl) {
    j["channel"]["delay_spread_s"] = channel.delay_spread_s;
    j["channel"]["max_doppler_hz"] = channel.max_doppler_hz;
  }
  j["backoff_db"] = backoff_db;
  j["linear_pa"] = linear_pa;
  j["ttis_per_point"] = ttis_per_point;
  j["pa_seeds"] = pa_seeds;
  j["eval_seed"] = eval_seed;
  j["checkpoints"] = checkpoints;
  j["snr_floor_db"] = snr_floor_db;
  j["snr_ceiling_db"] = snr_ceiling_db;
  j["snr_tolerance_db"] = snr_tolerance_db;
  return j.dump();
}

SweepSpec SweepSpec::from_json(const std::string& text) {
  SweepSpec s;
  try {
    const json j = json::parse(text);
    s.receivers = j.value("receivers", s.receivers);
    s.snr_grid_db = j.value("snr_grid_db", s.snr_grid_db);
    s.backoff_grid_db = j.value("backoff_grid_db", s.backoff_grid_db);
    s.target_ber = j.value("target_ber", s.target_ber);
    s.profile = j.value("profile", s.profile);
    if (j.contains("modulation")) s.modulation = dsp::modulation_from_string(j["modulation"].get<std::string>());
    if (j.contains("channel")) {
      const auto& c = j["channel"];
      if (impair::channel_kind_from_string(c.at("kind").get<std::string>()) == impair::ChannelKind::Tdl)
        s.channel = impair::ChannelProfile::tdl_a(c.value("delay_spread_s", 100e-9), c.value("max_doppler_hz", 40.0));
    }
    s.backoff_db = j.value("backoff_db", s.backoff_db);
    s.linear_pa = j.value("linear_pa", s.linear_pa);
    s.ttis_per_point = j.value("ttis_per_point", s.ttis_per_point);
    s.pa_seeds = j.value("pa_seeds", s.pa_seeds);
    s.eval_seed = j.value("eval_seed", s.eval_seed);
    s.checkpoints = j.value("checkpoints", s.checkpoints);
    s.snr_floor_db = j.value("snr_floor_db", s.snr_floor_db);
    s.snr_ceiling_db = j.value("snr_ceiling_db", s.snr_ceiling_db);
    s.snr_tolerance_db = j.value("snr_tolerance_db", s.snr_tolerance_db);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sweep config: ") + e.what());
  }
  return s;
}

std::string SweepSpec::config_hash() const { return sha256_hex(to_json()); }

pipeline::DatasetSpec SweepSpec::point_spec(double snr_db, double backoff) const {
  pipeline::DatasetSpec d;
  d.profile = profile;
  d.modulation = modulation;
  d.num_ttis = ttis_per_point;
  d.snr_lo_db = snr_db;
  d.snr_hi_db = snr_db;
  d.snr_mode = pipeline::SnrMode::Uniform;
  d.pa_seeds = pa_seeds;
  d.channel = channel;
  d.backoff_db = backoff;
  d.linear_pa = linear_pa;
  d.master_seed = eval_seed;
  return d;
}

pipeline::BitCount measure_ber(const SweepSpec& spec, const std::string& receiver, double snr_db, double backoff_db,
                               const ModelSet& models) {
  const auto kind = pipeline::receiver_from_string(receiver);
  const auto* m = model_for(receiver, models);
  const auto ds = spec.point_spec(snr_db, backoff_db);
  const auto cfg = ds.link();
  const auto layout = dsp::DmrsLayout::make(cfg, ds.pilot_seed);
  pipeline::BitCount total;
  for (int i = 0; i < ds.num_ttis; ++i) {
    const auto rec = pipeline::generate_tti(ds, static_cast<std::uint64_t>(i));
    const auto c = pipeline::count_errors(pipeline::detect(kind, rec, cfg, layout, m), rec);
    total.errors += c.errors;
    total.bits += c.bits;
  }
  return total;
}

std::vector<BerPoint> run_ber_sweep(const SweepSpec& spec, const ModelSet& models) {
  spec.validate();
  if (spec.snr_grid_db.empty()) throw ConfigError("BER sweep needs a non-empty SNR grid");
  for (const auto& r : spec.receivers) model_for(r, models);
  std::vector<BerPoint> rows;
  for (const auto& r : spec.receivers) {
    for (double snr : spec.snr_grid_db) {
      BerPoint p;
      p.receiver = r;
      p.snr_db = snr;
      if (r == "theory") {
        p.ber = rx::awgn_ber_theory(snr, spec.modulation);
      } else {
        const auto c = measure_ber(spec, r, snr, spec.backoff_db, models);
        p.bit_errors = c.errors;
        p.bit_count = c.bits;
        p.ber = c.ber();
      }
      rows.push_back(p);
    }
  }
  return rows;
}

std::vector<BerPoint> run_ber_sweep(const SweepSpec& spec) {
  LoadedModels lm(spec);
  return run_ber_sweep(spec, lm.view);
}

std::vector<BackoffPoint> run_backoff_sweep(const SweepSpec& spec, const ModelSet& models) {
  spec.validate();
  if (spec.backoff_grid_db.empty()) throw ConfigError("backoff sweep needs a non-empty backoff grid");
  if (spec.target_ber.empty()) throw ConfigError("backoff sweep needs at least one target BER");
  for (const auto& r : spec.receivers) model_for(r, models);
  std::vector<BackoffPoint> rows;
  for (const auto& r : spec.receivers) {
    for (double bo : spec.backoff_grid_db) {
      std::map<double, double> cache;  // snr -> ber
      const auto ber_at = [&](double snr) {
        if (const auto it = cache.find(snr); it != cache.end()) return it->second;
        double b;
        if (r == "theory") {
          b = rx::awgn_ber_theory(snr, spec.modulation);
        } else {
          b = measure_ber(spec, r, snr, bo, models).ber();
        }
        cache[snr] = b;
        return b;
      };
      for (double target : spec.target_ber) {
        BackoffPoint p;
        p.receiver = r;
        p.backoff_db = bo;
        p.target_ber = target;
        if (ber_at(spec.snr_ceiling_db) <= target) {
          double lo = spec.snr_floor_db;
          double hi = spec.snr_ceiling_db;
          if (ber_at(lo) <= target) {
            hi = lo;
          } else {
            while (hi - lo > spec.snr_tolerance_db) {
              const double mid = 0.5 * (lo + hi);
              (ber_at(mid) <= target ? hi : lo) = mid;
            }
          }
          p.snr_needed_db = hi;
        }
        rows.push_back(p);
      }
    }
  }
  return rows;
}

std::vector<BackoffPoint> run_backoff_sweep(const SweepSpec& spec) {
  LoadedModels lm(spec);
  return run_backoff_sweep(spec, lm.view);
}

std::vector<EvmPoint> report_evm(const std::vector<double>& backoffs_db, const impair::PaPolynomial& pa,
                                 double kappa, int reference_ttis, std::uint64_t seed) {
  if (backoffs_db.empty()) throw ConfigError("EVM report needs at least one backoff");
  const auto cfg = dsp::LinkConfig::mini(dsp::Modulation::Qam64);
  const auto ref = impair::evm_reference_grids(cfg, reference_ttis, seed);
  std::vector<EvmPoint> out;
  for (double bo : backoffs_db) out.push_back({bo, impair::measure_evm(pa, bo, kappa, cfg, ref)});
  return out;
}

void write_ber_csv(std::ostream& os, const std::vector<BerPoint>& rows, const std::string& config_hash,
                   std::uint64_t seed) {
  stamp(os, config_hash, seed);
  os << "receiver,snr_db,ber,bit_errors,bit_count\n";
  for (const auto& r : rows)
    os << r.receiver << ',' << fmt(r.snr_db) << ',' << fmt(r.ber) << ',' << r.bit_errors << ',' << r.bit_count << '\n';
}

void write_backoff_csv(std::ostream& os, const std::vector<BackoffPoint>& rows, const std::string& config_hash,
                       std::uint64_t seed) {
  stamp(os, config_hash, seed);
  os << "receiver,backoff_db,target_ber,snr_needed_db\n";
  for (const auto& r : rows)
    os << r.receiver << ',' << fmt(r.backoff_db) << ',' << fmt(r.target_ber) << ','
       << (r.snr_needed_db ? fmt(*r.snr_needed_db) : std::string("saturated")) << '\n';
}

void write_evm_csv(std::ostream& os, const std::vector<EvmPoint>& rows, const std::string& config_hash,
                   std::uint64_t seed) {
  stamp(os, config_hash, seed);
  os << "backoff_db,evm_percent\n";
  for (const auto& r : rows) os << fmt(r.backoff_db) << ',' << fmt(r.evm_percent) << '\n';
}

}  // namespace hdrx::eval
