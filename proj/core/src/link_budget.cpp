#include "hdrx/link_budget.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "hdrx/common.hpp"

namespace hdrx::eval {

using json = nlohmann::json;

namespace {

constexpr double kSpeedOfLight = 3e8;

double pl1(double d3d, const RmaParams& p) {
  const double h = p.building_height_m;
  return 20.0 * std::log10(40.0 * kPi * d3d * p.carrier_ghz / 3.0) +
         std::min(0.03 * std::pow(h, 1.72), 10.0) * std::log10(d3d) - std::min(0.044 * std::pow(h, 1.72), 14.77) +
         0.002 * std::log10(h) * d3d;
}

double d3(double d2d, const RmaParams& p) {
  const double dh = p.bs_height_m - p.ut_height_m;
  return std::sqrt(d2d * d2d + dh * dh);
}

double los_loss(double d2d, const RmaParams& p) {
  const double dbp = p.breakpoint_m();
  if (d2d <= dbp) return pl1(d3(d2d, p), p);
  return pl1(d3(dbp, p), p) + 40.0 * std::log10(d3(d2d, p) / d3(dbp, p));
}

double nlos_prime(double d2d, const RmaParams& p) {
  const double w = p.street_width_m;
  const double h = p.building_height_m;
  const double hbs = p.bs_height_m;
  const double hut = p.ut_height_m;
  const double x = std::log10(11.75 * hut);
  return 161.04 - 7.1 * std::log10(w) + 7.5 * std::log10(h) -
         (24.37 - 3.7 * (h / hbs) * (h / hbs)) * std::log10(hbs) +
         (43.42 - 3.1 * std::log10(hbs)) * (std::log10(d3(d2d, p)) - 3.0) + 20.0 * std::log10(p.carrier_ghz) -
         (3.2 * x * x - 4.97);
}

}  // namespace

void RmaParams::validate() const {
  if (!(carrier_ghz > 0.5 && carrier_ghz <= 30.0)) throw ConfigError("RMa carrier must lie in (0.5, 30] GHz");
  if (!(bs_height_m >= 10.0 && bs_height_m <= 150.0)) throw ConfigError("RMa BS height must lie in [10, 150] m");
  if (!(ut_height_m >= 1.0 && ut_height_m <= 10.0)) throw ConfigError("RMa UT height must lie in [1, 10] m");
  if (!(street_width_m >= 5.0 && street_width_m <= 50.0)) throw ConfigError("RMa street width must lie in [5, 50] m");
  if (!(building_height_m >= 5.0 && building_height_m <= 50.0))
    throw ConfigError("RMa building height must lie in [5, 50] m");
}

double RmaParams::breakpoint_m() const {
  return 2.0 * kPi * bs_height_m * ut_height_m * carrier_ghz * 1e9 / kSpeedOfLight;
}

double rma_path_loss(double distance_m, const RmaParams& params, bool los) {
  params.validate();
  if (!(distance_m >= kRmaMinDistance && distance_m <= kRmaMaxDistance))
    throw DomainError("RMa distance " + std::to_string(distance_m) + " m outside [10 m, 10 km]");
  const double l = los_loss(distance_m, params);
  return los ? l : std::max(l, nlos_prime(distance_m, params));
}

std::optional<double> rma_max_distance(double path_loss_db, const RmaParams& params, bool los, double tolerance_m) {
  if (!(tolerance_m > 0.0)) throw ArgumentError("distance tolerance must be positive");
  double lo = kRmaMinDistance;
  double hi = kRmaMaxDistance;
  if (rma_path_loss(lo, params, los) > path_loss_db) return std::nullopt;
  if (rma_path_loss(hi, params, los) <= path_loss_db) return std::nullopt;
  while (hi - lo > tolerance_m) {
    const double mid = 0.5 * (lo + hi);
    (rma_path_loss(mid, params, los) <= path_loss_db ? lo : hi) = mid;
  }
  return lo;
}

void LinkBudgetParams::validate() const {
  if (!(bandwidth_hz > 0.0)) throw ConfigError("bandwidth must be positive");
  rma.validate();
}

LinkBudgetResult link_budget(const LinkBudgetParams& p) {
  p.validate();
  LinkBudgetResult r;
  r.name = p.name;
  r.pa_backoff_db = p.pa_backoff_db;
  r.eirp_dbm = p.pa_output_power_dbm - p.ue_coupling_loss_db + p.ue_antenna_gain_db;
  r.noise_power_dbm = kThermalNoiseDbmPerHz + 10.0 * std::log10(p.bandwidth_hz);
  r.sensitivity_dbm = r.noise_power_dbm + p.bs_noise_figure_db + p.snr_requirement_db + p.bs_coupling_loss_db;
  r.max_path_loss_db = r.eirp_dbm - r.sensitivity_dbm + p.bs_antenna_gain_db;
  r.max_distance_los_m = rma_max_distance(r.max_path_loss_db, p.rma, true);
  r.max_distance_nlos_m = rma_max_distance(r.max_path_loss_db, p.rma, false);
  return r;
}

std::vector<LinkBudgetResult> link_budget(const std::vector<LinkBudgetParams>& columns) {
  if (columns.empty()) throw ConfigError("link budget needs at least one column");
  std::vector<LinkBudgetResult> out;
  for (const auto& c : columns) out.push_back(link_budget(c));
  const auto gain = [](const std::optional<double>& d, const std::optional<double>& base) -> std::optional<double> {
    if (!d || !base) return std::nullopt;
    return 100.0 * (*d / *base - 1.0);
  };
  for (auto& r : out) {
    r.gain_los_percent = gain(r.max_distance_los_m, out.front().max_distance_los_m);
    r.gain_nlos_percent = gain(r.max_distance_nlos_m, out.front().max_distance_nlos_m);
  }
  return out;
}

std::vector<LinkBudgetParams> link_budget_from_json(const std::string& text) {
  std::vector<LinkBudgetParams> cols;
  try {
    const json j = json::parse(text);
    RmaParams rma;
    if (j.contains("rma")) {
      const auto& r = j["rma"];
      rma.carrier_ghz = r.value("carrier_ghz", rma.carrier_ghz);
      rma.bs_height_m = r.value("bs_height_m", rma.bs_height_m);
      rma.ut_height_m = r.value("ut_height_m", rma.ut_height_m);
      rma.street_width_m = r.value("street_width_m", rma.street_width_m);
      rma.building_height_m = r.value("building_height_m", rma.building_height_m);
    }
    for (const auto& c : j.at("columns")) {
      LinkBudgetParams p;
      p.name = c.value("name", std::string("column") + std::to_string(cols.size()));
      p.pa_output_power_dbm = c.value("pa_output_power_dbm", p.pa_output_power_dbm);
      p.pa_backoff_db = c.value("pa_backoff_db", p.pa_backoff_db);
      p.ue_coupling_loss_db = c.value("ue_coupling_loss_db", p.ue_coupling_loss_db);
      p.ue_antenna_gain_db = c.value("ue_antenna_gain_db", p.ue_antenna_gain_db);
      p.bandwidth_hz = c.value("bandwidth_hz", p.bandwidth_hz);
      p.bs_noise_figure_db = c.value("bs_noise_figure_db", p.bs_noise_figure_db);
      p.snr_requirement_db = c.value("snr_requirement_db", p.snr_requirement_db);
      p.bs_coupling_loss_db = c.value("bs_coupling_loss_db", p.bs_coupling_loss_db);
      p.bs_antenna_gain_db = c.value("bs_antenna_gain_db", p.bs_antenna_gain_db);
      p.rma = rma;
      cols.push_back(p);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed link budget config: ") + e.what());
  }
  if (cols.empty()) throw ConfigError("link budget config has no columns");
  return cols;
}

std::string link_budget_to_json(const std::vector<LinkBudgetResult>& results, const std::string& config_hash,
                                std::uint64_t seed) {
  const auto opt = [](const std::optional<double>& v) -> json { return v ? json(*v) : json("unreachable"); };
  json cols = json::array();
  for (const auto& r : results) {
    cols.push_back({{"name", r.name},
                    {"pa_backoff_db", r.pa_backoff_db},
                    {"eirp_dbm", r.eirp_dbm},
                    {"noise_power_dbm", r.noise_power_dbm},
                    {"rx_sensitivity_dbm", r.sensitivity_dbm},
                    {"max_path_loss_db", r.max_path_loss_db},
                    {"max_distance_los_m", opt(r.max_distance_los_m)},
                    {"max_distance_nlos_m", opt(r.max_distance_nlos_m)},
                    {"gain_los_percent", opt(r.gain_los_percent)},
                    {"gain_nlos_percent", opt(r.gain_nlos_percent)}});
  }
  json j{{"config_sha256", config_hash}, {"seed", seed}, {"columns", cols}};
  return j.dump(2);
}

}  // namespace hdrx::eval
