#pragma once

// Uplink coverage link budget on the 3GPP TR 38.901 rural-macro path loss.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hdrx::eval {

struct RmaParams {
  double carrier_ghz = 3.5;
  double bs_height_m = 35.0;
  double ut_height_m = 1.5;
  double street_width_m = 20.0;
  double building_height_m = 5.0;

  /// Throws ConfigError outside the model's parameter ranges.
  void validate() const;
  double breakpoint_m() const;
};

inline constexpr double kRmaMinDistance = 10.0;
inline constexpr double kRmaMaxDistance = 10000.0;

/// Path loss in dB at 2D distance `distance_m`; NLOS is max(LOS, NLOS').
/// Throws DomainError outside [10 m, 10 km].
double rma_path_loss(double distance_m, const RmaParams& params, bool los);

/// Largest distance whose path loss does not exceed `path_loss_db`, by
/// bisection to `tolerance_m`. nullopt when the loss is outside the range
/// covered by the model.
std::optional<double> rma_max_distance(double path_loss_db, const RmaParams& params, bool los,
                                       double tolerance_m = 1.0);

struct LinkBudgetParams {
  std::string name;
  double pa_output_power_dbm = 26.0;
  double pa_backoff_db = 4.0;  // reported only; already reflected in the PA output power
  double ue_coupling_loss_db = 4.0;
  double ue_antenna_gain_db = 0.0;
  double bandwidth_hz = 5e6;
  double bs_noise_figure_db = 2.0;
  double snr_requirement_db = 19.0;
  double bs_coupling_loss_db = 3.0;
  double bs_antenna_gain_db = 20.0;
  RmaParams rma;

  void validate() const;
};

struct LinkBudgetResult {
  std::string name;
  double pa_backoff_db = 0.0;
  double eirp_dbm = 0.0;
  double noise_power_dbm = 0.0;
  double sensitivity_dbm = 0.0;
  double max_path_loss_db = 0.0;
  std::optional<double> max_distance_los_m;
  std::optional<double> max_distance_nlos_m;
  // Relative to the first (baseline) column.
  std::optional<double> gain_los_percent;
  std::optional<double> gain_nlos_percent;
};

inline constexpr double kThermalNoiseDbmPerHz = -174.0;

LinkBudgetResult link_budget(const LinkBudgetParams& params);
/// First entry is the baseline for the percentage gains.
std::vector<LinkBudgetResult> link_budget(const std::vector<LinkBudgetParams>& columns);

std::vector<LinkBudgetParams> link_budget_from_json(const std::string& json);
/// Report with one object per column plus the config hash and seed.
std::string link_budget_to_json(const std::vector<LinkBudgetResult>& results, const std::string& config_hash,
                                std::uint64_t seed);

}  // namespace hdrx::eval
