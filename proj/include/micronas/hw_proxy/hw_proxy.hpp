#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "micronas/resources/resources.hpp"
#include "micronas/supernet/supernet.hpp"

namespace micronas {

struct McuProfile {
  std::string name;
  std::int64_t sram_bytes = 0;
  std::int64_t flash_bytes = 0;
  double nominal_power_mw = 0.0;
};

/// The three reference boards: 128 KB/0.5 MB at 0.1 W, 320 KB/1 MB and
/// 512 KB/2 MB at 0.3 W.
std::vector<McuProfile> builtin_profiles();
std::vector<McuProfile> profiles_from_json(const Json& doc);
Json profiles_to_json(const std::vector<McuProfile>& profiles);
/// Case-insensitive lookup; throws ConfigError listing known names.
const McuProfile& find_profile(const std::vector<McuProfile>& profiles, const std::string& name);
/// SRAM/flash limits of a board with the default interpreter overheads.
Budget budget_for(const McuProfile& mcu);

struct MeasurementRow {
  std::string model_id;
  std::string backbone_id;
  std::string mcu_id;
  double ops = 0.0;
  double latency_ms = 0.0;
  std::optional<double> power_mw;
};

inline constexpr const char* kMeasurementHeader = "model_id,backbone_id,mcu_id,ops,latency_ms,power_mw";

/// Parses the measurement CSV. Malformed rows raise ConfigError naming the
/// line number (the header is line 1).
std::vector<MeasurementRow> read_measurements(std::istream& in);
std::string write_measurements(const std::vector<MeasurementRow>& rows);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares with intercept. Needs >= 3 points and
/// non-constant x.
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

struct HwProxyModel {
  std::string backbone_id;
  std::string mcu_id;
  double slope_ms_per_mop = 0.0;
  double intercept_ms = 0.0;
  double r_squared = 0.0;
  std::optional<double> mean_power_mw;
  double power_cv = 0.0;
  std::size_t rows = 0;
  std::vector<std::string> warnings;
};

inline constexpr double kLinearityWarnThreshold = 0.95;

/// Fits the rows of one (backbone, mcu) group.
HwProxyModel fit_latency_model(const std::vector<MeasurementRow>& rows, const std::string& backbone_id,
                               const std::string& mcu_id);
/// Fits all rows as one line; warns when they span several groups.
HwProxyModel fit_latency_model(const std::vector<MeasurementRow>& rows);
/// One model per (backbone, mcu) group, sorted by group.
std::vector<HwProxyModel> fit_all_groups(const std::vector<MeasurementRow>& rows);

/// Latency in ms for a raw op count; never below the intercept.
double predict_latency(const HwProxyModel& model, double ops);

struct EnergyEstimate {
  double energy_mj = 0.0;
  double latency_ms = 0.0;
  bool low_confidence = false;  // power_cv above 5 %
};

inline constexpr double kPowerCvConfidenceLimit = 0.05;

EnergyEstimate estimate_energy(const HwProxyModel& model, double ops);
/// mW x ms -> mJ.
double energy_for_latency(double power_mw, double latency_ms);

Json model_to_json(const HwProxyModel& m);
HwProxyModel model_from_json(const Json& j);
Json models_to_json(const std::vector<HwProxyModel>& models);
std::vector<HwProxyModel> models_from_json(const Json& j);

/// Calibration data for two fictional boards and two backbones: latency is
/// slope * Mops + intercept with 2 % multiplicative Gaussian noise.
struct SyntheticDevice {
  std::string mcu_id;
  std::string backbone_id;
  double slope_ms_per_mop;
  double intercept_ms;
  double power_mw;
};
const std::vector<SyntheticDevice>& synthetic_devices();
std::vector<MeasurementRow> generate_synthetic_measurements(std::uint64_t seed, int models_per_group = 200,
                                                            double noise = 0.02);

}  // namespace micronas
