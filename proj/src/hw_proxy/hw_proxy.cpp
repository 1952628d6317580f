#include "micronas/hw_proxy/hw_proxy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "micronas/errors.hpp"

namespace micronas {

std::vector<McuProfile> builtin_profiles() {
  return {
      {"stm32f446re", 128 * kKiB, 512 * kKiB, 100.0},
      {"stm32f746zg", 320 * kKiB, 1024 * kKiB, 300.0},
      {"stm32f767zi", 512 * kKiB, 2048 * kKiB, 300.0},
  };
}

std::vector<McuProfile> profiles_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("profiles") || !doc["profiles"].is_array()) {
    throw ConfigError("profile document must be an object with a 'profiles' array");
  }
  std::vector<McuProfile> out;
  std::size_t i = 0;
  for (const auto& p : doc["profiles"]) {
    try {
      McuProfile m{p.at("name").get<std::string>(), p.at("sram_bytes").get<std::int64_t>(),
                   p.at("flash_bytes").get<std::int64_t>(), p.at("nominal_power_mw").get<double>()};
      if (m.name.empty() || m.sram_bytes <= 0 || m.flash_bytes <= 0 || !(m.nominal_power_mw > 0.0)) {
        throw ConfigError("profile fields must be positive");
      }
      out.push_back(m);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("profile " + std::to_string(i) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("profile " + std::to_string(i) + ": " + e.what());
    }
    ++i;
  }
  return out;
}

Json profiles_to_json(const std::vector<McuProfile>& profiles) {
  Json arr = Json::array();
  for (const auto& p : profiles) {
    arr.push_back({{"name", p.name},
                   {"sram_bytes", p.sram_bytes},
                   {"flash_bytes", p.flash_bytes},
                   {"nominal_power_mw", p.nominal_power_mw}});
  }
  return Json{{"profiles", arr}};
}

const McuProfile& find_profile(const std::vector<McuProfile>& profiles, const std::string& name) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  for (const auto& p : profiles) {
    if (lower(p.name) == lower(name)) return p;
  }
  std::string known;
  for (const auto& p : profiles) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown MCU '" + name + "' (known: " + known + ")");
}

Budget budget_for(const McuProfile& mcu) {
  Budget b;
  b.sram_bytes = mcu.sram_bytes;
  b.flash_bytes = mcu.flash_bytes;
  return b;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& field, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ConfigError("line " + std::to_string(line) + ": field '" + field + "' is not a number: '" + s + "'");
  }
  return v;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void add_warning_if_nonlinear(HwProxyModel& m) {
  if (m.r_squared < kLinearityWarnThreshold) {
    std::ostringstream os;
    os << "r^2 = " << m.r_squared << " is below " << kLinearityWarnThreshold
       << "; ops may be a weak latency proxy for this group";
    m.warnings.push_back(os.str());
  }
}

HwProxyModel fit_rows(const std::vector<const MeasurementRow*>& rows) {
  if (rows.size() < 3) {
    throw ConfigError("latency fit needs at least 3 measurements, got " + std::to_string(rows.size()));
  }
  std::vector<double> x, y;
  std::vector<double> power;
  for (const auto* r : rows) {
    x.push_back(r->ops / 1e6);
    y.push_back(r->latency_ms);
    if (r->power_mw) power.push_back(*r->power_mw);
  }
  const auto fit = least_squares(x, y);
  HwProxyModel m;
  m.slope_ms_per_mop = fit.slope;
  m.intercept_ms = fit.intercept;
  m.r_squared = fit.r_squared;
  m.rows = rows.size();
  if (!power.empty()) {
    double mu = 0.0;
    for (double p : power) mu += p;
    mu /= static_cast<double>(power.size());
    double var = 0.0;
    for (double p : power) var += (p - mu) * (p - mu);
    var /= static_cast<double>(power.size());
    m.mean_power_mw = mu;
    m.power_cv = mu > 0.0 ? std::sqrt(var) / mu : 0.0;
  }
  add_warning_if_nonlinear(m);
  return m;
}

}  // namespace

std::vector<MeasurementRow> read_measurements(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("measurement CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // tolerate a UTF-8 byte order mark
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
  if (line != kMeasurementHeader) {
    throw ConfigError(std::string("line 1: expected header '") + kMeasurementHeader + "'");
  }
  std::vector<MeasurementRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv(line);
    if (f.size() != 6) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 6 fields, got " + std::to_string(f.size()));
    }
    MeasurementRow r;
    r.model_id = f[0];
    r.backbone_id = f[1];
    r.mcu_id = f[2];
    if (r.backbone_id.empty() || r.mcu_id.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": backbone_id and mcu_id are required");
    }
    r.ops = parse_number(f[3], "ops", lineno);
    r.latency_ms = parse_number(f[4], "latency_ms", lineno);
    if (!f[5].empty()) r.power_mw = parse_number(f[5], "power_mw", lineno);
    if (!(r.ops > 0.0)) throw ConfigError("line " + std::to_string(lineno) + ": ops must be positive");
    if (!(r.latency_ms > 0.0)) {
      throw ConfigError("line " + std::to_string(lineno) + ": latency_ms must be positive");
    }
    if (r.power_mw && !(*r.power_mw > 0.0)) {
      throw ConfigError("line " + std::to_string(lineno) + ": power_mw must be positive when present");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string write_measurements(const std::vector<MeasurementRow>& rows) {
  std::ostringstream os;
  os << kMeasurementHeader << "\n";
  for (const auto& r : rows) {
    os << r.model_id << "," << r.backbone_id << "," << r.mcu_id << "," << format_number(r.ops) << ","
       << format_number(r.latency_ms) << "," << (r.power_mw ? format_number(*r.power_mw) : "") << "\n";
  }
  return os.str();
}

LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("least_squares: x and y lengths differ");
  if (x.size() < 3) throw ConfigError("least_squares: need at least 3 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("least_squares: op counts have zero variance");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
  }
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return f;
}

HwProxyModel fit_latency_model(const std::vector<MeasurementRow>& rows, const std::string& backbone_id,
                               const std::string& mcu_id) {
  std::vector<const MeasurementRow*> group;
  for (const auto& r : rows) {
    if (r.backbone_id == backbone_id && r.mcu_id == mcu_id) group.push_back(&r);
  }
  auto m = fit_rows(group);
  m.backbone_id = backbone_id;
  m.mcu_id = mcu_id;
  return m;
}

HwProxyModel fit_latency_model(const std::vector<MeasurementRow>& rows) {
  std::vector<const MeasurementRow*> all;
  std::set<std::pair<std::string, std::string>> groups;
  for (const auto& r : rows) {
    all.push_back(&r);
    groups.emplace(r.backbone_id, r.mcu_id);
  }
  auto m = fit_rows(all);
  if (groups.size() == 1) {
    m.backbone_id = groups.begin()->first;
    m.mcu_id = groups.begin()->second;
  } else {
    m.backbone_id = "*";
    m.mcu_id = "*";
    m.warnings.push_back("rows span " + std::to_string(groups.size()) +
                         " (backbone, mcu) groups; latency slopes differ per backbone and board, fit each group "
                         "separately");
  }
  return m;
}

std::vector<HwProxyModel> fit_all_groups(const std::vector<MeasurementRow>& rows) {
  std::set<std::pair<std::string, std::string>> groups;
  for (const auto& r : rows) groups.emplace(r.backbone_id, r.mcu_id);
  std::vector<HwProxyModel> out;
  for (const auto& [b, m] : groups) out.push_back(fit_latency_model(rows, b, m));
  return out;
}

double predict_latency(const HwProxyModel& model, double ops) {
  const double v = model.slope_ms_per_mop * (std::max(ops, 0.0) / 1e6) + model.intercept_ms;
  return std::max(v, model.intercept_ms);
}

double energy_for_latency(double power_mw, double latency_ms) { return power_mw * latency_ms / 1000.0; }

EnergyEstimate estimate_energy(const HwProxyModel& model, double ops) {
  if (!model.mean_power_mw) {
    throw ConfigError("hardware model for " + model.backbone_id + "/" + model.mcu_id + " has no power data");
  }
  EnergyEstimate e;
  e.latency_ms = predict_latency(model, ops);
  e.energy_mj = energy_for_latency(*model.mean_power_mw, e.latency_ms);
  e.low_confidence = model.power_cv > kPowerCvConfidenceLimit;
  return e;
}

Json model_to_json(const HwProxyModel& m) {
  Json j = Json::object();
  j["backbone_id"] = m.backbone_id;
  j["mcu_id"] = m.mcu_id;
  j["slope_ms_per_mop"] = m.slope_ms_per_mop;
  j["intercept_ms"] = m.intercept_ms;
  j["r_squared"] = m.r_squared;
  j["mean_power_mw"] = m.mean_power_mw ? Json(*m.mean_power_mw) : Json(nullptr);
  j["power_cv"] = m.power_cv;
  j["rows"] = m.rows;
  j["warnings"] = m.warnings;
  return j;
}

HwProxyModel model_from_json(const Json& j) {
  try {
    HwProxyModel m;
    m.backbone_id = j.at("backbone_id").get<std::string>();
    m.mcu_id = j.at("mcu_id").get<std::string>();
    m.slope_ms_per_mop = j.at("slope_ms_per_mop").get<double>();
    m.intercept_ms = j.at("intercept_ms").get<double>();
    m.r_squared = j.at("r_squared").get<double>();
    if (j.contains("mean_power_mw") && !j["mean_power_mw"].is_null()) m.mean_power_mw = j["mean_power_mw"].get<double>();
    m.power_cv = j.value("power_cv", 0.0);
    m.rows = j.value("rows", std::size_t{0});
    if (j.contains("warnings")) m.warnings = j["warnings"].get<std::vector<std::string>>();
    if (m.r_squared < 0.0 || m.r_squared > 1.0) throw ConfigError("r_squared must lie in [0, 1]");
    if (m.power_cv < 0.0) throw ConfigError("power_cv must be non-negative");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hardware model schema violation: ") + e.what());
  }
}

Json models_to_json(const std::vector<HwProxyModel>& models) {
  Json arr = Json::array();
  for (const auto& m : models) arr.push_back(model_to_json(m));
  return Json{{"models", arr}};
}

std::vector<HwProxyModel> models_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("models") || !j["models"].is_array()) {
    throw ConfigError("hardware model document must be an object with a 'models' array");
  }
  std::vector<HwProxyModel> out;
  for (const auto& m : j["models"]) out.push_back(model_from_json(m));
  return out;
}

const std::vector<SyntheticDevice>& synthetic_devices() {
  static const std::vector<SyntheticDevice> devices = {
      {"sim-m4", "kws", 12.0, 15.0, 100.0},
      {"sim-m4", "cifar", 16.8, 12.0, 100.0},
      {"sim-m7", "kws", 5.8, 8.0, 300.0},
      {"sim-m7", "cifar", 8.1, 6.0, 300.0},
  };
  return devices;
}

std::vector<MeasurementRow> generate_synthetic_measurements(std::uint64_t seed, int models_per_group, double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mops(2.0, 150.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<MeasurementRow> rows;
  for (const auto& d : synthetic_devices()) {
    for (int i = 0; i < models_per_group; ++i) {
      MeasurementRow r;
      r.model_id = d.backbone_id + "-" + std::to_string(i);
      r.backbone_id = d.backbone_id;
      r.mcu_id = d.mcu_id;
      const double m = mops(rng);
      r.ops = std::round(m * 1e6);
      const double clean = d.slope_ms_per_mop * (r.ops / 1e6) + d.intercept_ms;
      r.latency_ms = std::round(clean * (1.0 + noise * gauss(rng)) * 1000.0) / 1000.0;
      r.power_mw = std::round(d.power_mw * (1.0 + 0.007 * gauss(rng)) * 100.0) / 100.0;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace micronas
