#include "micronas/dnas/search.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "micronas/autodiff/ops.hpp"
#include "micronas/errors.hpp"

namespace micronas {

using ad::Shape;
using ad::Tensor;

void SearchConfig::validate() const {
  if (epochs < 0) throw ConfigError("search epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("search batch_size must be positive");
  if (!(lr_end > 0.0) || lr_start < lr_end) throw ConfigError("search needs lr_start >= lr_end > 0");
  if (!(tau_end > 0.0) || tau_start < tau_end) throw ConfigError("search needs tau_start >= tau_end > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(arch_lr_scale >= 0.0)) throw ConfigError("arch_lr_scale must be non-negative");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
  if (lambda.size < 0.0 || lambda.mem < 0.0 || lambda.ops < 0.0) throw ConfigError("penalty weights must be >= 0");
  if (bits.weight_bits != 8 && bits.weight_bits != 4) throw ConfigError("bits must be 8 or 4");
  budget.validate();
}

void FinetuneConfig::validate() const {
  if (epochs < 0) throw ConfigError("finetune epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("finetune batch_size must be positive");
  if (!(lr_end > 0.0) || lr_start < lr_end) throw ConfigError("finetune needs lr_start >= lr_end > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
  if (quant_bits != 0 && quant_bits != 8 && quant_bits != 4) throw ConfigError("quant_bits must be 0, 4 or 8");
}

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.count(it.key())) throw ConfigError(what + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(what + ": field '" + key + "' has the wrong type");
  }
}

std::optional<std::int64_t> opt_bytes(const Json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_number_integer()) throw ConfigError(std::string("budget field '") + key + "' must be an integer");
  return j[key].get<std::int64_t>();
}

}  // namespace

Json search_config_to_json(const SearchConfig& c) {
  Json j = Json::object();
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_start"] = c.lr_start;
  j["lr_end"] = c.lr_end;
  j["weight_decay"] = c.weight_decay;
  j["arch_lr_scale"] = c.arch_lr_scale;
  j["grad_clip"] = c.grad_clip;
  j["tau_start"] = c.tau_start;
  j["tau_end"] = c.tau_end;
  j["lambda_size"] = c.lambda.size;
  j["lambda_mem"] = c.lambda.mem;
  j["lambda_ops"] = c.lambda.ops;
  j["gumbel_noise"] = c.gumbel_noise;
  j["bits"] = c.bits.weight_bits;
  j["seed"] = c.seed;
  j["budget"] = budget_to_json(c.budget);
  return j;
}

SearchConfig search_config_from_json(const Json& j, SearchConfig c) {
  const std::string what = "search config";
  reject_unknown(j,
                 {"epochs", "batch_size", "lr_start", "lr_end", "weight_decay", "arch_lr_scale", "grad_clip", "tau_start",
                  "tau_end", "lambda_size", "lambda_mem", "lambda_ops", "gumbel_noise", "bits", "seed", "budget"},
                 what);
  read_opt(j, "epochs", c.epochs, what);
  read_opt(j, "batch_size", c.batch_size, what);
  read_opt(j, "lr_start", c.lr_start, what);
  read_opt(j, "lr_end", c.lr_end, what);
  read_opt(j, "weight_decay", c.weight_decay, what);
  read_opt(j, "arch_lr_scale", c.arch_lr_scale, what);
  read_opt(j, "grad_clip", c.grad_clip, what);
  read_opt(j, "tau_start", c.tau_start, what);
  read_opt(j, "tau_end", c.tau_end, what);
  read_opt(j, "lambda_size", c.lambda.size, what);
  read_opt(j, "lambda_mem", c.lambda.mem, what);
  read_opt(j, "lambda_ops", c.lambda.ops, what);
  read_opt(j, "gumbel_noise", c.gumbel_noise, what);
  int bits = c.bits.weight_bits;
  read_opt(j, "bits", bits, what);
  c.bits = BitWidths{bits, bits};
  read_opt(j, "seed", c.seed, what);
  if (j.contains("budget")) {
    const auto& b = j["budget"];
    reject_unknown(b,
                   {"flash_bytes", "sram_bytes", "max_ops", "interpreter_sram_overhead",
                    "interpreter_flash_overhead", "persistent_buffer_bytes", "graph_metadata_bytes"},
                   "budget");
    if (b.contains("flash_bytes")) c.budget.flash_bytes = opt_bytes(b, "flash_bytes");
    if (b.contains("sram_bytes")) c.budget.sram_bytes = opt_bytes(b, "sram_bytes");
    if (b.contains("max_ops")) c.budget.max_ops = opt_bytes(b, "max_ops");
    read_opt(b, "interpreter_sram_overhead", c.budget.interpreter_sram_overhead, "budget");
    read_opt(b, "interpreter_flash_overhead", c.budget.interpreter_flash_overhead, "budget");
    read_opt(b, "persistent_buffer_bytes", c.budget.persistent_buffer_bytes, "budget");
    read_opt(b, "graph_metadata_bytes", c.budget.graph_metadata_bytes, "budget");
  }
  c.validate();
  return c;
}

Json finetune_config_to_json(const FinetuneConfig& c) {
  return Json{{"epochs", c.epochs},           {"batch_size", c.batch_size}, {"lr_start", c.lr_start},
              {"lr_end", c.lr_end},           {"weight_decay", c.weight_decay},
              {"grad_clip", c.grad_clip},     {"quant_bits", c.quant_bits},   {"seed", c.seed}};
}

FinetuneConfig finetune_config_from_json(const Json& j, FinetuneConfig c) {
  const std::string what = "finetune config";
  reject_unknown(j, {"epochs", "batch_size", "lr_start", "lr_end", "weight_decay", "grad_clip", "quant_bits", "seed"},
                 what);
  read_opt(j, "epochs", c.epochs, what);
  read_opt(j, "batch_size", c.batch_size, what);
  read_opt(j, "lr_start", c.lr_start, what);
  read_opt(j, "lr_end", c.lr_end, what);
  read_opt(j, "weight_decay", c.weight_decay, what);
  read_opt(j, "grad_clip", c.grad_clip, what);
  read_opt(j, "quant_bits", c.quant_bits, what);
  read_opt(j, "seed", c.seed, what);
  c.validate();
  return c;
}

DecisionWeights init_alpha(const Supernet& net) {
  DecisionWeights a;
  for (const auto& d : net.decisions()) {
    a[d.id] = Tensor::zeros(Shape{static_cast<std::int64_t>(d.size())}, true);
  }
  return a;
}

Tensor relax_row(const Tensor& alpha, double tau, std::mt19937_64* rng) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (!rng) return ad::softmax(alpha, tau);
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  std::vector<double> g(static_cast<std::size_t>(alpha.numel()));
  for (double& v : g) v = -std::log(-std::log(u(*rng)));
  return ad::softmax(ad::add(alpha, Tensor::from(alpha.shape(), std::move(g))), tau);
}

DecisionWeights relax_decisions(const DecisionWeights& alpha, double tau, bool gumbel_noise, std::mt19937_64& rng) {
  DecisionWeights z;
  for (const auto& [id, a] : alpha) z[id] = relax_row(a, tau, gumbel_noise ? &rng : nullptr);
  return z;
}

Tensor total_objective(const Tensor& task_loss, const ExpectedResources& r, const Budget& budget,
                       const PenaltyWeights& lambda) {
  Tensor obj = task_loss;
  auto hinge = [&](double weight, const Tensor& usage, std::optional<std::int64_t> limit, const char* name) {
    if (weight == 0.0) return;
    if (weight < 0.0) throw ConfigError(std::string("penalty weight for ") + name + " is negative");
    if (!limit) throw ConfigError(std::string("non-zero ") + name + " penalty needs a " + name + " budget");
    if (*limit <= 0) {
      throw ConfigError(std::string(name) + " budget leaves no room after fixed overheads");
    }
    const Tensor ratio = ad::add_constant(ad::scale(usage, 1.0 / static_cast<double>(*limit)), -1.0);
    const Tensor h = ad::maximum({ratio, Tensor::scalar(0.0)});
    obj = ad::add(obj, ad::scale(h, weight));
  };
  hinge(lambda.size, r.size_bytes, budget.effective_flash(), "flash");
  hinge(lambda.mem, r.working_bytes, budget.effective_sram(), "sram");
  hinge(lambda.ops, r.ops, budget.max_ops, "ops");
  return obj;
}

double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return lr_start;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps - 1)) /
                   static_cast<double>(total_steps - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

double anneal_temperature(double tau_start, double tau_end, int epoch, int epochs) {
  if (epochs <= 1) return tau_start;
  const double t = static_cast<double>(std::clamp(epoch, 0, epochs - 1)) / static_cast<double>(epochs - 1);
  return tau_start * std::pow(tau_end / tau_start, t);
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Fisher-Yates with our own index draws so the order is identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

void sgd_step(const ad::Tensor& p, double lr, double weight_decay, double grad_scale = 1.0) {
  if (!p.has_grad()) return;
  auto& n = *p.node();
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value[i] -= lr * (grad_scale * n.grad[i] + weight_decay * n.value[i]);
  }
}

// Factor that brings the global gradient norm of `params` down to `limit`.
double clip_scale(const std::vector<ad::NamedParam>& params, double limit) {
  if (limit <= 0.0) return 1.0;
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.node()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  return norm > limit ? limit / norm : 1.0;
}

void clamp_quant_range(const std::string& name, ad::Tensor& t) {
  double& v = t.node()->value[0];
  auto ends_with = [&](const char* s) {
    const std::string suf(s);
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".min")) v = std::min(v, 0.0);
  if (ends_with(".max")) v = std::max(v, 1e-6);
  if (ends_with(".absmax")) v = std::max(v, 1e-6);
}

// A learnt weight range may not shrink below a quarter of the weights it covers;
// otherwise it can collapse and zero the whole layer.
constexpr double kMinWeightRangeFraction = 0.25;

void floor_weight_range(const SupernetModel& network, ad::NamedParam& p) {
  const std::string prefix = "quant/", suffix = ".absmax";
  if (p.name.size() <= prefix.size() + suffix.size() ||
      p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) != 0)
    return;
  const auto wname = p.name.substr(prefix.size(), p.name.size() - prefix.size() - suffix.size());
  double m = 0.0;
  for (double v : network.params().get(wname).values()) m = std::max(m, std::abs(v));
  double& r = p.tensor.node()->value[0];
  r = std::max(r, kMinWeightRangeFraction * m);
}

std::string where(int epoch, std::size_t step) {
  return "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
}

}  // namespace

SearchState train_search(SupernetModel& model, const LabeledDataset& train, const SearchConfig& config) {
  return train_search(model, init_alpha(model.spec()), train, config);
}

SearchState train_search(SupernetModel& model, DecisionWeights alpha, const LabeledDataset& train,
                         const SearchConfig& config) {
  config.validate();
  train.validate();
  const Supernet& net = model.spec();
  for (const auto& d : net.decisions()) {
    if (!alpha.count(d.id)) throw ConfigError("no architecture logits for '" + d.id + "'");
  }
  std::mt19937_64 rng(config.seed);
  SearchState state;
  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * config.epochs;
  const auto weights = model.weight_params();
  std::int64_t global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau = anneal_temperature(config.tau_start, config.tau_end, epoch, config.epochs);
    const auto order = shuffled(n, rng);
    SearchEpochLog log;
    log.epoch = epoch;
    log.tau = tau;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
      const double lr = cosine_lr(config.lr_start, config.lr_end, global_step, total_steps);
      if (s == 0) log.lr = lr;
      std::span<const std::size_t> idx(order.data() + s * bs, std::min(bs, n - s * bs));
      Tensor obj, task;
      try {
        const auto z = relax_decisions(alpha, tau, config.gumbel_noise, rng);
        const auto labels = train.batch_labels(idx);
        task = ad::softmax_cross_entropy(model.forward(train.batch(idx), z), labels);
        obj = total_objective(task, expected_resources(net, z, config.bits), config.budget, config.lambda);
        model.params().zero_grad();
        for (auto& [id, a] : alpha) a.zero_grad();
        ad::backward(obj);
      } catch (const NumericError& e) {
        throw NumericError("search diverged at " + where(epoch, s) + ": " + e.what());
      }
      const double batch_frac = static_cast<double>(idx.size()) / static_cast<double>(n);
      log.loss += obj.item() * batch_frac;
      log.task_loss += task.item() * batch_frac;
      const double clip = clip_scale(weights, config.grad_clip);
      for (const auto& p : weights) sgd_step(p.tensor, lr, config.weight_decay, clip);
      for (auto& [id, a] : alpha) sgd_step(a, lr * config.arch_lr_scale, 0.0);
    }
    log.penalty = log.loss - log.task_loss;
    DecisionWeights z;
    for (const auto& [id, a] : alpha) z[id] = ad::softmax(a.detach(), tau);
    const auto er = expected_resources(net, z, config.bits);
    log.expected_size_bytes = er.size_bytes.item();
    log.expected_ops = er.ops.item();
    log.expected_working_bytes = er.working_bytes.item();
    log.argmax = discretize(net, alpha);
    log.argmax_feasible = check_budget(discrete_resources(net, log.argmax, config.bits), config.budget).pass;
    state.history.push_back(std::move(log));
  }
  state.alpha = std::move(alpha);
  return state;
}

ArchSelection discretize(const Supernet& net, const DecisionWeights& alpha) {
  ArchSelection sel;
  for (const auto& d : net.decisions()) {
    auto it = alpha.find(d.id);
    if (it == alpha.end()) throw ConfigError("no architecture logits for '" + d.id + "'");
    const auto v = it->second.values();
    if (v.size() != d.size()) throw ShapeError("logits for '" + d.id + "' have the wrong length");
    int best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k] > v[best]) best = static_cast<int>(k);
    }
    sel.choices[d.id] = best;
  }
  return sel;
}

FinetuneResult finetune(SupernetModel& network, const LabeledDataset& train, const LabeledDataset& test,
                        const FinetuneConfig& config) {
  config.validate();
  train.validate();
  if (!network.spec().decisions().empty()) throw ConfigError("finetune needs a network without decisions");
  std::mt19937_64 rng(config.seed);
  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * config.epochs;

  if (config.quant_bits != 0) {
    std::vector<std::size_t> calib;
    for (std::size_t i = 0; i < std::min<std::size_t>(n, 128); ++i) calib.push_back(i);
    network.enable_quantization(config.quant_bits, train.batch(calib));
  } else {
    network.disable_quantization();
  }
  const auto weights = network.weight_params();
  auto ranges = network.quant_params();

  FinetuneResult result;
  std::int64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    FinetuneEpochLog log;
    log.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
      const double lr = cosine_lr(config.lr_start, config.lr_end, global_step, total_steps);
      if (s == 0) log.lr = lr;
      std::span<const std::size_t> idx(order.data() + s * bs, std::min(bs, n - s * bs));
      Tensor loss;
      try {
        loss = ad::softmax_cross_entropy(network.forward(train.batch(idx)), train.batch_labels(idx));
        network.params().zero_grad();
        ad::backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("finetune diverged at " + where(epoch, s) + ": " + e.what());
      }
      log.loss += loss.item() * static_cast<double>(idx.size()) / static_cast<double>(n);
      const double clip = clip_scale(weights, config.grad_clip);
      for (const auto& p : weights) sgd_step(p.tensor, lr, config.weight_decay, clip);
      // ranges form their own clipping group; their gradients are on a different scale
      const double range_clip = clip_scale(ranges, config.grad_clip);
      for (auto& p : ranges) {
        sgd_step(p.tensor, lr, 0.0, range_clip);
        clamp_quant_range(p.name, p.tensor);
        floor_weight_range(network, p);
      }
    }
    log.test_accuracy = evaluate_accuracy(network, test);
    result.history.push_back(log);
  }
  result.test_accuracy = evaluate_accuracy(network, test);
  return result;
}

void check_min_vertex(const Supernet& net, const Budget& budget, BitWidths bits) {
  const auto sel = net.min_selection();
  const auto report = discrete_resources(net, sel, bits);
  const auto check = check_budget(report, budget);
  if (check.pass) return;
  std::ostringstream os;
  os << "budget infeasible: even the smallest architecture violates";
  for (const auto& v : check.violated) {
    os << " " << v;
    if (v == "flash") os << " (needs " << report.param_bytes << " B, " << *budget.effective_flash() << " B available)";
    if (v == "sram") {
      os << " (needs " << report.peak_working_bytes << " B, " << *budget.effective_sram() << " B available)";
    }
    if (v == "ops") os << " (needs " << report.total_ops << " ops, limit " << *budget.max_ops << ")";
  }
  throw BudgetError(os.str());
}

SearchOutcome run_search(std::shared_ptr<const Supernet> net, const LabeledDataset& train, const LabeledDataset& test,
                         const SearchConfig& search, const FinetuneConfig& ft) {
  search.validate();
  ft.validate();
  check_min_vertex(*net, search.budget, search.bits);
  SupernetModel model(net, search.seed);
  auto state = train_search(model, train, search);
  SearchResult r;
  r.selection = discretize(*net, state.alpha);
  r.report = discrete_resources(*net, r.selection, search.bits);
  r.budget = search.budget;
  r.check = check_budget(r.report, search.budget);
  r.search_history = std::move(state.history);
  r.seed = search.seed;
  for (const auto& [id, a] : state.alpha) r.alpha[id] = std::vector<double>(a.values().begin(), a.values().end());
  auto network = materialize(model, r.selection);
  const auto fr = finetune(network.model, train, test, ft);
  r.finetune_history = fr.history;
  r.finetune_accuracy = fr.test_accuracy;
  return SearchOutcome{std::move(r), std::move(network)};
}

Json search_result_to_json(const SearchResult& r, const Supernet& net) {
  Json j = Json::object();
  j["seed"] = r.seed;
  j["selection"] = selection_to_json(r.selection);
  Json widths = Json::object();
  for (const auto& d : net.decisions()) {
    const int k = r.selection.at(d.id);
    widths[d.id] = d.kind == DecisionKind::Width ? Json(d.options[k]) : Json(k == kBlockOption ? "block" : "skip");
  }
  j["resolved_choices"] = widths;
  Json alpha = Json::object();
  for (const auto& [id, v] : r.alpha) alpha[id] = v;
  j["alpha"] = alpha;
  j["report"] = report_to_json(r.report);
  j["budget"] = budget_to_json(r.budget);
  j["budget_check"] = budget_check_to_json(r.check);
  Json sh = Json::array();
  for (const auto& e : r.search_history) {
    sh.push_back({{"epoch", e.epoch},
                  {"lr", e.lr},
                  {"tau", e.tau},
                  {"loss", e.loss},
                  {"task_loss", e.task_loss},
                  {"penalty", e.penalty},
                  {"expected_size_bytes", e.expected_size_bytes},
                  {"expected_ops", e.expected_ops},
                  {"expected_working_bytes", e.expected_working_bytes},
                  {"argmax", selection_to_json(e.argmax)},
                  {"argmax_feasible", e.argmax_feasible}});
  }
  j["search_history"] = sh;
  Json fh = Json::array();
  for (const auto& e : r.finetune_history) {
    fh.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"test_accuracy", e.test_accuracy}});
  }
  j["finetune_history"] = fh;
  j["finetune_accuracy"] = r.finetune_accuracy;
  return j;
}

}  // namespace micronas
