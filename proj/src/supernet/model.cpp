#include "micronas/supernet/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "micronas/errors.hpp"

namespace micronas {

using ad::Shape;
using ad::Tensor;

DecisionWeights one_hot(const Supernet& net, const ArchSelection& sel) {
  net.validate(sel);
  DecisionWeights z;
  for (const auto& d : net.decisions()) {
    std::vector<double> v(d.size(), 0.0);
    v[static_cast<std::size_t>(sel.at(d.id))] = 1.0;
    z[d.id] = Tensor::from(Shape{static_cast<std::int64_t>(d.size())}, std::move(v));
  }
  return z;
}

DecisionWeights uniform_weights(const Supernet& net) {
  DecisionWeights z;
  for (const auto& d : net.decisions()) {
    const auto k = static_cast<std::int64_t>(d.size());
    z[d.id] = Tensor::full(Shape{k}, 1.0 / static_cast<double>(k));
  }
  return z;
}

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw ConfigError("duplicate parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += static_cast<std::size_t>(t.numel());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : params_) {
    out.add(name, Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                               t.requires_grad()));
  }
  return out;
}

namespace {

struct ParamShapes {
  Shape weight;
  std::int64_t out = 0;
  std::int64_t fan_in = 0;
};

bool has_params(const PrimitiveOp& op) {
  return op.kind == PrimKind::Conv || op.kind == PrimKind::Depthwise || op.kind == PrimKind::Dense;
}

ParamShapes param_shapes(const Supernet& net, const PrimitiveOp& op) {
  const auto& in = net.tensors()[op.inputs[0]];
  const auto& out = net.tensors()[op.output];
  ParamShapes s;
  switch (op.kind) {
    case PrimKind::Conv:
      s.weight = Shape({op.kernel_h, op.kernel_w, in.c_max, out.c_max});
      s.out = out.c_max;
      s.fan_in = static_cast<std::int64_t>(op.kernel_h) * op.kernel_w * in.c_max;
      break;
    case PrimKind::Depthwise:
      s.weight = Shape({op.kernel_h, op.kernel_w, 1, out.c_max});
      s.out = out.c_max;
      s.fan_in = static_cast<std::int64_t>(op.kernel_h) * op.kernel_w;
      break;
    case PrimKind::Dense:
      s.weight = Shape({static_cast<std::int64_t>(in.h) * in.w * in.c_max, out.c_max});
      s.out = out.c_max;
      s.fan_in = s.weight.dim(0);
      break;
    default:
      throw ConfigError("operator " + op.name + " has no parameters");
  }
  return s;
}

Tensor width_mix(const Tensor& y, const DecisionNode& d, const Tensor& z) {
  std::vector<Tensor> masked;
  masked.reserve(d.size());
  for (int w : d.options) masked.push_back(ad::channel_mask(y, w));
  return ad::weighted_sum(masked, z);
}

const Tensor& decision_weights(const DecisionWeights& z, const DecisionNode& d) {
  auto it = z.find(d.id);
  if (it == z.end()) throw ConfigError("no decision weights supplied for '" + d.id + "'");
  if (it->second.numel() != static_cast<std::int64_t>(d.size())) {
    throw ShapeError("decision weights for '" + d.id + "' have the wrong length");
  }
  return it->second;
}

}  // namespace

SupernetModel::SupernetModel(std::shared_ptr<const Supernet> spec, std::uint64_t seed)
    : spec_(std::move(spec)) {
  std::mt19937_64 rng(seed);
  for (const auto& op : spec_->ops()) {
    if (!has_params(op)) continue;
    const auto ps = param_shapes(*spec_, op);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(ps.fan_in)));
    std::vector<double> w(static_cast<std::size_t>(ps.weight.numel()));
    for (auto& v : w) v = dist(rng);
    params_.add(op.name + ".w", Tensor::from(ps.weight, std::move(w), true));
    params_.add(op.name + ".b", Tensor::zeros(Shape{ps.out}, true));
    if (op.kind != PrimKind::Dense) params_.add(op.name + ".gamma", Tensor::full(Shape{ps.out}, 1.0, true));
  }
}

SupernetModel::SupernetModel(std::shared_ptr<const Supernet> spec, ParameterStore params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  for (const auto& op : spec_->ops()) {
    if (!has_params(op)) continue;
    const auto ps = param_shapes(*spec_, op);
    if (!(params_.get(op.name + ".w").shape() == ps.weight)) {
      throw ShapeError("parameter " + op.name + ".w has shape " + params_.get(op.name + ".w").shape().str() +
                       ", expected " + ps.weight.str());
    }
  }
}

Tensor SupernetModel::quant_act(const Tensor& t, const std::string& site) const {
  if (!quant_.enabled()) return t;
  return ad::fake_quant(t, quant_.bits, params_.get("quant/" + site + ".min"),
                        params_.get("quant/" + site + ".max"), ad::QuantMode::Asymmetric);
}

Tensor SupernetModel::quant_weight(const std::string& name) const {
  const auto& w = params_.get(name);
  if (!quant_.enabled()) return w;
  const auto& r = params_.get("quant/" + name + ".absmax");
  return ad::fake_quant(w, quant_.bits, ad::neg(r), r, ad::QuantMode::Symmetric);
}

Tensor SupernetModel::forward(const Tensor& x, const DecisionWeights& z) const { return run(x, z, nullptr); }

Tensor SupernetModel::run(const Tensor& x, const DecisionWeights& z,
                          std::vector<std::pair<double, double>>* observed) const {
  const auto& net = *spec_;
  const auto& ishape = net.input_shape();
  if (x.shape().rank() != 4 || x.shape().dim(1) != ishape[0] || x.shape().dim(2) != ishape[1] ||
      x.shape().dim(3) != ishape[2]) {
    throw ShapeError("network expects [N," + std::to_string(ishape[0]) + "," + std::to_string(ishape[1]) + "," +
                     std::to_string(ishape[2]) + "] input, got " + x.shape().str());
  }
  auto observe = [observed](const Tensor& t) {
    if (!observed) return;
    auto v = t.values();
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    observed->emplace_back(*lo, *hi);
  };

  std::vector<Tensor> vals(net.tensors().size());
  observe(x);
  vals[0] = quant_act(x, "input");
  const auto& ops = net.ops();
  for (std::size_t oi = 0; oi < ops.size(); ++oi) {
    const auto& op = ops[oi];
    const Tensor& in = vals[op.inputs[0]];
    Tensor y;
    switch (op.kind) {
      case PrimKind::Conv:
      case PrimKind::Depthwise: {
        const int groups = op.kind == PrimKind::Depthwise ? net.tensors()[op.inputs[0]].c_max : 1;
        y = ad::conv2d(in, quant_weight(op.name + ".w"), params_.get(op.name + ".b"), op.stride, op.padding,
                       groups);
        y = ad::channel_scale(y, params_.get(op.name + ".gamma"));
        if (op.relu) y = ad::relu(y);
        if (op.width_decision >= 0) {
          const auto& d = net.decisions()[op.width_decision];
          y = width_mix(y, d, decision_weights(z, d));
        }
        break;
      }
      case PrimKind::Dense:
        y = ad::dense(in, quant_weight(op.name + ".w"), params_.get(op.name + ".b"));
        break;
      case PrimKind::AvgPool:
        y = ad::avg_pool2d(in, op.kernel_h, op.kernel_w, op.stride, op.padding);
        break;
      case PrimKind::Add:
        y = ad::add(in, vals[op.inputs[1]]);
        break;
      case PrimKind::Select: {
        const auto& d = net.decisions()[op.select_decision];
        vals[op.output] = ad::weighted_sum({in, vals[op.inputs[1]]}, decision_weights(z, d));
        continue;
      }
    }
    if (op.output == net.output_tensor()) {
      vals[op.output] = y;
    } else {
      observe(y);
      vals[op.output] = quant_act(y, op.name);
    }
  }
  return vals[net.output_tensor()];
}

void SupernetModel::enable_quantization(int bits, const Tensor& calibration, const DecisionWeights& z) {
  if (bits != 8 && bits != 4) throw ConfigError("quantization bits must be 8 or 4");
  quant_ = {};
  std::vector<std::pair<double, double>> observed;
  run(calibration, z, &observed);
  std::vector<std::string> sites{"input"};
  for (const auto& op : spec_->ops()) {
    if (op.kind != PrimKind::Select && op.output != spec_->output_tensor()) sites.push_back(op.name);
  }
  auto set_range = [this](const std::string& name, double v) {
    if (params_.contains(name)) {
      params_.get(name).node()->value[0] = v;
    } else {
      params_.add(name, Tensor::scalar(v, true));
    }
  };
  for (std::size_t i = 0; i < sites.size(); ++i) {
    double lo = std::min(observed.at(i).first, 0.0);
    double hi = std::max(observed.at(i).second, 0.0);
    if (hi - lo < 1e-6) hi = lo + 1e-3;
    set_range("quant/" + sites[i] + ".min", lo);
    set_range("quant/" + sites[i] + ".max", hi);
  }
  for (const auto& op : spec_->ops()) {
    if (!has_params(op)) continue;
    const auto& w = params_.get(op.name + ".w");
    double m = 0.0;
    for (double v : w.values()) m = std::max(m, std::abs(v));
    set_range("quant/" + op.name + ".w.absmax", std::max(m, 1e-6));
  }
  quant_.bits = bits;
}

std::vector<ad::NamedParam> SupernetModel::weight_params() const {
  std::vector<ad::NamedParam> out;
  for (const auto& [name, t] : params_.all()) {
    if (name.rfind("quant/", 0) != 0) out.push_back({name, t});
  }
  return out;
}

std::vector<ad::NamedParam> SupernetModel::quant_params() const {
  std::vector<ad::NamedParam> out;
  if (!quant_.enabled()) return out;
  for (const auto& [name, t] : params_.all()) {
    if (name.rfind("quant/", 0) == 0) out.push_back({name, t});
  }
  return out;
}

MaterializedNetwork materialize(const SupernetModel& supernet, const ArchSelection& sel) {
  auto resolved = resolve_selection(supernet.spec(), sel);
  auto spec = std::make_shared<const Supernet>(std::move(resolved.spec));
  const auto& old_net = supernet.spec();
  std::map<std::string, const PrimitiveOp*> old_ops;
  for (const auto& op : old_net.ops()) old_ops[op.name] = &op;

  ParameterStore params;
  for (const auto& op : spec->ops()) {
    if (!has_params(op)) continue;
    auto it = old_ops.find(op.name);
    if (it == old_ops.end()) throw ConfigError("materialize: no supernet operator named " + op.name);
    const auto& old = *it->second;
    const auto ps = param_shapes(*spec, op);
    const auto& in = spec->tensors()[op.inputs[0]];
    const auto& old_in = old_net.tensors()[old.inputs[0]];
    const auto& old_out = old_net.tensors()[old.output];
    const auto ow = supernet.params().get(op.name + ".w").values();
    std::vector<double> w(static_cast<std::size_t>(ps.weight.numel()));
    const std::int64_t cout = ps.out, old_cout = old_out.c_max;
    if (op.kind == PrimKind::Dense) {
      const std::int64_t positions = static_cast<std::int64_t>(in.h) * in.w;
      for (std::int64_t p = 0; p < positions; ++p)
        for (std::int64_t c = 0; c < in.c_max; ++c)
          for (std::int64_t o = 0; o < cout; ++o)
            w[(p * in.c_max + c) * cout + o] = ow[(p * old_in.c_max + c) * old_cout + o];
    } else {
      const std::int64_t taps = static_cast<std::int64_t>(op.kernel_h) * op.kernel_w;
      const std::int64_t cin = ps.weight.dim(2);
      const std::int64_t old_cin = op.kind == PrimKind::Depthwise ? 1 : old_in.c_max;
      for (std::int64_t t = 0; t < taps; ++t)
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t o = 0; o < cout; ++o)
            w[(t * cin + c) * cout + o] = ow[(t * old_cin + c) * old_cout + o];
    }
    params.add(op.name + ".w", Tensor::from(ps.weight, std::move(w), true));
    auto slice = [&](const std::string& suffix) {
      const auto ov = supernet.params().get(op.name + suffix).values();
      params.add(op.name + suffix,
                 Tensor::from(Shape{cout}, std::vector<double>(ov.begin(), ov.begin() + cout), true));
    };
    slice(".b");
    if (op.kind != PrimKind::Dense) slice(".gamma");
  }
  return MaterializedNetwork{spec, std::move(resolved.origin_layer), SupernetModel(spec, std::move(params))};
}

std::int64_t max_parameter_count(const Supernet& net) {
  std::int64_t n = 0;
  for (const auto& op : net.ops()) {
    if (!has_params(op)) continue;
    const auto ps = param_shapes(net, op);
    n += ps.weight.numel() + ps.out;
  }
  return n;
}

}  // namespace micronas
