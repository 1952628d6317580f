#include "micronas/resources/resources.hpp"

#include <cmath>

#include "micronas/errors.hpp"

namespace micronas {

using ad::Shape;
using ad::Tensor;

std::int64_t packed_bytes(std::int64_t elements, int bits) { return (elements * bits + 7) / 8; }

std::int64_t layer_ops(PrimKind kind, int kernel_h, int kernel_w, std::int64_t in_h, std::int64_t in_w,
                       std::int64_t in_c, std::int64_t out_h, std::int64_t out_w, std::int64_t out_c) {
  const std::int64_t taps = static_cast<std::int64_t>(kernel_h) * kernel_w;
  switch (kind) {
    case PrimKind::Conv:
      return 2 * out_h * out_w * out_c * taps * in_c;
    case PrimKind::Depthwise:
      return 2 * out_h * out_w * out_c * taps;
    case PrimKind::Dense:
      return 2 * in_h * in_w * in_c * out_c;
    case PrimKind::AvgPool:
    case PrimKind::Add:
    case PrimKind::Select:
      return 0;
  }
  return 0;
}

ParamCount layer_params(PrimKind kind, int kernel_h, int kernel_w, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t in_c, std::int64_t out_c) {
  const std::int64_t taps = static_cast<std::int64_t>(kernel_h) * kernel_w;
  switch (kind) {
    case PrimKind::Conv:
      return {taps * in_c * out_c, out_c};
    case PrimKind::Depthwise:
      return {taps * in_c, in_c};
    case PrimKind::Dense:
      return {in_h * in_w * in_c * out_c, out_c};
    default:
      return {};
  }
}

std::int64_t layer_param_bytes(const ParamCount& p, int weight_bits) {
  if (weight_bits != 8 && weight_bits != 4) {
    throw ConfigError("unsupported weight bit-width " + std::to_string(weight_bits) + " (expected 8 or 4)");
  }
  return packed_bytes(p.weights, weight_bits) + p.biases * 4;
}

std::int64_t node_working_bytes(const std::vector<std::int64_t>& input_elements,
                                const std::vector<std::int64_t>& output_elements, int activation_bits) {
  if (activation_bits != 8 && activation_bits != 4 && activation_bits != 32) {
    throw ConfigError("unsupported activation bit-width " + std::to_string(activation_bits));
  }
  std::int64_t total = 0;
  for (auto e : input_elements) total += packed_bytes(e, activation_bits);
  for (auto e : output_elements) total += packed_bytes(e, activation_bits);
  return total;
}

ResourceReport discrete_resources(const Supernet& net, const ArchSelection& sel, BitWidths bits) {
  net.validate(sel);
  ResourceReport r;
  r.bits = bits;
  for (const auto& op : net.ops()) {
    if (!net.exists(op, sel)) continue;
    const auto& tin = net.tensors()[op.inputs[0]];
    const auto& tout = net.tensors()[op.output];
    const std::int64_t cin = net.channels(op.inputs[0], sel);
    const std::int64_t cout = net.channels(op.output, sel);
    NodeReport n;
    n.id = op.name;
    n.kind = to_string(op.kind);
    std::vector<std::int64_t> in_el, out_el;
    for (int t : op.inputs) {
      const auto& ti = net.tensors()[t];
      in_el.push_back(static_cast<std::int64_t>(ti.h) * ti.w * net.channels(t, sel));
      n.input_bytes.push_back(packed_bytes(in_el.back(), bits.activation_bits));
    }
    out_el.push_back(static_cast<std::int64_t>(tout.h) * tout.w * cout);
    n.output_bytes.push_back(packed_bytes(out_el.back(), bits.activation_bits));
    n.working_bytes = node_working_bytes(in_el, out_el, bits.activation_bits);
    n.ops = layer_ops(op.kind, op.kernel_h, op.kernel_w, tin.h, tin.w, cin, tout.h, tout.w, cout);
    const auto pc = layer_params(op.kind, op.kernel_h, op.kernel_w, tin.h, tin.w, cin, cout);
    n.param_count = pc.total();
    n.param_bytes = pc.total() > 0 ? layer_param_bytes(pc, bits.weight_bits) : 0;
    r.total_ops += n.ops;
    r.param_count += n.param_count;
    r.param_bytes += n.param_bytes;
    if (r.nodes.empty() || n.working_bytes > r.peak_working_bytes) {
      r.peak_working_bytes = n.working_bytes;
      r.peak_node_id = n.id;
    }
    r.nodes.push_back(std::move(n));
  }
  return r;
}

ResourceReport discrete_resources(const Supernet& net, BitWidths bits) {
  return discrete_resources(net, ArchSelection{}, bits);
}

namespace {

Tensor constant(double v) { return Tensor::scalar(v); }

Tensor option_prob(const Tensor& z, std::size_t k) {
  std::vector<double> e(static_cast<std::size_t>(z.numel()), 0.0);
  e[k] = 1.0;
  return ad::dot_constant(z, e);
}

class ExpectedChannels {
 public:
  ExpectedChannels(const Supernet& net, const DecisionWeights& z) : net_(net), z_(z) {
    memo_.resize(net.channel_exprs().size());
  }

  const Tensor& of_expr(int e) {
    if (memo_[e].defined()) return memo_[e];
    const auto& x = net_.channel_exprs()[e];
    switch (x.kind) {
      case ChannelExpr::Kind::Fixed:
        memo_[e] = constant(x.value);
        break;
      case ChannelExpr::Kind::Width: {
        const auto& d = net_.decisions()[x.decision];
        std::vector<double> widths(d.options.begin(), d.options.end());
        memo_[e] = ad::dot_constant(row(x.decision), widths);
        break;
      }
      case ChannelExpr::Kind::Mix: {
        const auto& z = row(x.decision);
        Tensor skip = ad::mul(option_prob(z, kSkipOption), of_expr(x.skip));
        Tensor block = ad::mul(option_prob(z, kBlockOption), of_expr(x.block));
        memo_[e] = ad::add(skip, block);
        break;
      }
    }
    return memo_[e];
  }

  const Tensor& of_tensor(int t) { return of_expr(net_.tensors()[t].channels); }

  const Tensor& row(int decision) {
    const auto& d = net_.decisions()[decision];
    auto it = z_.find(d.id);
    if (it == z_.end()) throw ConfigError("no decision weights supplied for '" + d.id + "'");
    return it->second;
  }

 private:
  const Supernet& net_;
  const DecisionWeights& z_;
  std::vector<Tensor> memo_;
};

}  // namespace

ExpectedResources expected_resources(const Supernet& net, const DecisionWeights& z, BitWidths bits) {
  if (bits.weight_bits != 8 && bits.weight_bits != 4) {
    throw ConfigError("unsupported weight bit-width " + std::to_string(bits.weight_bits));
  }
  for (const auto& d : net.decisions()) {
    auto it = z.find(d.id);
    if (it == z.end()) throw ConfigError("no decision weights supplied for '" + d.id + "'");
    if (it->second.numel() != static_cast<std::int64_t>(d.size())) {
      throw ShapeError("decision weights for '" + d.id + "' have the wrong length");
    }
    double s = 0.0;
    for (double v : it->second.values()) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
      throw NumericError("decision weights for '" + d.id + "' sum to " + std::to_string(s) + ", not 1");
    }
  }
  ExpectedChannels ec(net, z);
  const double wbyte = bits.weight_bits / 8.0;
  const double abyte = bits.activation_bits / 8.0;
  std::vector<Tensor> size_terms, ops_terms, working;
  for (const auto& op : net.ops()) {
    if (op.kind == PrimKind::Select) continue;
    const auto& tin = net.tensors()[op.inputs[0]];
    const auto& tout = net.tensors()[op.output];
    const Tensor& cin = ec.of_tensor(op.inputs[0]);
    const Tensor& cout = ec.of_tensor(op.output);
    const double taps = static_cast<double>(op.kernel_h) * op.kernel_w;
    const double out_pos = static_cast<double>(tout.h) * tout.w;
    const double in_pos = static_cast<double>(tin.h) * tin.w;

    Tensor ops, size;
    switch (op.kind) {
      case PrimKind::Conv: {
        const Tensor cc = ad::mul(cin, cout);
        ops = ad::scale(cc, 2.0 * out_pos * taps);
        size = ad::add(ad::scale(cc, taps * wbyte), ad::scale(cout, 4.0));
        break;
      }
      case PrimKind::Depthwise:
        ops = ad::scale(cin, 2.0 * out_pos * taps);
        size = ad::add(ad::scale(cin, taps * wbyte), ad::scale(cin, 4.0));
        break;
      case PrimKind::Dense:
        ops = ad::scale(ad::mul(cin, cout), 2.0 * in_pos);
        size = ad::add(ad::scale(ad::mul(cin, cout), in_pos * wbyte), ad::scale(cout, 4.0));
        break;
      default:
        break;
    }
    Tensor node_mem = ad::scale(cout, out_pos * abyte);
    for (int t : op.inputs) {
      const auto& ti = net.tensors()[t];
      node_mem = ad::add(node_mem, ad::scale(ec.of_tensor(t), static_cast<double>(ti.h) * ti.w * abyte));
    }
    if (op.exists_decision >= 0) {
      const Tensor p = option_prob(ec.row(op.exists_decision), static_cast<std::size_t>(op.exists_option));
      node_mem = ad::mul(p, node_mem);
      if (ops.defined()) ops = ad::mul(p, ops);
      if (size.defined()) size = ad::mul(p, size);
    }
    if (ops.defined()) ops_terms.push_back(ops);
    if (size.defined()) size_terms.push_back(size);
    working.push_back(node_mem);
  }
  auto total = [](const std::vector<Tensor>& terms) {
    if (terms.empty()) return constant(0.0);
    Tensor acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return acc;
  };
  ExpectedResources r;
  r.size_bytes = total(size_terms);
  r.ops = total(ops_terms);
  r.working_bytes = working.empty() ? constant(0.0) : ad::maximum(working);
  return r;
}

std::optional<std::int64_t> Budget::effective_sram() const {
  if (!sram_bytes) return std::nullopt;
  return *sram_bytes - interpreter_sram_overhead - persistent_buffer_bytes;
}

std::optional<std::int64_t> Budget::effective_flash() const {
  if (!flash_bytes) return std::nullopt;
  return *flash_bytes - interpreter_flash_overhead - graph_metadata_bytes;
}

void Budget::validate() const {
  auto positive = [](const std::optional<std::int64_t>& v, const char* what) {
    if (v && *v <= 0) throw ConfigError(std::string(what) + " budget must be positive");
  };
  positive(flash_bytes, "flash");
  positive(sram_bytes, "SRAM");
  positive(max_ops, "ops");
  if (interpreter_sram_overhead < 0 || interpreter_flash_overhead < 0 || persistent_buffer_bytes < 0 ||
      graph_metadata_bytes < 0) {
    throw ConfigError("budget overheads must be non-negative");
  }
}

BudgetCheck check_budget(const ResourceReport& report, const Budget& budget) {
  BudgetCheck c;
  if (auto f = budget.effective_flash()) {
    c.flash_margin = *f - report.param_bytes;
    if (*c.flash_margin < 0) c.violated.push_back("flash");
  }
  if (auto s = budget.effective_sram()) {
    c.sram_margin = *s - report.peak_working_bytes;
    if (*c.sram_margin < 0) c.violated.push_back("sram");
  }
  if (budget.max_ops) {
    c.ops_margin = *budget.max_ops - report.total_ops;
    if (*c.ops_margin < 0) c.violated.push_back("ops");
  }
  c.pass = c.violated.empty();
  return c;
}

Json report_to_json(const ResourceReport& r) {
  Json j = Json::object();
  j["total_ops"] = r.total_ops;
  j["param_count"] = r.param_count;
  j["param_bytes"] = r.param_bytes;
  j["peak_working_bytes"] = r.peak_working_bytes;
  j["peak_node_id"] = r.peak_node_id;
  j["weight_bits"] = r.bits.weight_bits;
  j["activation_bits"] = r.bits.activation_bits;
  Json nodes = Json::array();
  for (const auto& n : r.nodes) {
    nodes.push_back({{"id", n.id},
                     {"kind", n.kind},
                     {"input_bytes", n.input_bytes},
                     {"output_bytes", n.output_bytes},
                     {"working_bytes", n.working_bytes},
                     {"ops", n.ops},
                     {"param_count", n.param_count},
                     {"param_bytes", n.param_bytes}});
  }
  j["nodes"] = nodes;
  return j;
}

Json budget_check_to_json(const BudgetCheck& c) {
  Json j = Json::object();
  j["pass"] = c.pass;
  auto margin = [](const std::optional<std::int64_t>& m) { return m ? Json(*m) : Json(nullptr); };
  j["flash_margin_bytes"] = margin(c.flash_margin);
  j["sram_margin_bytes"] = margin(c.sram_margin);
  j["ops_margin"] = margin(c.ops_margin);
  j["violated"] = c.violated;
  return j;
}

Json budget_to_json(const Budget& b) {
  auto opt = [](const std::optional<std::int64_t>& m) { return m ? Json(*m) : Json(nullptr); };
  return Json{{"flash_bytes", opt(b.flash_bytes)},
              {"sram_bytes", opt(b.sram_bytes)},
              {"max_ops", opt(b.max_ops)},
              {"interpreter_sram_overhead", b.interpreter_sram_overhead},
              {"interpreter_flash_overhead", b.interpreter_flash_overhead},
              {"persistent_buffer_bytes", b.persistent_buffer_bytes},
              {"graph_metadata_bytes", b.graph_metadata_bytes}};
}

}  // namespace micronas
