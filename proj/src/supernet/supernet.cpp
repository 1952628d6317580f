#include "micronas/supernet/supernet.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "micronas/errors.hpp"

namespace micronas {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Input, "Input"},
    {LayerKind::Conv2D, "Conv2D"},
    {LayerKind::DepthwiseSeparableBlock, "DepthwiseSeparableBlock"},
    {LayerKind::InvertedBottleneckBlock, "InvertedBottleneckBlock"},
    {LayerKind::FullyConnected, "FullyConnected"},
    {LayerKind::AvgPool, "AvgPool"},
    {LayerKind::GlobalAvgPool, "GlobalAvgPool"},
    {LayerKind::AddSkip, "AddSkip"},
};

const std::set<std::string> kTopLevelKeys = {"name",   "description", "input_shape", "channel_grid",
                                             "layers", "head",        "search",      "resolved"};
const std::set<std::string> kLayerKeys = {"kind",      "name",           "kernel", "stride",
                                          "padding",   "channels",       "expansion",
                                          "optional_depth", "from"};

bool has_kernel(LayerKind k) {
  return k == LayerKind::Conv2D || k == LayerKind::DepthwiseSeparableBlock ||
         k == LayerKind::InvertedBottleneckBlock || k == LayerKind::AvgPool;
}

bool has_channels(LayerKind k) {
  return k == LayerKind::Conv2D || k == LayerKind::DepthwiseSeparableBlock ||
         k == LayerKind::InvertedBottleneckBlock || k == LayerKind::FullyConnected;
}

bool is_block(LayerKind k) {
  return k == LayerKind::DepthwiseSeparableBlock || k == LayerKind::InvertedBottleneckBlock;
}

int spatial_out(int in, int k, int stride, ad::Padding padding, const std::string& where) {
  if (padding == ad::Padding::Same) return (in + stride - 1) / stride;
  if (k > in) {
    throw ConfigError(where + ": kernel " + std::to_string(k) + " larger than input extent " +
                      std::to_string(in) + " under valid padding");
  }
  return (in - k) / stride + 1;
}

ChannelSpec parse_channels(const Json& j, const std::string& where) {
  ChannelSpec c;
  if (j.is_number_integer()) {
    c.fixed = j.get<int>();
  } else if (j.is_object()) {
    if (j.contains("fixed") == j.contains("options") || j.size() != 1) {
      throw ConfigError(where + ": channels must contain exactly one of 'fixed' or 'options'");
    }
    if (j.contains("fixed")) {
      if (!j["fixed"].is_number_integer()) throw ConfigError(where + ": 'fixed' must be an integer");
      c.fixed = j["fixed"].get<int>();
    } else {
      if (!j["options"].is_array() || j["options"].empty()) {
        throw ConfigError(where + ": 'options' must be a non-empty integer array");
      }
      for (const auto& o : j["options"]) {
        if (!o.is_number_integer()) throw ConfigError(where + ": channel options must be integers");
        c.options.push_back(o.get<int>());
      }
    }
  } else {
    throw ConfigError(where + ": channels must be an integer or an object");
  }
  if (c.is_decision()) {
    for (std::size_t i = 0; i < c.options.size(); ++i) {
      if (c.options[i] <= 0) throw ConfigError(where + ": channel options must be positive");
      if (i > 0 && c.options[i] <= c.options[i - 1]) {
        throw ConfigError(where + ": channel options must be strictly increasing");
      }
    }
  } else if (c.fixed <= 0) {
    throw ConfigError(where + ": channel count must be positive");
  }
  return c;
}

Json channels_to_json(const ChannelSpec& c) {
  Json j = Json::object();
  if (c.is_decision()) {
    j["options"] = c.options;
  } else {
    j["fixed"] = c.fixed;
  }
  return j;
}

LayerSpec parse_layer(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": layer must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kLayerKeys.count(it.key())) throw ConfigError(where + ": unknown field '" + it.key() + "'");
  }
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError(where + ": missing 'kind'");
  LayerSpec l;
  l.kind = layer_kind_from_string(j["kind"].get<std::string>());
  if (l.kind == LayerKind::Input) {
    throw ConfigError(where + ": the input is declared by 'input_shape', not as a layer");
  }
  if (j.contains("name")) l.name = j["name"].get<std::string>();

  if (has_kernel(l.kind)) {
    if (j.contains("kernel")) {
      const auto& k = j["kernel"];
      if (k.is_number_integer()) {
        l.kernel_h = l.kernel_w = k.get<int>();
      } else if (k.is_array() && k.size() == 2 && k[0].is_number_integer() && k[1].is_number_integer()) {
        l.kernel_h = k[0].get<int>();
        l.kernel_w = k[1].get<int>();
      } else {
        throw ConfigError(where + ": 'kernel' must be an integer or [h, w]");
      }
    } else if (is_block(l.kind)) {
      l.kernel_h = l.kernel_w = 3;
    } else {
      throw ConfigError(where + ": missing 'kernel'");
    }
    if (l.kernel_h <= 0 || l.kernel_w <= 0) throw ConfigError(where + ": kernel must be positive");
  } else if (j.contains("kernel")) {
    throw ConfigError(where + ": " + to_string(l.kind) + " takes no kernel");
  }

  if (j.contains("stride")) {
    if (!j["stride"].is_number_integer()) throw ConfigError(where + ": 'stride' must be an integer");
    l.stride = j["stride"].get<int>();
    if (l.stride <= 0) throw ConfigError(where + ": stride must be positive");
  }
  if (j.contains("padding")) {
    const auto p = j["padding"].get<std::string>();
    if (p == "same") {
      l.padding = ad::Padding::Same;
    } else if (p == "valid") {
      l.padding = ad::Padding::Valid;
    } else {
      throw ConfigError(where + ": padding must be 'same' or 'valid'");
    }
  }

  if (has_channels(l.kind)) {
    if (!j.contains("channels")) throw ConfigError(where + ": missing 'channels'");
    l.channels = parse_channels(j["channels"], where);
    if (l.kind == LayerKind::FullyConnected && l.channels.is_decision()) {
      throw ConfigError(where + ": FullyConnected widths are not searchable");
    }
  } else if (j.contains("channels")) {
    throw ConfigError(where + ": " + to_string(l.kind) + " takes no channels");
  }
  if (l.kind == LayerKind::InvertedBottleneckBlock) {
    if (!j.contains("expansion")) throw ConfigError(where + ": missing 'expansion'");
    l.expansion = parse_channels(j["expansion"], where + " expansion");
  } else if (j.contains("expansion")) {
    throw ConfigError(where + ": only InvertedBottleneckBlock takes 'expansion'");
  }
  if (j.contains("optional_depth")) {
    l.optional_depth = j["optional_depth"].get<bool>();
    if (l.optional_depth && !is_block(l.kind)) {
      throw ConfigError(where + ": optional_depth is only supported on blocks");
    }
  }
  if (l.kind == LayerKind::AddSkip) {
    if (!j.contains("from") || !j["from"].is_number_integer()) {
      throw ConfigError(where + ": AddSkip requires integer 'from'");
    }
    l.from = j["from"].get<int>();
  } else if (j.contains("from")) {
    throw ConfigError(where + ": only AddSkip takes 'from'");
  }
  return l;
}

Json layer_to_json(const LayerSpec& l) {
  Json j = Json::object();
  j["kind"] = to_string(l.kind);
  if (!l.name.empty()) j["name"] = l.name;
  if (has_kernel(l.kind)) j["kernel"] = {l.kernel_h, l.kernel_w};
  if (l.kind != LayerKind::FullyConnected && l.kind != LayerKind::GlobalAvgPool &&
      l.kind != LayerKind::AddSkip) {
    j["stride"] = l.stride;
    j["padding"] = l.padding == ad::Padding::Same ? "same" : "valid";
  }
  if (has_channels(l.kind)) j["channels"] = channels_to_json(l.channels);
  if (l.kind == LayerKind::InvertedBottleneckBlock) j["expansion"] = channels_to_json(l.expansion);
  if (l.optional_depth) j["optional_depth"] = true;
  if (l.kind == LayerKind::AddSkip) j["from"] = l.from;
  return j;
}

}  // namespace

std::string to_string(LayerKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames) {
    if (s == kn.name) return kn.kind;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::string to_string(PrimKind kind) {
  switch (kind) {
    case PrimKind::Conv: return "Conv2D";
    case PrimKind::Depthwise: return "DepthwiseConv2D";
    case PrimKind::Dense: return "FullyConnected";
    case PrimKind::AvgPool: return "AvgPool";
    case PrimKind::Add: return "Add";
    case PrimKind::Select: return "Select";
  }
  return "?";
}

int ArchSelection::at(const std::string& id) const {
  auto it = choices.find(id);
  if (it == choices.end()) throw ConfigError("selection has no choice for decision '" + id + "'");
  return it->second;
}

Supernet Supernet::parse(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return from_json(doc);
}

Supernet Supernet::from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("backbone document must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!kTopLevelKeys.count(it.key())) throw ConfigError("unknown top-level field '" + it.key() + "'");
  }
  Supernet net;
  try {
    net.name_ = doc.value("name", std::string("network"));
    if (!doc.contains("input_shape") || !doc["input_shape"].is_array() || doc["input_shape"].size() != 3) {
      throw ConfigError("'input_shape' must be [h, w, c]");
    }
    for (int i = 0; i < 3; ++i) {
      net.input_shape_[i] = doc["input_shape"][i].get<int>();
      if (net.input_shape_[i] <= 0) throw ConfigError("input_shape entries must be positive");
    }
    if (doc.contains("channel_grid")) {
      net.channel_grid_ = doc["channel_grid"].get<int>();
      if (net.channel_grid_ <= 0) throw ConfigError("channel_grid must be positive");
    }
    if (!doc.contains("layers") || !doc["layers"].is_array()) throw ConfigError("'layers' must be an array");
    int idx = 0;
    for (const auto& lj : doc["layers"]) {
      net.layers_.push_back(parse_layer(lj, "layer " + std::to_string(idx++)));
    }
    net.head_start_ = net.layers_.size();
    if (doc.contains("head")) {
      if (!doc["head"].is_array()) throw ConfigError("'head' must be an array");
      for (const auto& lj : doc["head"]) {
        net.layers_.push_back(parse_layer(lj, "layer " + std::to_string(idx++)));
      }
    }
    if (doc.contains("search")) net.search_ = doc["search"];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema violation: ") + e.what());
  }
  net.expand();
  return net;
}

Json Supernet::to_json() const {
  Json j = Json::object();
  j["name"] = name_;
  j["input_shape"] = {input_shape_[0], input_shape_[1], input_shape_[2]};
  j["channel_grid"] = channel_grid_;
  Json layers = Json::array();
  Json head = Json::array();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    (i < head_start_ ? layers : head).push_back(layer_to_json(layers_[i]));
  }
  j["layers"] = layers;
  j["head"] = head;
  if (!search_.is_null()) j["search"] = search_;
  return j;
}

int Supernet::intern_expr(const ChannelExpr& e) {
  for (std::size_t i = 0; i < exprs_.size(); ++i) {
    const auto& x = exprs_[i];
    if (x.kind == e.kind && x.value == e.value && x.decision == e.decision && x.skip == e.skip &&
        x.block == e.block) {
      return static_cast<int>(i);
    }
  }
  exprs_.push_back(e);
  return static_cast<int>(exprs_.size() - 1);
}

int Supernet::add_tensor(int h, int w, int c_max, int channels) {
  tensors_.push_back(TensorInfo{h, w, c_max, channels});
  return static_cast<int>(tensors_.size() - 1);
}

void Supernet::expand() {
  auto fixed_expr = [this](int c) {
    ChannelExpr e;
    e.kind = ChannelExpr::Kind::Fixed;
    e.value = c;
    return intern_expr(e);
  };
  auto width_decision = [this](const ChannelSpec& c, const std::string& id, int layer,
                               const std::string& where) {
    if (!c.is_decision()) return -1;
    for (int o : c.options) {
      if (o % channel_grid_ != 0) {
        throw ConfigError(where + ": channel option " + std::to_string(o) + " is not a multiple of the " +
                          std::to_string(channel_grid_) + "-channel grid");
      }
    }
    if (decision_index(id) >= 0) throw ConfigError("duplicate decision id '" + id + "'");
    decisions_.push_back(DecisionNode{id, DecisionKind::Width, c.options, layer});
    return static_cast<int>(decisions_.size() - 1);
  };
  auto channel_expr_for = [&](const ChannelSpec& c, int decision) {
    if (decision < 0) return fixed_expr(c.fixed);
    ChannelExpr e;
    e.kind = ChannelExpr::Kind::Width;
    e.decision = decision;
    return intern_expr(e);
  };

  const int input = add_tensor(input_shape_[0], input_shape_[1], input_shape_[2], fixed_expr(input_shape_[2]));
  int cur = input;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& L = layers_[li];
    const int i = static_cast<int>(li);
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(L.kind) + ")";
    const std::string base = L.name.empty() ? "L" + std::to_string(i) : L.name;
    const TensorInfo in = tensors_[cur];
    layer_input_.push_back(cur);

    auto push_op = [&](PrimitiveOp op) {
      op.layer = i;
      ops_.push_back(std::move(op));
      return &ops_.back();
    };

    switch (L.kind) {
      case LayerKind::Conv2D: {
        const int d = width_decision(L.channels, base + ".width", i, where);
        const int oh = spatial_out(in.h, L.kernel_h, L.stride, L.padding, where);
        const int ow = spatial_out(in.w, L.kernel_w, L.stride, L.padding, where);
        const int out = add_tensor(oh, ow, L.channels.max(), channel_expr_for(L.channels, d));
        PrimitiveOp op;
        op.kind = PrimKind::Conv;
        op.name = base + ".conv";
        op.inputs = {cur};
        op.output = out;
        op.kernel_h = L.kernel_h;
        op.kernel_w = L.kernel_w;
        op.stride = L.stride;
        op.padding = L.padding;
        op.relu = true;
        op.width_decision = d;
        push_op(op);
        cur = out;
        break;
      }
      case LayerKind::DepthwiseSeparableBlock:
      case LayerKind::InvertedBottleneckBlock: {
        const bool ibn = L.kind == LayerKind::InvertedBottleneckBlock;
        const int de = ibn ? width_decision(L.expansion, base + ".expansion", i, where) : -1;
        const int dw_width = width_decision(L.channels, base + ".width", i, where);
        int depth = -1;
        if (L.optional_depth) {
          if (L.channels.max() != in.c_max) {
            throw ConfigError(where + ": optional-depth block must keep the maximum channel count (" +
                              std::to_string(in.c_max) + " in, " + std::to_string(L.channels.max()) +
                              " out) so the skip branch can be merged");
          }
          const std::string id = base + ".depth";
          if (decision_index(id) >= 0) throw ConfigError("duplicate decision id '" + id + "'");
          decisions_.push_back(DecisionNode{id, DecisionKind::Depth, {kSkipOption, kBlockOption}, i});
          depth = static_cast<int>(decisions_.size() - 1);
        }
        const int oh = spatial_out(in.h, L.kernel_h, L.stride, L.padding, where);
        const int ow = spatial_out(in.w, L.kernel_w, L.stride, L.padding, where);
        int t = cur;
        if (ibn) {
          const int ex = add_tensor(in.h, in.w, L.expansion.max(), channel_expr_for(L.expansion, de));
          PrimitiveOp op;
          op.kind = PrimKind::Conv;
          op.name = base + ".expand";
          op.inputs = {t};
          op.output = ex;
          op.relu = true;
          op.width_decision = de;
          op.exists_decision = depth;
          op.exists_option = depth >= 0 ? kBlockOption : -1;
          push_op(op);
          t = ex;
        }
        const TensorInfo mid_in = tensors_[t];
        const int dwt = add_tensor(oh, ow, mid_in.c_max, mid_in.channels);
        {
          PrimitiveOp op;
          op.kind = PrimKind::Depthwise;
          op.name = base + ".dw";
          op.inputs = {t};
          op.output = dwt;
          op.kernel_h = L.kernel_h;
          op.kernel_w = L.kernel_w;
          op.stride = L.stride;
          op.padding = L.padding;
          op.relu = true;
          op.exists_decision = depth;
          op.exists_option = depth >= 0 ? kBlockOption : -1;
          push_op(op);
        }
        const int pwt = add_tensor(oh, ow, L.channels.max(), channel_expr_for(L.channels, dw_width));
        {
          PrimitiveOp op;
          op.kind = PrimKind::Conv;
          op.name = base + (ibn ? ".project" : ".pw");
          op.inputs = {dwt};
          op.output = pwt;
          op.relu = !ibn;
          op.width_decision = dw_width;
          op.exists_decision = depth;
          op.exists_option = depth >= 0 ? kBlockOption : -1;
          push_op(op);
        }
        if (depth < 0) {
          cur = pwt;
          break;
        }
        int skip = cur;
        if (oh != in.h || ow != in.w) {
          skip = add_tensor(oh, ow, in.c_max, in.channels);
          PrimitiveOp op;
          op.kind = PrimKind::AvgPool;
          op.name = base + ".skip_pool";
          op.inputs = {cur};
          op.output = skip;
          op.kernel_h = L.kernel_h;
          op.kernel_w = L.kernel_w;
          op.stride = L.stride;
          op.padding = ad::Padding::Same;
          op.exists_decision = depth;
          op.exists_option = kSkipOption;
          push_op(op);
        }
        if (tensors_[skip].h != oh || tensors_[skip].w != ow) {
          throw ConfigError(where + ": skip branch shape does not match block output");
        }
        ChannelExpr mix;
        mix.kind = ChannelExpr::Kind::Mix;
        mix.decision = depth;
        mix.skip = tensors_[skip].channels;
        mix.block = tensors_[pwt].channels;
        const int merged = add_tensor(oh, ow, in.c_max, intern_expr(mix));
        PrimitiveOp sel;
        sel.kind = PrimKind::Select;
        sel.name = base + ".select";
        sel.inputs = {skip, pwt};
        sel.output = merged;
        sel.select_decision = depth;
        push_op(sel);
        cur = merged;
        break;
      }
      case LayerKind::FullyConnected: {
        const int out = add_tensor(1, 1, L.channels.fixed, fixed_expr(L.channels.fixed));
        PrimitiveOp op;
        op.kind = PrimKind::Dense;
        op.name = base + ".fc";
        op.inputs = {cur};
        op.output = out;
        push_op(op);
        cur = out;
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::GlobalAvgPool: {
        PrimitiveOp op;
        op.kind = PrimKind::AvgPool;
        op.name = base + ".pool";
        op.inputs = {cur};
        if (L.kind == LayerKind::GlobalAvgPool) {
          op.kernel_h = in.h;
          op.kernel_w = in.w;
          op.stride = 1;
          op.padding = ad::Padding::Valid;
        } else {
          op.kernel_h = L.kernel_h;
          op.kernel_w = L.kernel_w;
          op.stride = L.stride;
          op.padding = L.padding;
        }
        const int oh = spatial_out(in.h, op.kernel_h, op.stride, op.padding, where);
        const int ow = spatial_out(in.w, op.kernel_w, op.stride, op.padding, where);
        op.output = add_tensor(oh, ow, in.c_max, in.channels);
        push_op(op);
        cur = op.output;
        break;
      }
      case LayerKind::AddSkip: {
        if (L.from >= i || L.from < -1) {
          throw ConfigError(where + ": 'from' must name an earlier layer (cycle or forward reference)");
        }
        const int other = L.from < 0 ? input : layer_output_[L.from];
        const auto& a = tensors_[cur];
        const auto& b = tensors_[other];
        if (a.h != b.h || a.w != b.w || a.c_max != b.c_max || a.channels != b.channels) {
          throw ConfigError(where + ": AddSkip operands have different shapes or channel choices");
        }
        PrimitiveOp op;
        op.kind = PrimKind::Add;
        op.name = base + ".add";
        op.inputs = {cur, other};
        op.output = add_tensor(a.h, a.w, a.c_max, a.channels);
        push_op(op);
        cur = op.output;
        break;
      }
      case LayerKind::Input:
        throw ConfigError(where + ": unexpected Input layer");
    }
    layer_output_.push_back(cur);
  }
  if (layers_.empty() || layers_.back().kind != LayerKind::FullyConnected) {
    throw ConfigError("the last layer must be FullyConnected (the classifier)");
  }
  output_tensor_ = cur;
  num_classes_ = layers_.back().channels.fixed;
}

int Supernet::decision_index(const std::string& id) const {
  for (std::size_t i = 0; i < decisions_.size(); ++i) {
    if (decisions_[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

std::uint64_t Supernet::num_architectures() const {
  std::uint64_t n = 1;
  for (const auto& d : decisions_) {
    if (n > std::numeric_limits<std::uint64_t>::max() / d.size()) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    n *= d.size();
  }
  return n;
}

void Supernet::validate(const ArchSelection& sel) const {
  for (const auto& d : decisions_) {
    auto it = sel.choices.find(d.id);
    if (it == sel.choices.end()) throw ConfigError("partial selection: no choice for decision '" + d.id + "'");
    if (it->second < 0 || it->second >= static_cast<int>(d.size())) {
      throw ConfigError("selection for '" + d.id + "' is out of range");
    }
  }
  for (const auto& [id, _] : sel.choices) {
    if (decision_index(id) < 0) throw ConfigError("selection names unknown decision '" + id + "'");
  }
}

ArchSelection Supernet::min_selection() const {
  ArchSelection s;
  for (const auto& d : decisions_) s.choices[d.id] = 0;
  return s;
}

ArchSelection Supernet::max_selection() const {
  ArchSelection s;
  for (const auto& d : decisions_) s.choices[d.id] = static_cast<int>(d.size()) - 1;
  return s;
}

int Supernet::channels(int tensor, const ArchSelection& sel) const {
  int e = tensors_.at(tensor).channels;
  while (true) {
    const auto& x = exprs_[e];
    switch (x.kind) {
      case ChannelExpr::Kind::Fixed:
        return x.value;
      case ChannelExpr::Kind::Width: {
        const auto& d = decisions_[x.decision];
        return d.options[sel.at(d.id)];
      }
      case ChannelExpr::Kind::Mix:
        e = sel.at(decisions_[x.decision].id) == kSkipOption ? x.skip : x.block;
        break;
    }
  }
}

bool Supernet::exists(const PrimitiveOp& op, const ArchSelection& sel) const {
  if (op.kind == PrimKind::Select) return false;
  if (op.exists_decision < 0) return true;
  return sel.at(decisions_[op.exists_decision].id) == op.exists_option;
}

std::vector<ArchSelection> enumerate_architectures(const Supernet& net, std::uint64_t cap) {
  const auto total = net.num_architectures();
  if (total > cap) {
    throw ConfigError("search space has " + std::to_string(total) + " architectures, above the cap of " +
                      std::to_string(cap));
  }
  const auto& ds = net.decisions();
  std::vector<ArchSelection> out;
  out.reserve(total);
  std::vector<int> idx(ds.size(), 0);
  for (std::uint64_t n = 0; n < total; ++n) {
    ArchSelection s;
    for (std::size_t i = 0; i < ds.size(); ++i) s.choices[ds[i].id] = idx[i];
    out.push_back(std::move(s));
    for (std::size_t i = ds.size(); i-- > 0;) {
      if (++idx[i] < static_cast<int>(ds[i].size())) break;
      idx[i] = 0;
    }
  }
  return out;
}

DiscreteSpec resolve_selection(const Supernet& net, const ArchSelection& sel) {
  net.validate(sel);
  Json doc = net.to_json();
  Json layers = Json::array();
  Json head = Json::array();
  std::vector<int> origin;
  // new index of the layer producing the equivalent of each old layer's output; -1 = input
  std::vector<int> remap(net.layers().size(), -1);
  int last = -1;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    LayerSpec L = net.layers()[i];
    const std::string base = L.name.empty() ? "L" + std::to_string(i) : L.name;
    bool keep = true;
    if (L.optional_depth && sel.at(base + ".depth") == kSkipOption) {
      const auto& in = net.tensors()[net.layer_input(i)];
      const auto& out = net.tensors()[net.layer_output(i)];
      if (in.h != out.h || in.w != out.w) {
        LayerSpec pool;
        pool.kind = LayerKind::AvgPool;
        pool.name = L.name.empty() ? "" : L.name + "_skip";
        pool.kernel_h = L.kernel_h;
        pool.kernel_w = L.kernel_w;
        pool.stride = L.stride;
        pool.padding = ad::Padding::Same;
        L = pool;
      } else {
        keep = false;
      }
    } else {
      L.optional_depth = false;
      if (L.channels.is_decision()) L.channels = ChannelSpec{L.channels.options[sel.at(base + ".width")], {}};
      if (L.expansion.is_decision()) {
        L.expansion = ChannelSpec{L.expansion.options[sel.at(base + ".expansion")], {}};
      }
      if (L.kind == LayerKind::AddSkip) L.from = L.from < 0 ? -1 : remap[L.from];
    }
    if (keep) {
      // unnamed layers get their ids from position, so pin the original label
      if (L.name.empty()) L.name = "L" + std::to_string(i);
      auto& target = i < net.head_start() ? layers : head;
      target.push_back(layer_to_json(L));
      origin.push_back(static_cast<int>(i));
      last = static_cast<int>(origin.size()) - 1;
    }
    remap[i] = last;
  }
  doc["layers"] = layers;
  doc["head"] = head;
  return DiscreteSpec{Supernet::from_json(doc), std::move(origin)};
}

Json export_layers(const Supernet& net) {
  Json out = Json::array();
  const auto& in = net.tensors()[0];
  out.push_back({{"kind", "Input"}, {"h", in.h}, {"w", in.w}, {"c", in.c_max}});
  const auto sel = net.min_selection();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& L = net.layers()[i];
    Json j = Json::object();
    j["kind"] = to_string(L.kind);
    if (L.kind == LayerKind::AvgPool || L.kind == LayerKind::GlobalAvgPool) {
      const auto& t = net.tensors()[net.layer_input(i)];
      j["h"] = L.kind == LayerKind::AvgPool ? L.kernel_h : t.h;
      j["w"] = L.kind == LayerKind::AvgPool ? L.kernel_w : t.w;
      j["s"] = L.stride;
    } else if (L.kind == LayerKind::FullyConnected) {
      j["c"] = L.channels.fixed;
    } else if (L.kind == LayerKind::AddSkip) {
      j["from"] = L.from;
    } else {
      j["h"] = L.kernel_h;
      j["w"] = L.kernel_w;
      j["c"] = net.channels(net.layer_output(i), sel);
      j["s"] = L.stride;
      if (L.kind == LayerKind::InvertedBottleneckBlock) j["e"] = L.expansion.fixed;
    }
    const auto& ti = net.tensors()[net.layer_input(i)];
    const auto& to = net.tensors()[net.layer_output(i)];
    j["in"] = {ti.h, ti.w, net.channels(net.layer_input(i), sel)};
    j["out"] = {to.h, to.w, net.channels(net.layer_output(i), sel)};
    out.push_back(j);
  }
  return out;
}

Json architecture_document(const Supernet& discrete) {
  if (!discrete.decisions().empty()) {
    throw ConfigError("architecture documents describe decision-free networks");
  }
  Json doc = discrete.to_json();
  doc["resolved"] = export_layers(discrete);
  return doc;
}

Json selection_to_json(const ArchSelection& sel) {
  Json j = Json::object();
  for (const auto& [id, v] : sel.choices) j[id] = v;
  return j;
}

ArchSelection selection_from_json(const Json& j) {
  ArchSelection s;
  for (auto it = j.begin(); it != j.end(); ++it) s.choices[it.key()] = it.value().get<int>();
  return s;
}

}  // namespace micronas
