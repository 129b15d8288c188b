#include "t4c/model.hpp"

#include <algorithm>
#include <cmath>

#include "t4c/error.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

std::size_t ModelConfig::prior_width() const {
  return prior_mode == PriorMode::kFull ? 3 * static_cast<std::size_t>(num_clusters) : 3;
}

std::size_t ModelConfig::static_input_width() const {
  return static_cast<std::size_t>(emb_importance + emb_oneway + emb_tunnel + emb_lanes) + kNumContinuous +
         prior_width();
}

std::size_t ModelConfig::volume_input_width() const {
  return kCounterSlice + static_cast<std::size_t>(num_clusters) + 1;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("model config: " + what);
  };
  require(emb_importance > 0 && emb_oneway > 0 && emb_tunnel > 0 && emb_lanes > 0, "embedding dims must be > 0");
  require(!volume_hidden.empty(), "volume_hidden needs at least one layer");
  for (int h : volume_hidden) require(h > 0, "volume_hidden sizes must be > 0");
  require(static_hidden > 0 && hidden > 0, "widths must be > 0");
  require(gnn_layers >= 0, "gnn_layers must be >= 0");
  require(head_blocks >= 0, "head_blocks must be >= 0");
  for (double l : lambda) require(l > 0.0 && std::isfinite(l), "lambda components must be > 0");
  require(num_clusters >= 1, "num_clusters must be >= 1");
  require(cc_head == 3 || cc_head == 4, "cc_head must be 3 or 4");
}

json to_json(const ModelConfig& c) {
  return json{{"emb_importance", c.emb_importance},
              {"emb_oneway", c.emb_oneway},
              {"emb_tunnel", c.emb_tunnel},
              {"emb_lanes", c.emb_lanes},
              {"volume_hidden", c.volume_hidden},
              {"static_hidden", c.static_hidden},
              {"gnn_layers", c.gnn_layers},
              {"hidden", c.hidden},
              {"head_blocks", c.head_blocks},
              {"lambda", c.lambda},
              {"prior_mode", to_string(c.prior_mode)},
              {"num_clusters", c.num_clusters},
              {"cc_head", c.cc_head},
              {"use_prior", c.use_prior},
              {"use_static", c.use_static},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.emb_importance = j.at("emb_importance").get<int>();
    c.emb_oneway = j.at("emb_oneway").get<int>();
    c.emb_tunnel = j.at("emb_tunnel").get<int>();
    c.emb_lanes = j.at("emb_lanes").get<int>();
    c.volume_hidden = j.at("volume_hidden").get<std::vector<int>>();
    c.static_hidden = j.at("static_hidden").get<int>();
    c.gnn_layers = j.at("gnn_layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.head_blocks = j.at("head_blocks").get<int>();
    c.lambda = j.at("lambda").get<std::array<double, 3>>();
    c.prior_mode = parse_prior_mode(j.at("prior_mode").get<std::string>());
    c.num_clusters = j.at("num_clusters").get<int>();
    c.cc_head = j.at("cc_head").get<int>();
    c.use_prior = j.at("use_prior").get<bool>();
    c.use_static = j.at("use_static").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const ModelConfig& cfg) {
  json j = to_json(cfg);
  j.erase("seed");
  return text::hex64(text::fnv1a(j.dump()));
}

int volume_class_index(int vol_class) {
  switch (vol_class) {
    case 1: return 0;
    case 3: return 1;
    case 5: return 2;
    default: throw ValidationError("vol_class must be 1, 3 or 5, got " + std::to_string(vol_class));
  }
}

LabelTargets make_targets(const SegmentGraph& g, const LabelBundle* labels, const NormStats& norm, int cc_head) {
  const std::size_t n = g.num_segments;
  LabelTargets t;
  t.cc.assign(n, nd::kMasked);
  t.vol.assign(n, nd::kMasked);
  t.speed.assign(n, 0.0);
  t.speed_mask.assign(n, 0);
  if (!labels) return t;
  for (const auto& [seg, l] : labels->edges) {
    const auto it = g.index.find(seg);
    if (it == g.index.end()) throw DanglingReferenceError("labels " + labels->record_id, "segment", seg);
    const auto i = it->second;
    if (l.cc) {
      if (cc_head == 4) {
        t.cc[i] = *l.cc;
      } else if (*l.cc >= 1) {
        t.cc[i] = *l.cc - 1;
      }
    }
    if (l.speed_kph) {
      t.speed[i] = (*l.speed_kph - norm.speed_mean) / norm.speed_std;
      t.speed_mask[i] = 1;
    }
    if (l.vol_class) t.vol[i] = volume_class_index(*l.vol_class);
  }
  return t;
}

std::vector<double> inverse_frequency_weights(const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<double> w(counts.size(), 1.0);
  if (total == 0) return w;
  const double k = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double raw = counts[i] == 0 ? 10.0 : static_cast<double>(total) / (k * static_cast<double>(counts[i]));
    w[i] = std::clamp(raw, 0.1, 10.0);
  }
  return w;
}

ClassWeights fit_class_weights(const std::vector<LabelTargets>& targets, int cc_head) {
  std::vector<std::size_t> cc(static_cast<std::size_t>(cc_head), 0), vol(3, 0);
  for (const auto& t : targets) {
    for (int y : t.cc) {
      if (y != nd::kMasked) ++cc[static_cast<std::size_t>(y)];
    }
    for (int y : t.vol) {
      if (y != nd::kMasked) ++vol[static_cast<std::size_t>(y)];
    }
  }
  return {inverse_frequency_weights(cc), inverse_frequency_weights(vol)};
}

double combine_losses(double l_c, double l_s, double l_v, const std::array<double, 3>& lambda) {
  return (lambda[0] * l_c + lambda[1] * l_s) + lambda[2] * l_v;
}

LossTerms compute_loss(const ModelOutputs& out, const LabelTargets& t, const ClassWeights& w,
                       const std::array<double, 3>& lambda) {
  auto lc = nd::weighted_cross_entropy(out.cc_logits, t.cc, w.cc);
  auto ls = nd::mse(out.speed, t.speed, t.speed_mask);
  auto lv = nd::weighted_cross_entropy(out.vol_logits, t.vol, w.vol);
  nd::Var total = nd::add(nd::add(nd::scale(lc.loss, lambda[0]), nd::scale(ls.loss, lambda[1])),
                          nd::scale(lv.loss, lambda[2]));
  LossReport r;
  r.L_c = lc.loss.item();
  r.L_s = ls.loss.item();
  r.L_v = lv.loss.item();
  r.n_c = lc.count;
  r.n_s = ls.count;
  r.n_v = lv.count;
  r.L = total.item();
  return {total, r};
}

SegmentProbabilities predict_probabilities(const PredictionBundle& pred, const NormStats& norm) {
  const std::size_t n = pred.cc_logits.rows();
  SegmentProbabilities p;
  p.cc.resize(n);
  p.vol.resize(n);
  p.speed_kph.resize(n);
  auto softmax = [](std::span<const double> row, std::span<double> out) {
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      out[j] = std::exp(row[j] - mx);
      z += out[j];
    }
    for (auto& v : out) v /= z;
  };
  const std::size_t cc_width = pred.cc_logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    if (cc_width == 3) {
      softmax(pred.cc_logits.row(i), p.cc[i]);
    } else {
      // Drop the undefined code and renormalise over green/yellow/red.
      std::span<const double> row = pred.cc_logits.row(i).subspan(1, 3);
      softmax(row, p.cc[i]);
    }
    softmax(pred.vol_logits.row(i), p.vol[i]);
    p.speed_kph[i] = pred.speed_pred.values[i] * norm.speed_std + norm.speed_mean;
  }
  return p;
}

namespace {

enum class Init { kXavier, kZeros, kEmbedding };

struct ParamSpec {
  std::string name;
  nd::Shape shape;
  Init init;
};

std::vector<ParamSpec> layout(const ModelConfig& c) {
  std::vector<ParamSpec> specs;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    specs.push_back({name + ".w", {in, out}, Init::kXavier});
    specs.push_back({name + ".b", {out}, Init::kZeros});
  };
  const auto u = [](int v) { return static_cast<std::size_t>(v); };
  specs.push_back({"emb.importance", {kImportanceVocab, u(c.emb_importance)}, Init::kEmbedding});
  specs.push_back({"emb.oneway", {2, u(c.emb_oneway)}, Init::kEmbedding});
  specs.push_back({"emb.tunnel", {2, u(c.emb_tunnel)}, Init::kEmbedding});
  specs.push_back({"emb.lanes", {kLanesVocab, u(c.emb_lanes)}, Init::kEmbedding});
  lin("static", c.static_input_width(), u(c.static_hidden));
  std::size_t in = c.volume_input_width();
  for (std::size_t l = 0; l < c.volume_hidden.size(); ++l) {
    lin("volume." + std::to_string(l), in, u(c.volume_hidden[l]));
    in = u(c.volume_hidden[l]);
  }
  lin("encoder", in + u(c.static_hidden), u(c.hidden));
  for (int l = 0; l < c.gnn_layers; ++l) {
    const std::string p = "gnn." + std::to_string(l);
    specs.push_back({p + ".w_self", {u(c.hidden), u(c.hidden)}, Init::kXavier});
    specs.push_back({p + ".w_nbr", {u(c.hidden), u(c.hidden)}, Init::kXavier});
    specs.push_back({p + ".b", {u(c.hidden)}, Init::kZeros});
  }
  const std::pair<const char*, std::size_t> heads[] = {
      {"head.cc", u(c.cc_head)}, {"head.speed", 1}, {"head.vol", 3}};
  for (const auto& [name, width] : heads) {
    for (int b = 0; b < c.head_blocks; ++b) {
      const std::string p = std::string(name) + ".block" + std::to_string(b);
      lin(p + ".fc1", u(c.hidden), u(c.hidden));
      lin(p + ".fc2", u(c.hidden), u(c.hidden));
    }
    lin(std::string(name) + ".out", u(c.hidden), width);
  }
  return specs;
}

nd::Var residual_head(const nd::ParamStore& p, const std::string& name, int blocks, nd::Var z) {
  for (int b = 0; b < blocks; ++b) {
    const std::string pre = name + ".block" + std::to_string(b);
    auto inner = nd::relu(nd::linear(z, p.get(pre + ".fc1.w"), p.get(pre + ".fc1.b")));
    z = nd::add(z, nd::linear(inner, p.get(pre + ".fc2.w"), p.get(pre + ".fc2.b")));
  }
  return nd::linear(z, p.get(name + ".out.w"), p.get(name + ".out.b"));
}

}  // namespace

TrafficModel::TrafficModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  nd::Initializer init(config_.seed);
  for (const auto& s : layout(config_)) {
    switch (s.init) {
      case Init::kXavier: params_.add(s.name, init.xavier(s.shape[0], s.shape[1])); break;
      case Init::kZeros: params_.add(s.name, nd::Tensor::zeros(s.shape)); break;
      case Init::kEmbedding: params_.add(s.name, init.normal(s.shape, 0.1)); break;
    }
  }
}

TrafficModel::TrafficModel(ModelConfig config, nd::ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto specs = layout(config_);
  if (specs.size() != params_.entries().size()) {
    throw ValidationError("checkpoint has " + std::to_string(params_.entries().size()) + " tensors, config expects " +
                          std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& e = params_.entries()[i];
    if (e.name != specs[i].name || e.param.shape() != specs[i].shape) {
      throw ValidationError("checkpoint tensor " + e.name + " " + nd::to_string(e.param.shape()) +
                            " does not match expected " + specs[i].name + " " + nd::to_string(specs[i].shape));
    }
  }
}

ModelOutputs TrafficModel::forward(const SegmentGraph& graph, const FeatureBundle& f) const {
  const auto& c = config_;
  const auto& p = params_;
  const std::size_t n = f.num_segments;
  if (graph.num_segments != n) throw nd::ShapeError("forward: features do not match the segment graph");
  if (f.num_clusters != c.num_clusters || f.prior.cols() != c.prior_width()) {
    throw nd::ShapeError("forward: feature bundle (K=" + std::to_string(f.num_clusters) + ", prior width " +
                         std::to_string(f.prior.cols()) + ") does not match model config");
  }

  // Static encoder.
  nd::Var static_in;
  {
    std::vector<nd::Var> parts;
    if (c.use_static) {
      parts.push_back(nd::embedding_lookup(p.get("emb.importance"), f.categorical[0]));
      parts.push_back(nd::embedding_lookup(p.get("emb.oneway"), f.categorical[1]));
      parts.push_back(nd::embedding_lookup(p.get("emb.tunnel"), f.categorical[2]));
      parts.push_back(nd::embedding_lookup(p.get("emb.lanes"), f.categorical[3]));
      parts.push_back(nd::constant(f.continuous));
    } else {
      const std::size_t w = static_cast<std::size_t>(c.emb_importance + c.emb_oneway + c.emb_tunnel + c.emb_lanes) +
                            kNumContinuous;
      parts.push_back(nd::constant(nd::Tensor::zeros({n, w})));
    }
    parts.push_back(nd::constant(c.use_prior ? f.prior : nd::Tensor::zeros(f.prior.shape)));
    static_in = nd::concat_cols(parts);
  }
  auto static_feat = nd::relu(nd::linear(static_in, p.get("static.w"), p.get("static.b")));

  // Volume MLP over the segment's counter slice and the record-level volume context.
  nd::Tensor global = f.global;
  if (!c.use_prior) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < static_cast<std::size_t>(c.num_clusters); ++k) global.at(i, k) = 0.0;
    }
  }
  nd::Var vol = nd::concat_cols({nd::constant(f.counter), nd::constant(std::move(global))});
  for (std::size_t l = 0; l < c.volume_hidden.size(); ++l) {
    const std::string pre = "volume." + std::to_string(l);
    vol = nd::relu(nd::linear(vol, p.get(pre + ".w"), p.get(pre + ".b")));
  }

  nd::Var h = nd::relu(nd::linear(nd::concat_cols({vol, static_feat}), p.get("encoder.w"), p.get("encoder.b")));
  for (int l = 0; l < c.gnn_layers; ++l) {
    const std::string pre = "gnn." + std::to_string(l);
    auto self_term = nd::matmul(h, p.get(pre + ".w_self"));
    auto nbr_term = nd::matmul(nd::mean_neighbor_aggregate(h, graph.adjacency), p.get(pre + ".w_nbr"));
    h = nd::relu(nd::add_bias(nd::add(self_term, nbr_term), p.get(pre + ".b")));
  }

  ModelOutputs out;
  out.cc_logits = residual_head(p, "head.cc", c.head_blocks, h);
  out.speed = residual_head(p, "head.speed", c.head_blocks, h);
  out.vol_logits = residual_head(p, "head.vol", c.head_blocks, h);
  return out;
}

PredictionBundle TrafficModel::predict(const SegmentGraph& graph, const FeatureBundle& features) const {
  const auto out = forward(graph, features);
  return {out.cc_logits.value(), out.speed.value(), out.vol_logits.value()};
}

}  // namespace t4c
