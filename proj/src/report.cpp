#include "t4c/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "t4c/error.hpp"
#include "t4c/text.hpp"

namespace t4c {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCluster: return "no_cluster";
    case Variant::kNoStatic: return "no_static";
    case Variant::kNoGnn: return "no_gnn";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::kFull, Variant::kNoCluster, Variant::kNoStatic, Variant::kNoGnn}) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown ablation variant '" + s + "' (full, no_cluster, no_static, no_gnn)");
}

ModelConfig variant_config(const ModelConfig& base, Variant v) {
  ModelConfig c = base;
  switch (v) {
    case Variant::kFull: break;
    case Variant::kNoCluster: c.use_prior = false; break;
    case Variant::kNoStatic: c.use_static = false; break;
    case Variant::kNoGnn: c.gnn_layers = 0; break;
  }
  return c;
}

std::vector<AblationRow> run_ablation(const Dataset& dataset, const ClusterArtifact& clusters, const TrainConfig& cfg,
                                      const ModelConfig& base, const std::vector<Variant>& variants) {
  if (variants.empty()) throw ValidationError("ablation needs at least one variant");
  // Variants only change model switches, so the prepared data is shared.
  const auto data = prepare_data(dataset, clusters, cfg, base);
  std::vector<AblationRow> rows;
  for (auto v : variants) {
    const auto mc = variant_config(base, v);
    auto trained = train_one(cfg, mc, data, cfg.seed);
    const TrafficModel model(trained.checkpoint.config, std::move(trained.checkpoint.params));
    AblationRow row;
    row.variant = v;
    row.score = evaluate_core(model, data);
    row.best_epoch = trained.log.best_epoch;
    std::uint64_t h = text::fnv1a("");
    for (const auto& e : trained.log.epochs) h = text::fnv1a(e.order_hash, h);
    row.order_hash = text::hex64(h);
    row.log = std::move(trained.log);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  double full = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    if (r.variant == Variant::kFull) full = r.score.score();
  }
  std::string out = "variant,core_score,delta_vs_full,n_scored,best_epoch,order_hash\n";
  for (const auto& r : rows) {
    const double s = r.score.score();
    out += to_string(r.variant) + "," + text::format_double(s) + "," +
           (std::isnan(full) ? std::string() : text::format_double(s - full)) + "," +
           std::to_string(r.score.n_scored) + "," + std::to_string(r.best_epoch) + "," + r.order_hash + "\n";
  }
  return out;
}

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22"};

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string score_curves_svg(const std::vector<std::pair<std::string, RunLog>>& runs) {
  constexpr double W = 640, H = 400, ml = 60, mr = 150, mt = 30, mb = 45;
  int max_epoch = 1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, log] : runs) {
    for (const auto& e : log.epochs) {
      if (!std::isfinite(e.val_core)) continue;
      max_epoch = std::max(max_epoch, e.epoch);
      lo = std::min(lo, e.val_core);
      hi = std::max(hi, e.val_core);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) hi = lo + 1e-3;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto x = [&](double epoch) { return ml + (W - ml - mr) * (max_epoch == 1 ? 0.5 : (epoch - 1) / (max_epoch - 1)); };
  auto y = [&](double v) { return mt + (H - mt - mb) * (hi - v) / (hi - lo); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(W, 0) + "\" height=\"" + fixed(H, 0) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(ml) + "\" y=\"18\" font-size=\"13\">validation core score per epoch</text>\n";
  s += "<line x1=\"" + fixed(ml) + "\" y1=\"" + fixed(H - mb) + "\" x2=\"" + fixed(W - mr) + "\" y2=\"" +
       fixed(H - mb) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fixed(ml) + "\" y1=\"" + fixed(mt) + "\" x2=\"" + fixed(ml) + "\" y2=\"" + fixed(H - mb) +
       "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    s += "<text x=\"" + fixed(ml - 6) + "\" y=\"" + fixed(y(v) + 4) + "\" text-anchor=\"end\">" + fixed(v, 3) +
         "</text>\n";
  }
  for (int e = 1; e <= max_epoch; ++e) {
    if (max_epoch > 10 && e % 5 != 0 && e != 1) continue;
    s += "<text x=\"" + fixed(x(e)) + "\" y=\"" + fixed(H - mb + 16) + "\" text-anchor=\"middle\">" +
         std::to_string(e) + "</text>\n";
  }
  s += "<text x=\"" + fixed((ml + W - mr) / 2) + "\" y=\"" + fixed(H - 8) + "\" text-anchor=\"middle\">epoch</text>\n";
  std::size_t i = 0;
  for (const auto& [name, log] : runs) {
    const char* colour = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& e : log.epochs) {
      if (!std::isfinite(e.val_core)) continue;
      pts += fixed(x(e.epoch)) + "," + fixed(y(e.val_core)) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"" + pts +
         "\"/>\n";
    for (const auto& e : log.epochs) {
      if (e.epoch == log.best_epoch && std::isfinite(e.val_core)) {
        s += "<circle cx=\"" + fixed(x(e.epoch)) + "\" cy=\"" + fixed(y(e.val_core)) + "\" r=\"3\" fill=\"" +
             colour + "\"/>\n";
      }
    }
    s += "<text x=\"" + fixed(W - mr + 10) + "\" y=\"" + fixed(mt + 14.0 * static_cast<double>(i)) + "\" fill=\"" +
         colour + "\">" + name + "</text>\n";
    ++i;
  }
  s += "</svg>\n";
  return s;
}

std::string metrics_markdown(const std::vector<MetricRow>& rows,
                             const std::vector<std::pair<std::string, RunLog>>& runs) {
  std::string out;
  if (!rows.empty()) {
    out += "| model | metric | score | n |\n|---|---|---|---|\n";
    for (const auto& r : rows) {
      out += "| " + r.name + " | " + r.metric + " | " + fixed(r.value, 5) + " | " + std::to_string(r.n) + " |\n";
    }
    out += "\n";
  }
  if (!runs.empty()) {
    out += "| run | seed | best epoch | best validation core | final training loss |\n|---|---|---|---|---|\n";
    for (const auto& [name, log] : runs) {
      double best = std::numeric_limits<double>::quiet_NaN(), last = best;
      for (const auto& e : log.epochs) {
        if (e.epoch == log.best_epoch) best = e.val_core;
      }
      if (!log.epochs.empty()) last = log.epochs.back().loss;
      out += "| " + name + " | " + std::to_string(log.seed) + " | " + std::to_string(log.best_epoch) + " | " +
             fixed(best, 5) + " | " + fixed(last, 5) + " |\n";
    }
  }
  return out;
}

}  // namespace t4c
