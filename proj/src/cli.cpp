#include "t4c/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "t4c/baselines.hpp"
#include "t4c/checkpoint.hpp"
#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/error.hpp"
#include "t4c/evaluation.hpp"
#include "t4c/predictions.hpp"
#include "t4c/report.hpp"
#include "t4c/synth.hpp"
#include "t4c/text.hpp"
#include "t4c/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace t4c {

namespace {

struct Options {
  std::string workdir = ".";
  std::string data = "data";
  std::string clusters_file = "cluster_model.json";
  TrainConfig train;
  ModelConfig model;
  unsigned threads = 0;

  // synth
  SynthSpec synth;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "data";

  // train / predict
  std::string run_name = "default";
  std::string split = "validation";
  std::string predictions = "predictions.jsonl";
  std::string out;
  std::string prior_mode = "full";
  bool no_prior = false;
  bool no_static = false;

  // eval
  double speed_floor = kDefaultSpeedFloorKph;

  // baselines
  std::string baseline_name;
  bool naive_global = false;
  int node_hidden = 32;
  int node_layers = 3;

  // ablation
  std::vector<std::string> variants{"full", "no_cluster", "no_static", "no_gnn"};

  // report
  std::vector<std::string> runs;
  std::vector<std::string> evals;
};

fs::path under(const Options& o, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(o.workdir) / path;
}

void require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw MissingFileError("missing " + path.string() + "; run `t4c " + producer + "` first to produce it");
  }
}

Dataset load_data(const Options& o) {
  const auto dir = under(o, o.data);
  require_file(dir / "meta.json", "synth");
  return load_dataset(dir);
}

ClusterArtifact load_clusters(const Options& o) {
  const auto path = under(o, o.clusters_file);
  require_file(path, "fit-clusters");
  return read_cluster_model(path);
}

ModelConfig model_config(const Options& o, int num_clusters) {
  ModelConfig mc = o.model;
  mc.prior_mode = parse_prior_mode(o.prior_mode);
  mc.num_clusters = num_clusters;
  mc.use_prior = !o.no_prior;
  mc.use_static = !o.no_static;
  mc.validate();
  return mc;
}

std::vector<const VolumeRecord*> select_records(const Dataset& ds, const Options& o) {
  const auto split = prepare_split(ds, o.train);
  const std::vector<VolumeRecord>* chosen = nullptr;
  std::vector<VolumeRecord> all;
  if (o.split == "validation") {
    chosen = &split.validation;
  } else if (o.split == "train") {
    chosen = &split.train;
  } else if (o.split == "all") {
    all = daytime_filter(ds.records, o.train.day_start, o.train.day_end);
    chosen = &all;
  } else {
    throw ValidationError("--split must be validation, train or all");
  }
  std::map<RecordId, const VolumeRecord*> by_id;
  for (const auto& r : ds.records) by_id[r.record_id] = &r;
  std::vector<const VolumeRecord*> out;
  for (const auto& r : *chosen) out.push_back(by_id.at(r.record_id));
  return out;
}

std::set<RecordId> train_ids(const Dataset& ds, const Options& o) {
  std::set<RecordId> ids;
  for (const auto& r : prepare_split(ds, o.train).train) ids.insert(r.record_id);
  return ids;
}

RecordPrediction model_prediction(const Dataset& ds, const SegmentGraph& sg, const RecordId& id,
                                  const SegmentProbabilities& p, double speed_floor) {
  RecordPrediction rp;
  rp.record_id = id;
  for (std::size_t i = 0; i < sg.num_segments; ++i) {
    rp.cc[sg.ids[i]] = p.cc[i];
    rp.vol[sg.ids[i]] = p.vol[i];
    rp.speed_kph[sg.ids[i]] = p.speed_kph[i];
  }
  for (const auto& ss : ds.supersegments) {
    std::vector<double> speeds(ds.graph.segments().size());
    for (std::size_t i = 0; i < sg.num_segments; ++i) speeds[*ds.graph.segment_index(sg.ids[i])] = p.speed_kph[i];
    rp.eta[ss.ss_id] = eta_from_speeds(ss, ds.graph, speeds, speed_floor);
  }
  return rp;
}

std::vector<fs::path> member_dirs(const fs::path& run_dir) {
  std::vector<fs::path> dirs;
  if (fs::is_directory(run_dir)) {
    for (const auto& e : fs::directory_iterator(run_dir)) {
      if (e.is_directory() && e.path().filename().string().rfind("member_", 0) == 0 &&
          fs::exists(e.path() / "checkpoint.bin")) {
        dirs.push_back(e.path());
      }
    }
  }
  std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
    const auto ka = std::stoi(a.filename().string().substr(7));
    const auto kb = std::stoi(b.filename().string().substr(7));
    return ka < kb;
  });
  return dirs;
}

// ---- subcommands ------------------------------------------------------------------------------

void cmd_synth(const Options& o, std::ostream& out) {
  const auto dir = under(o, o.synth_out);
  generate_synthetic_city(o.synth, o.synth_seed, dir);
  out << "wrote synthetic city to " << dir.string() << "\n";
}

void cmd_fit_clusters(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto split = prepare_split(ds, o.train);
  ClusterArtifact a;
  a.model = fit_clusters(split.train, o.model.num_clusters);
  a.priors = build_prior_matrices(a.model, ds.labels, ds.graph);
  const auto path = under(o, o.clusters_file);
  write_cluster_model(a, path);
  out << "fitted K=" << a.model.num_clusters << " clusters on " << split.train.size() << " records; wrote "
      << path.string() << "\n";
}

void cmd_train(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto clusters = load_clusters(o);
  const auto mc = model_config(o, clusters.model.num_clusters);
  o.train.validate();
  const auto data = prepare_data(ds, clusters, o.train, mc);
  const unsigned threads = o.threads > 0 ? o.threads : thread_budget();
  const auto start = std::chrono::steady_clock::now();
  const auto results = train_ensemble(o.train, mc, data, threads);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto run_dir = under(o, "runs") / o.run_name;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto dir = run_dir / ("member_" + std::to_string(k));
    save_checkpoint(results[k].checkpoint, dir / "checkpoint.bin");
    text::write_file(dir / "runlog.json", to_json(results[k].log).dump(2) + "\n");
    const auto& log = results[k].log;
    out << "member " << k << " seed " << log.seed << ": best epoch " << log.best_epoch << ", validation core "
        << text::format_double(log.epochs[static_cast<std::size_t>(log.best_epoch - 1)].val_core) << "\n";
    for (const auto& e : log.epochs) {
      out << "  epoch " << e.epoch << " loss " << text::format_double(e.loss) << " val " << text::format_double(e.val_core)
          << " (" << std::round(e.wall_time_s * 100.0) / 100.0 << " s)\n";
    }
  }
  text::write_file(run_dir / "run.json",
                   json{{"train", to_json(o.train)}, {"model", to_json(mc)}, {"members", results.size()}}.dump(2) + "\n");
  out << "trained " << results.size() << " member(s) into " << run_dir.string() << " in "
      << std::round(wall * 10.0) / 10.0 << " s\n";
}

void cmd_predict(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto clusters = load_clusters(o);
  const auto run_dir = under(o, "runs") / o.run_name;
  const auto dirs = member_dirs(run_dir);
  if (dirs.empty()) throw MissingFileError("no checkpoints under " + run_dir.string() + "; run `t4c train` first");
  std::vector<Checkpoint> members;
  for (const auto& d : dirs) members.push_back(load_checkpoint(d / "checkpoint.bin"));
  std::vector<const Checkpoint*> ptrs;
  for (const auto& m : members) ptrs.push_back(&m);
  const auto sg = build_line_graph(ds.graph);
  std::vector<RecordPrediction> preds;
  for (const auto* r : select_records(ds, o)) {
    preds.push_back(model_prediction(ds, sg, r->record_id, ensemble_predict(ptrs, ds, sg, clusters, *r), o.speed_floor));
  }
  const auto path = under(o, o.predictions);
  write_predictions(preds, path);
  out << "wrote " << preds.size() << " record predictions from " << members.size() << " member(s) to "
      << path.string() << "\n";
}

void cmd_eval_core(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto path = under(o, o.predictions);
  require_file(path, "predict");
  const auto score = score_core(read_predictions(path), ds);
  if (!score.defined()) throw ValidationError("no scorable labels for the predicted records");
  json report{{"metric", score.score()}, {"per_record", score.per_record}, {"n_scored", score.n_scored}};
  text::write_file(under(o, o.out.empty() ? "eval_core.json" : o.out), report.dump(2) + "\n");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", score.score());
  out << buf << "\n";
}

void cmd_eval_eta(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto path = under(o, o.predictions);
  require_file(path, "predict");
  const auto score = score_eta(read_predictions(path), ds, o.speed_floor);
  if (!score.defined()) throw ValidationError("no ETA labels for the predicted records");
  json report{{"metric", score.mae()}, {"n", score.n}, {"speed_floor_kph", o.speed_floor}};
  text::write_file(under(o, o.out.empty() ? "eval_eta.json" : o.out), report.dump(2) + "\n");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", score.mae());
  out << buf << "\n";
}

void cmd_baseline(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto records = select_records(ds, o);
  const auto sg = build_line_graph(ds.graph);
  std::vector<RecordPrediction> preds;
  json artifact;
  if (o.baseline_name == "naive") {
    const auto m = fit_naive(ds.labels, ds.supersegments, train_ids(ds, o), o.naive_global);
    artifact = to_json(m);
    for (const auto* r : records) {
      RecordPrediction p;
      p.record_id = r->record_id;
      for (const auto& id : sg.ids) p.cc[id] = m.cc(id);
      for (const auto& ss : ds.supersegments) {
        if (auto e = m.eta_for(ss.ss_id)) p.eta[ss.ss_id] = *e;
      }
      preds.push_back(std::move(p));
    }
  } else if (o.baseline_name == "volume_cluster") {
    const auto clusters = load_clusters(o);
    const auto m = fit_volume_cluster(clusters.model, ds.labels, ds.supersegments, ds.graph);
    artifact = to_json(m);
    for (const auto* r : records) {
      const int k = assign_cluster(m.clusters, *r);
      RecordPrediction p;
      p.record_id = r->record_id;
      for (const auto& id : sg.ids) p.cc[id] = m.cc(k, id);
      for (const auto& ss : ds.supersegments) {
        if (auto e = m.eta_for(k, ss.ss_id)) p.eta[ss.ss_id] = *e;
      }
      preds.push_back(std::move(p));
    }
  } else if (o.baseline_name == "node_gnn") {
    NodeGnnConfig gc;
    gc.hidden = o.node_hidden;
    gc.layers = o.node_layers;
    gc.seed = o.train.seed;
    auto result = node_gnn_baseline(ds, o.train, gc);
    artifact = to_json(result);
    const NodeGnnModel model(ds.graph, result.config, result.params.clone());
    for (const auto* r : records) {
      const auto probs = model.predict(node_features(ds.graph, *r, result.norm));
      RecordPrediction p;
      p.record_id = r->record_id;
      for (std::size_t i = 0; i < sg.num_segments; ++i) p.cc[sg.ids[i]] = probs[i];
      preds.push_back(std::move(p));
    }
  } else {
    throw ValidationError("unknown baseline '" + o.baseline_name + "' (naive, volume_cluster, node_gnn)");
  }
  const auto model_path = under(o, "baseline_" + o.baseline_name + ".json");
  text::write_file(model_path, artifact.dump(2) + "\n");
  const auto pred_path = under(o, o.out.empty() ? "predictions_" + o.baseline_name + ".jsonl" : o.out);
  write_predictions(preds, pred_path);
  out << "wrote " << model_path.string() << " and " << preds.size() << " record predictions to "
      << pred_path.string() << "\n";
}

void cmd_ablate(const Options& o, std::ostream& out) {
  const auto ds = load_data(o);
  const auto clusters = load_clusters(o);
  const auto mc = model_config(o, clusters.model.num_clusters);
  std::vector<Variant> variants;
  for (const auto& v : o.variants) variants.push_back(parse_variant(v));
  const auto rows = run_ablation(ds, clusters, o.train, mc, variants);
  const auto csv = ablation_csv(rows);
  const auto path = under(o, o.out.empty() ? "ablation.csv" : o.out);
  text::write_file(path, csv);
  for (const auto& r : rows) {
    text::write_file(path.parent_path() / ("ablation_" + to_string(r.variant) + "_runlog.json"),
                     to_json(r.log).dump(2) + "\n");
  }
  out << csv;
}

void cmd_report(const Options& o, std::ostream& out) {
  std::vector<std::pair<std::string, RunLog>> runs;
  for (const auto& name : o.runs) {
    const auto run_dir = under(o, "runs") / name;
    const auto dirs = member_dirs(run_dir);
    if (dirs.empty()) throw MissingFileError("no members under " + run_dir.string() + "; run `t4c train` first");
    for (const auto& d : dirs) {
      runs.emplace_back(name + "/" + d.filename().string(),
                        run_log_from_json(json::parse(text::read_file(d / "runlog.json"))));
    }
  }
  std::vector<MetricRow> rows;
  for (const auto& e : o.evals) {
    const auto path = under(o, e);
    require_file(path, "eval-core");
    const auto j = json::parse(text::read_file(path));
    MetricRow row;
    row.name = fs::path(e).stem().string();
    row.metric = j.contains("n_scored") ? "core" : "eta";
    row.value = j.at("metric").get<double>();
    row.n = j.contains("n_scored") ? j["n_scored"].get<std::size_t>() : j.at("n").get<std::size_t>();
    rows.push_back(row);
  }
  const auto dir = under(o, o.out.empty() ? "report" : o.out);
  text::write_file(dir / "report.md", "# Results\n\n" + metrics_markdown(rows, runs) +
                                          (runs.empty() ? "" : "\n![score curves](curves.svg)\n"));
  if (!runs.empty()) text::write_file(dir / "curves.svg", score_curves_svg(runs));
  out << "wrote report to " << dir.string() << "\n";
}

// ---- option wiring --------------------------------------------------------------------------------

void add_data(CLI::App* app, Options& o) { app->add_option("--data", o.data, "dataset directory"); }

void add_split(CLI::App* app, Options& o) {
  app->add_option("--day-start", o.train.day_start, "first daytime slot (inclusive)");
  app->add_option("--day-end", o.train.day_end, "last daytime slot (exclusive)");
  app->add_option("--train-fraction", o.train.train_fraction, "fraction of days used for training");
  app->add_option("--split-seed", o.train.split_seed, "seed of the day-level split");
}

void add_training(CLI::App* app, Options& o) {
  app->add_option("--epochs", o.train.epochs, "training epochs");
  app->add_option("--batch", o.train.batch, "records per optimizer step");
  app->add_option("--lr", o.train.lr, "Adam learning rate");
  app->add_option("--seed", o.train.seed, "base seed; member k uses seed + k");
}

void add_model(CLI::App* app, Options& o) {
  app->add_option("--prior-mode", o.prior_mode, "prior block: full or active_row");
  app->add_option("--hidden", o.model.hidden, "hidden width");
  app->add_option("--gnn-layers", o.model.gnn_layers, "message passing layers");
  app->add_option("--static-hidden", o.model.static_hidden, "static encoder width");
  app->add_option("--head-blocks", o.model.head_blocks, "residual blocks per head");
  app->add_option("--cc-head", o.model.cc_head, "congestion head width: 3 or 4");
  app->add_option("--lambda", o.model.lambda, "loss weights for congestion, speed, volume")->expected(3);
  app->add_flag("--no-prior", o.no_prior, "zero the cluster prior inputs");
  app->add_flag("--no-static", o.no_static, "zero the static attribute inputs");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse-counter traffic forecasting toolkit", "t4c"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file; flags override its values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  Options o;
  app.add_option("--workdir", o.workdir, "base directory for all relative paths");

  auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic city");
  synth->add_option("--nodes", o.synth.nodes, "intersections");
  synth->add_option("--counter-frac", o.synth.counter_frac, "fraction of nodes with loop counters");
  synth->add_option("--records", o.synth.records, "daytime records");
  synth->add_option("--records-per-day", o.synth.records_per_day, "records per day");
  synth->add_option("--signal", o.synth.signal, "volume dependence of labels in [0, 1]");
  synth->add_option("--seed", o.synth_seed, "generator seed");
  synth->add_option("--out", o.synth_out, "output dataset directory");

  auto* fit = app.add_subcommand("fit-clusters", "fit volumeSum clusters and prior matrices");
  add_data(fit, o);
  add_split(fit, o);
  fit->add_option("--clusters", o.model.num_clusters, "number of clusters K");
  fit->add_option("--out", o.clusters_file, "cluster model file");

  auto* train = app.add_subcommand("train", "train an ensemble of line-graph models");
  add_data(train, o);
  add_split(train, o);
  add_training(train, o);
  add_model(train, o);
  train->add_option("--members", o.train.ensemble, "ensemble members");
  train->add_option("--clusters-file", o.clusters_file, "cluster model from fit-clusters");
  train->add_option("--name", o.run_name, "run name under runs/");
  train->add_option("--threads", o.threads, "parallel members (0: T4C_THREADS or all cores)");

  auto* predict = app.add_subcommand("predict", "write ensemble predictions for a split");
  add_data(predict, o);
  add_split(predict, o);
  predict->add_option("--clusters-file", o.clusters_file, "cluster model from fit-clusters");
  predict->add_option("--name", o.run_name, "run name under runs/");
  predict->add_option("--split", o.split, "validation, train or all");
  predict->add_option("--out", o.predictions, "prediction file");
  predict->add_option("--speed-floor", o.speed_floor, "minimum speed for ETA synthesis, km/h");

  auto* eval_core = app.add_subcommand("eval-core", "score congestion probabilities");
  add_data(eval_core, o);
  eval_core->add_option("--predictions", o.predictions, "prediction file");
  eval_core->add_option("--out", o.out, "JSON report (default eval_core.json)");

  auto* eval_eta = app.add_subcommand("eval-eta", "score supersegment ETAs");
  add_data(eval_eta, o);
  eval_eta->add_option("--predictions", o.predictions, "prediction file");
  eval_eta->add_option("--speed-floor", o.speed_floor, "minimum speed for ETA synthesis, km/h");
  eval_eta->add_option("--out", o.out, "JSON report (default eval_eta.json)");

  auto* baseline = app.add_subcommand("baseline", "fit a comparison baseline and predict a split");
  baseline->add_option("name", o.baseline_name, "naive, volume_cluster or node_gnn")->required();
  add_data(baseline, o);
  add_split(baseline, o);
  add_training(baseline, o);
  baseline->add_option("--clusters-file", o.clusters_file, "cluster model (volume_cluster)");
  baseline->add_flag("--global", o.naive_global, "naive: one city-wide distribution");
  baseline->add_option("--node-hidden", o.node_hidden, "node_gnn hidden width");
  baseline->add_option("--node-layers", o.node_layers, "node_gnn message passing layers");
  baseline->add_option("--split", o.split, "records to predict: validation, train or all");
  baseline->add_option("--out", o.out, "prediction file (default predictions_<name>.jsonl)");

  auto* ablate = app.add_subcommand("ablate", "train ablation variants with identical seeds and data");
  add_data(ablate, o);
  add_split(ablate, o);
  add_training(ablate, o);
  add_model(ablate, o);
  ablate->add_option("--clusters-file", o.clusters_file, "cluster model from fit-clusters");
  ablate->add_option("--variants", o.variants, "subset of full, no_cluster, no_static, no_gnn")->delimiter(',');
  ablate->add_option("--out", o.out, "comparison table (default ablation.csv)");

  auto* report = app.add_subcommand("report", "render metric tables and score curves");
  report->add_option("--runs", o.runs, "run names under runs/")->delimiter(',');
  report->add_option("--evals", o.evals, "eval JSON reports")->delimiter(',');
  report->add_option("--out", o.out, "report directory (default report)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (*synth) cmd_synth(o, out);
    else if (*fit) cmd_fit_clusters(o, out);
    else if (*train) cmd_train(o, out);
    else if (*predict) cmd_predict(o, out);
    else if (*eval_core) cmd_eval_core(o, out);
    else if (*eval_eta) cmd_eval_eta(o, out);
    else if (*baseline) cmd_baseline(o, out);
    else if (*ablate) cmd_ablate(o, out);
    else if (*report) cmd_report(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace t4c
