#include "t4c/predictions.hpp"

#include <cmath>

#include <json.hpp>

#include "t4c/error.hpp"
#include "t4c/segment_graph.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

namespace {

std::array<double, 3> triple(const json& j, const std::string& source, std::size_t line, const std::string& field) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(source, line, field, "expected 3 probabilities");
  std::array<double, 3> out;
  double sum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    out[k] = j[k].get<double>();
    if (!(out[k] >= 0.0 && out[k] <= 1.0)) throw SchemaError(source, line, field, "probability outside [0, 1]");
    sum += out[k];
  }
  if (std::abs(sum - 1.0) > 1e-6) throw SchemaError(source, line, field, "probabilities do not sum to 1");
  return out;
}

}  // namespace

std::string encode_predictions(const std::vector<RecordPrediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    json j{{"record_id", p.record_id}};
    json cc = json::object();
    for (const auto& [seg, v] : p.cc) cc[seg] = v;
    j["cc_prob"] = cc;
    if (!p.speed_kph.empty()) j["speed_kph"] = p.speed_kph;
    if (!p.vol.empty()) {
      json vol = json::object();
      for (const auto& [seg, v] : p.vol) vol[seg] = v;
      j["vol_prob"] = vol;
    }
    if (!p.eta.empty()) j["eta"] = p.eta;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<RecordPrediction> decode_predictions(const std::string& text_in, const std::string& source) {
  std::vector<RecordPrediction> out;
  std::size_t line_no = 0;
  for (const auto& line : text::lines(text_in)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(source, line_no, "<line>", e.what());
    }
    RecordPrediction p;
    try {
      p.record_id = j.at("record_id").get<std::string>();
      for (const auto& [seg, v] : j.at("cc_prob").items()) p.cc[seg] = triple(v, source, line_no, "cc_prob." + seg);
      if (j.contains("speed_kph")) p.speed_kph = j["speed_kph"].get<std::map<SegmentId, double>>();
      if (j.contains("vol_prob")) {
        for (const auto& [seg, v] : j["vol_prob"].items()) p.vol[seg] = triple(v, source, line_no, "vol_prob." + seg);
      }
      if (j.contains("eta")) p.eta = j["eta"].get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
      throw SchemaError(source, line_no, "record", e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions(const std::vector<RecordPrediction>& preds, const std::filesystem::path& path) {
  text::write_file(path, encode_predictions(preds));
}

std::vector<RecordPrediction> read_predictions(const std::filesystem::path& path) {
  return decode_predictions(text::read_file(path), path.string());
}

CoreScore score_core(const std::vector<RecordPrediction>& preds, const Dataset& dataset) {
  const auto seg_graph = build_line_graph(dataset.graph);
  CoreScore total;
  for (const auto& p : preds) {
    const auto* labels = dataset.labels_for(p.record_id);
    if (!labels) continue;
    std::vector<std::array<double, 3>> aligned(seg_graph.num_segments, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    for (const auto& [seg, l] : labels->edges) {
      if (!l.cc || *l.cc == 0) continue;
      const auto it = p.cc.find(seg);
      if (it == p.cc.end()) {
        throw ValidationError("prediction for record " + p.record_id + " lacks labeled segment " + seg);
      }
      aligned[seg_graph.index.at(seg)] = it->second;
    }
    total.merge(p.record_id, core_metric(aligned, *labels, seg_graph));
  }
  return total;
}

EtaScore score_eta(const std::vector<RecordPrediction>& preds, const Dataset& dataset, double speed_floor_kph) {
  std::map<RecordId, const RecordPrediction*> by_id;
  for (const auto& p : preds) by_id[p.record_id] = &p;
  std::vector<double> predicted, labeled;
  for (const auto& ss : dataset.supersegments) {
    for (const auto& [rid, eta] : ss.etas) {
      const auto it = by_id.find(rid);
      if (it == by_id.end()) continue;
      const auto& p = *it->second;
      if (const auto d = p.eta.find(ss.ss_id); d != p.eta.end()) {
        predicted.push_back(d->second);
      } else {
        std::vector<double> lengths, speeds;
        for (const auto& seg : ss.path) {
          const auto s = p.speed_kph.find(seg);
          if (s == p.speed_kph.end()) {
            throw ValidationError("prediction for record " + rid + " has no ETA for " + ss.ss_id +
                                  " and no speed for segment " + seg);
          }
          lengths.push_back(dataset.graph.segments()[*dataset.graph.segment_index(seg)].length_meters);
          speeds.push_back(s->second);
        }
        predicted.push_back(eta_from_speeds(lengths, speeds, speed_floor_kph));
      }
      labeled.push_back(eta);
    }
  }
  return eta_metric(predicted, labeled);
}

}  // namespace t4c
