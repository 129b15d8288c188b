#include "t4c/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "t4c/error.hpp"
#include "t4c/rng.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

namespace {

constexpr const char* kNodesHeader = "node_id,lat,lon,counter_id";
constexpr const char* kEdgesHeader =
    "segment_id,tail_node,head_node,importance,oneway,tunnel,lanes,parsed_maxspeed,flow_speed,"
    "length_meters,counter_distance,limit_speed";

bool valid_id(const std::string& id) {
  return !id.empty() && id.find_first_of(",\"\n\r") == std::string::npos;
}

bool valid_day(const std::string& day) {
  if (day.size() != 10 || day[4] != '-' || day[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (day[i] < '0' || day[i] > '9') return false;
  }
  const int month = std::stoi(day.substr(5, 2));
  const int dom = std::stoi(day.substr(8, 2));
  return month >= 1 && month <= 12 && dom >= 1 && dom <= 31;
}

void check_segment(const SegmentRec& s, const std::string& file, std::size_t line) {
  auto fail = [&](const std::string& field, const std::string& what) {
    throw SchemaError(file, line, field, what);
  };
  if (!valid_id(s.segment_id)) fail("segment_id", "empty or contains a reserved character");
  if (s.importance < 0 || s.importance >= kImportanceVocab) fail("importance", "must be in 0..5");
  if (s.oneway != 0 && s.oneway != 1) fail("oneway", "must be 0 or 1");
  if (s.tunnel != 0 && s.tunnel != 1) fail("tunnel", "must be 0 or 1");
  if (s.lanes < 1 || s.lanes > kLanesVocab) fail("lanes", "must be a bucket in 1..4 (4 = 4+)");
  if (!(s.length_meters > 0.0) || !std::isfinite(s.length_meters)) {
    fail("length_meters", "must be > 0");
  }
  if (!(s.parsed_maxspeed >= 0.0)) fail("parsed_maxspeed", "must be >= 0");
  if (!(s.flow_speed >= 0.0)) fail("flow_speed", "must be >= 0");
  if (!(s.limit_speed >= 0.0)) fail("limit_speed", "must be >= 0");
  if (!(s.counter_distance >= 0.0)) fail("counter_distance", "must be >= 0");
}

void check_record(const VolumeRecord& r, const RoadGraph& graph, const std::string& file,
                  std::size_t line) {
  if (!valid_id(r.record_id)) throw SchemaError(file, line, "record_id", "empty or reserved character");
  if (!valid_day(r.day)) throw SchemaError(file, line, "day", "expected YYYY-MM-DD, got \"" + r.day + "\"");
  if (r.t_index < 0 || r.t_index >= kDaySlots) {
    throw SchemaError(file, line, "t_index", "must be in 0..95");
  }
  for (const auto& [node, vec] : r.volumes) {
    if (!graph.node_index(node)) throw DanglingReferenceError(file + ":" + std::to_string(line), "node", node);
    if (!graph.has_counter(node)) {
      throw DanglingReferenceError(file + ":" + std::to_string(line), "counter node", node);
    }
    for (double v : vec) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw SchemaError(file, line, "volumes." + node, "volumes must be finite and >= 0");
      }
    }
  }
}

void check_label(const SegmentLabel& l, const std::string& seg, const std::string& file,
                 std::size_t line) {
  if (l.cc && (*l.cc < 0 || *l.cc > 3)) {
    throw SchemaError(file, line, "edges." + seg + ".cc", "must be 0..3 or null");
  }
  if (l.vol_class && *l.vol_class != 1 && *l.vol_class != 3 && *l.vol_class != 5) {
    throw SchemaError(file, line, "edges." + seg + ".vol_class", "must be 1, 3, 5 or null");
  }
  if (l.speed_kph && (!(*l.speed_kph >= 0.0) || !std::isfinite(*l.speed_kph))) {
    throw SchemaError(file, line, "edges." + seg + ".speed_kph", "must be >= 0 or null");
  }
}

void check_path(const SuperSegment& ss, const RoadGraph& graph, const std::string& where) {
  if (ss.ss_id.empty()) throw ValidationError(where + ": empty supersegment id");
  if (ss.path.empty()) throw ValidationError(where + ": supersegment \"" + ss.ss_id + "\" has an empty path");
  for (std::size_t i = 0; i < ss.path.size(); ++i) {
    const auto idx = graph.segment_index(ss.path[i]);
    if (!idx) throw DanglingReferenceError(where, "segment", ss.path[i]);
    if (i + 1 < ss.path.size()) {
      const auto next = graph.segment_index(ss.path[i + 1]);
      if (!next) throw DanglingReferenceError(where, "segment", ss.path[i + 1]);
      if (graph.segments()[*idx].head_node != graph.segments()[*next].tail_node) {
        throw ValidationError(where + ": supersegment \"" + ss.ss_id + "\" is not chainable between \"" +
                              ss.path[i] + "\" and \"" + ss.path[i + 1] + "\"");
      }
    }
  }
}

template <typename T>
T field(const json& obj, const char* key, const std::string& file, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(file, line, key, "missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(file, line, key, std::string("wrong type: ") + e.what());
  }
}

json parse_json(const std::string& content, const std::string& file, std::size_t line) {
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw SchemaError(file, line, "<document>", std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
std::optional<T> nullable(const json& obj, const char* key, const std::string& file, std::size_t line,
                          const std::string& prefix) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  const auto& v = obj.at(key);
  if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) throw SchemaError(file, line, prefix + key, "expected integer or null");
    return v.get<int>();
  } else {
    if (!v.is_number()) throw SchemaError(file, line, prefix + key, "expected number or null");
    return v.get<double>();
  }
}

DatasetMeta parse_meta(const std::filesystem::path& dir) {
  const std::string file = "meta.json";
  const json j = parse_json(text::read_file(dir / file), file, 1);
  DatasetMeta meta;
  meta.format_version = field<int>(j, "format_version", file, 1);
  meta.city_name = field<std::string>(j, "city_name", file, 1);
  meta.num_day_slots = field<int>(j, "num_day_slots", file, 1);
  if (meta.format_version != kFormatVersion) {
    throw SchemaError(file, 1, "format_version", "unsupported version " + std::to_string(meta.format_version));
  }
  if (meta.num_day_slots != kDaySlots) throw SchemaError(file, 1, "num_day_slots", "must be 96");
  return meta;
}

std::vector<NodeRec> parse_nodes(const std::filesystem::path& dir) {
  const std::string file = "nodes.csv";
  const auto rows = text::lines(text::read_file(dir / file));
  if (rows.empty() || rows[0] != kNodesHeader) {
    throw SchemaError(file, 1, "<header>", std::string("expected header '") + kNodesHeader + "'");
  }
  std::vector<NodeRec> nodes;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::size_t line = i + 1;
    if (rows[i].empty()) continue;
    const auto cols = text::split(rows[i], ',');
    if (cols.size() != 4) throw SchemaError(file, line, "<row>", "expected 4 columns");
    NodeRec n;
    n.node_id = cols[0];
    if (!valid_id(n.node_id)) throw SchemaError(file, line, "node_id", "empty");
    const auto lat = text::parse_double(cols[1]);
    const auto lon = text::parse_double(cols[2]);
    if (!lat) throw SchemaError(file, line, "lat", "not a number");
    if (!lon) throw SchemaError(file, line, "lon", "not a number");
    n.lat = *lat;
    n.lon = *lon;
    if (!cols[3].empty()) n.counter_id = cols[3];
    nodes.push_back(std::move(n));
  }
  return nodes;
}

std::vector<SegmentRec> parse_edges(const std::filesystem::path& dir) {
  const std::string file = "edges.csv";
  const auto rows = text::lines(text::read_file(dir / file));
  if (rows.empty() || rows[0] != kEdgesHeader) {
    throw SchemaError(file, 1, "<header>", std::string("expected header '") + kEdgesHeader + "'");
  }
  static const char* names[] = {"segment_id", "tail_node",     "head_node",  "importance",
                                "oneway",     "tunnel",        "lanes",      "parsed_maxspeed",
                                "flow_speed", "length_meters", "counter_distance", "limit_speed"};
  std::vector<SegmentRec> segs;
  std::vector<std::size_t> seg_lines;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::size_t line = i + 1;
    if (rows[i].empty()) continue;
    const auto cols = text::split(rows[i], ',');
    if (cols.size() != 12) throw SchemaError(file, line, "<row>", "expected 12 columns");
    SegmentRec s;
    s.segment_id = cols[0];
    s.tail_node = cols[1];
    s.head_node = cols[2];
    int* cats[] = {&s.importance, &s.oneway, &s.tunnel, &s.lanes};
    for (int c = 0; c < 4; ++c) {
      const auto v = text::parse_int(cols[3 + c]);
      if (!v) throw SchemaError(file, line, names[3 + c], "expected integer code");
      *cats[c] = static_cast<int>(*v);
    }
    double* conts[] = {&s.parsed_maxspeed, &s.flow_speed, &s.length_meters, &s.counter_distance,
                       &s.limit_speed};
    for (int c = 0; c < kNumContinuous; ++c) {
      if (cols[7 + c].empty()) {
        s.imputed |= static_cast<std::uint8_t>(1u << c);
        *conts[c] = 1.0;  // placeholder until medians are known
        continue;
      }
      const auto v = text::parse_double(cols[7 + c]);
      if (!v) throw SchemaError(file, line, names[7 + c], "not a number");
      *conts[c] = *v;
    }
    check_segment(s, file, line);
    segs.push_back(std::move(s));
    seg_lines.push_back(line);
  }
  const auto medians = continuous_medians(segs);
  for (auto& s : segs) {
    double* conts[] = {&s.parsed_maxspeed, &s.flow_speed, &s.length_meters, &s.counter_distance,
                       &s.limit_speed};
    for (int c = 0; c < kNumContinuous; ++c) {
      if (s.imputed & (1u << c)) *conts[c] = medians[static_cast<std::size_t>(c)];
    }
  }
  return segs;
}

std::vector<VolumeRecord> parse_volumes(const std::filesystem::path& dir, const RoadGraph& graph) {
  const std::string file = "volumes.jsonl";
  const auto rows = text::lines(text::read_file(dir / file));
  std::vector<VolumeRecord> records;
  std::set<RecordId> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t line = i + 1;
    if (rows[i].empty()) continue;
    const json j = parse_json(rows[i], file, line);
    VolumeRecord r;
    r.record_id = field<std::string>(j, "record_id", file, line);
    r.day = field<std::string>(j, "day", file, line);
    r.t_index = field<int>(j, "t_index", file, line);
    if (!j.contains("volumes") || !j.at("volumes").is_object()) {
      throw SchemaError(file, line, "volumes", "expected an object of node_id -> [v1,v2,v3,v4]");
    }
    for (const auto& [node, arr] : j.at("volumes").items()) {
      if (!arr.is_array() || arr.size() != kVolumeBins) {
        throw SchemaError(file, line, "volumes." + node,
                          "expected exactly 4 bins (one hour of 15-minute volumes), got " +
                              std::to_string(arr.is_array() ? arr.size() : 0));
      }
      VolumeVector v{};
      for (std::size_t b = 0; b < kVolumeBins; ++b) {
        if (!arr[b].is_number()) throw SchemaError(file, line, "volumes." + node, "non-numeric volume");
        v[b] = arr[b].get<double>();
      }
      r.volumes.emplace(node, v);
    }
    check_record(r, graph, file, line);
    if (!seen.insert(r.record_id).second) {
      throw SchemaError(file, line, "record_id", "duplicate record id \"" + r.record_id + "\"");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<LabelBundle> parse_labels(const std::filesystem::path& dir, const RoadGraph& graph,
                                      const std::set<RecordId>& record_ids) {
  const std::string file = "labels.jsonl";
  const auto rows = text::lines(text::read_file(dir / file));
  std::vector<LabelBundle> bundles;
  std::set<RecordId> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t line = i + 1;
    if (rows[i].empty()) continue;
    const json j = parse_json(rows[i], file, line);
    LabelBundle b;
    b.record_id = field<std::string>(j, "record_id", file, line);
    const std::string where = file + ":" + std::to_string(line);
    if (!record_ids.contains(b.record_id)) throw DanglingReferenceError(where, "record", b.record_id);
    if (!seen.insert(b.record_id).second) {
      throw SchemaError(file, line, "record_id", "duplicate label bundle for \"" + b.record_id + "\"");
    }
    if (!j.contains("edges") || !j.at("edges").is_object()) {
      throw SchemaError(file, line, "edges", "expected an object");
    }
    for (const auto& [seg, obj] : j.at("edges").items()) {
      if (!graph.segment_index(seg)) throw DanglingReferenceError(where, "segment", seg);
      if (!obj.is_object()) throw SchemaError(file, line, "edges." + seg, "expected an object");
      const std::string prefix = "edges." + seg + ".";
      SegmentLabel l;
      l.cc = nullable<int>(obj, "cc", file, line, prefix);
      l.speed_kph = nullable<double>(obj, "speed_kph", file, line, prefix);
      l.vol_class = nullable<int>(obj, "vol_class", file, line, prefix);
      check_label(l, seg, file, line);
      b.edges.emplace(seg, l);
    }
    bundles.push_back(std::move(b));
  }
  return bundles;
}

std::vector<SuperSegment> parse_supersegments(const std::filesystem::path& dir, const RoadGraph& graph,
                                              const std::set<RecordId>& record_ids) {
  const std::string file = "supersegments.json";
  const json j = parse_json(text::read_file(dir / file), file, 1);
  if (!j.contains("paths") || !j.at("paths").is_object()) throw SchemaError(file, 1, "paths", "expected an object");
  if (!j.contains("etas") || !j.at("etas").is_array()) throw SchemaError(file, 1, "etas", "expected an array");
  std::vector<SuperSegment> out;
  std::map<std::string, std::size_t> index;
  for (const auto& [id, arr] : j.at("paths").items()) {
    SuperSegment ss;
    ss.ss_id = id;
    try {
      ss.path = arr.get<std::vector<SegmentId>>();
    } catch (const json::exception&) {
      throw SchemaError(file, 1, "paths." + id, "expected an array of segment ids");
    }
    check_path(ss, graph, file);
    index.emplace(id, out.size());
    out.push_back(std::move(ss));
  }
  std::size_t k = 0;
  for (const auto& e : j.at("etas")) {
    const std::string where = "etas[" + std::to_string(k++) + "]";
    const auto rid = field<std::string>(e, "record_id", file, 1);
    const auto ssid = field<std::string>(e, "ss_id", file, 1);
    const auto eta = field<double>(e, "eta_s", file, 1);
    if (!record_ids.contains(rid)) throw DanglingReferenceError(file + " " + where, "record", rid);
    const auto it = index.find(ssid);
    if (it == index.end()) throw DanglingReferenceError(file + " " + where, "supersegment", ssid);
    if (!(eta > 0.0) || !std::isfinite(eta)) throw SchemaError(file, 1, where + ".eta_s", "must be > 0");
    if (!out[it->second].etas.emplace(rid, eta).second) {
      throw SchemaError(file, 1, where, "duplicate eta for (" + rid + ", " + ssid + ")");
    }
  }
  return out;
}

}  // namespace

RoadGraph::RoadGraph(std::vector<NodeRec> nodes, std::vector<SegmentRec> segments)
    : nodes_(std::move(nodes)), segments_(std::move(segments)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!valid_id(nodes_[i].node_id)) throw ValidationError("node with empty or invalid id");
    if (!node_index_.emplace(nodes_[i].node_id, i).second) {
      throw ValidationError("duplicate node id \"" + nodes_[i].node_id + "\"");
    }
    if (nodes_[i].counter_id) counters_.emplace(nodes_[i].node_id, *nodes_[i].counter_id);
  }
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    check_segment(s, "edges.csv", i + 2);
    if (!node_index_.contains(s.tail_node)) throw DanglingReferenceError("edges.csv:" + std::to_string(i + 2), "node", s.tail_node);
    if (!node_index_.contains(s.head_node)) throw DanglingReferenceError("edges.csv:" + std::to_string(i + 2), "node", s.head_node);
    if (!segment_index_.emplace(s.segment_id, i).second) {
      throw ValidationError("duplicate segment id \"" + s.segment_id + "\"");
    }
  }
}

std::optional<std::size_t> RoadGraph::node_index(const NodeId& id) const {
  const auto it = node_index_.find(id);
  if (it == node_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> RoadGraph::segment_index(const SegmentId& id) const {
  const auto it = segment_index_.find(id);
  if (it == segment_index_.end()) return std::nullopt;
  return it->second;
}

const LabelBundle* Dataset::labels_for(const RecordId& id) const {
  for (const auto& b : labels) {
    if (b.record_id == id) return &b;
  }
  return nullptr;
}

std::array<double, kNumContinuous> continuous_medians(const std::vector<SegmentRec>& segments) {
  std::array<double, kNumContinuous> medians{};
  for (int c = 0; c < kNumContinuous; ++c) {
    std::vector<double> vals;
    for (const auto& s : segments) {
      if (!(s.imputed & (1u << c))) vals.push_back(s.continuous()[static_cast<std::size_t>(c)]);
    }
    if (vals.empty()) {
      medians[static_cast<std::size_t>(c)] = c == 2 ? 1.0 : 0.0;  // length must stay positive
      continue;
    }
    std::sort(vals.begin(), vals.end());
    medians[static_cast<std::size_t>(c)] = vals[(vals.size() - 1) / 2];
  }
  return medians;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("dataset directory not found: " + dir.string());
  Dataset d;
  d.meta = parse_meta(dir);
  auto nodes = parse_nodes(dir);
  auto segs = parse_edges(dir);
  d.graph = RoadGraph(std::move(nodes), std::move(segs));
  d.records = parse_volumes(dir, d.graph);
  std::set<RecordId> ids;
  for (const auto& r : d.records) ids.insert(r.record_id);
  d.labels = parse_labels(dir, d.graph, ids);
  d.supersegments = parse_supersegments(dir, d.graph, ids);
  return d;
}

void validate_dataset(const Dataset& d) {
  // RoadGraph validated itself on construction.
  std::set<RecordId> ids;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    check_record(d.records[i], d.graph, "volumes.jsonl", i + 1);
    if (!ids.insert(d.records[i].record_id).second) {
      throw ValidationError("duplicate record id \"" + d.records[i].record_id + "\"");
    }
  }
  std::set<RecordId> labelled;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const auto& b = d.labels[i];
    const std::string where = "labels.jsonl:" + std::to_string(i + 1);
    if (!ids.contains(b.record_id)) throw DanglingReferenceError(where, "record", b.record_id);
    if (!labelled.insert(b.record_id).second) throw ValidationError(where + ": duplicate label bundle");
    for (const auto& [seg, l] : b.edges) {
      if (!d.graph.segment_index(seg)) throw DanglingReferenceError(where, "segment", seg);
      check_label(l, seg, "labels.jsonl", i + 1);
    }
  }
  std::set<std::string> ss_ids;
  for (const auto& ss : d.supersegments) {
    check_path(ss, d.graph, "supersegments.json");
    if (!ss_ids.insert(ss.ss_id).second) throw ValidationError("duplicate supersegment \"" + ss.ss_id + "\"");
    for (const auto& [rid, eta] : ss.etas) {
      if (!ids.contains(rid)) throw DanglingReferenceError("supersegments.json", "record", rid);
      if (!(eta > 0.0)) throw ValidationError("supersegments.json: eta must be > 0");
    }
  }
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate_dataset(d);
  std::filesystem::create_directories(dir);

  json meta = {{"format_version", d.meta.format_version},
               {"city_name", d.meta.city_name},
               {"num_day_slots", d.meta.num_day_slots}};
  text::write_file(dir / "meta.json", meta.dump(2) + "\n");

  std::string nodes = std::string(kNodesHeader) + "\n";
  for (const auto& n : d.graph.nodes()) {
    nodes += n.node_id + "," + text::format_double(n.lat) + "," + text::format_double(n.lon) + "," +
             n.counter_id.value_or("") + "\n";
  }
  text::write_file(dir / "nodes.csv", nodes);

  std::string edges = std::string(kEdgesHeader) + "\n";
  for (const auto& s : d.graph.segments()) {
    edges += s.segment_id + "," + s.tail_node + "," + s.head_node + "," + std::to_string(s.importance) + "," +
             std::to_string(s.oneway) + "," + std::to_string(s.tunnel) + "," + std::to_string(s.lanes);
    const auto cont = s.continuous();
    for (int c = 0; c < kNumContinuous; ++c) {
      edges += ",";
      if (!(s.imputed & (1u << c))) edges += text::format_double(cont[static_cast<std::size_t>(c)]);
    }
    edges += "\n";
  }
  text::write_file(dir / "edges.csv", edges);

  std::string volumes;
  for (const auto& r : d.records) {
    json vols = json::object();
    for (const auto& [node, v] : r.volumes) vols[node] = std::vector<double>(v.begin(), v.end());
    json j = {{"record_id", r.record_id}, {"day", r.day}, {"t_index", r.t_index}, {"volumes", vols}};
    volumes += j.dump() + "\n";
  }
  text::write_file(dir / "volumes.jsonl", volumes);

  std::string labels;
  for (const auto& b : d.labels) {
    json edges_obj = json::object();
    for (const auto& [seg, l] : b.edges) {
      json e;
      e["cc"] = l.cc ? json(*l.cc) : json(nullptr);
      e["speed_kph"] = l.speed_kph ? json(*l.speed_kph) : json(nullptr);
      e["vol_class"] = l.vol_class ? json(*l.vol_class) : json(nullptr);
      edges_obj[seg] = e;
    }
    labels += json{{"record_id", b.record_id}, {"edges", edges_obj}}.dump() + "\n";
  }
  text::write_file(dir / "labels.jsonl", labels);

  json paths = json::object();
  json etas = json::array();
  for (const auto& ss : d.supersegments) {
    paths[ss.ss_id] = ss.path;
    for (const auto& [rid, eta] : ss.etas) {
      etas.push_back({{"record_id", rid}, {"ss_id", ss.ss_id}, {"eta_s", eta}});
    }
  }
  text::write_file(dir / "supersegments.json", json{{"paths", paths}, {"etas", etas}}.dump(1) + "\n");
}

std::vector<VolumeRecord> daytime_filter(const std::vector<VolumeRecord>& records, int start_slot, int end_slot) {
  if (start_slot < 0 || start_slot >= end_slot || end_slot > kDaySlots) {
    throw ValidationError("invalid daytime window [" + std::to_string(start_slot) + ", " +
                          std::to_string(end_slot) + "): need 0 <= start < end <= 96");
  }
  std::vector<VolumeRecord> out;
  for (const auto& r : records) {
    if (r.t_index >= start_slot && r.t_index < end_slot) out.push_back(r);
  }
  return out;
}

Split split_train_validation(const std::vector<VolumeRecord>& records, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must be in (0, 1)");
  std::set<std::string> day_set;
  for (const auto& r : records) day_set.insert(r.day);
  if (day_set.size() < 2) throw ValidationError("split needs at least 2 distinct days, got " + std::to_string(day_set.size()));
  std::vector<std::string> days(day_set.begin(), day_set.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(days));
  auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(days.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, days.size() - 1);
  const std::set<std::string> train_days(days.begin(), days.begin() + static_cast<std::ptrdiff_t>(n_train));
  Split split;
  for (const auto& r : records) {
    (train_days.contains(r.day) ? split.train : split.validation).push_back(r);
  }
  return split;
}

}  // namespace t4c
