#include "t4c/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>

#include "t4c/error.hpp"
#include "t4c/rng.hpp"
#include "t4c/text.hpp"

namespace t4c {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string add_days(const std::string& day, int offset) {
  using namespace std::chrono;
  const int y = std::stoi(day.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(day.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(day.substr(8, 2)));
  const year_month_day start{year{y}, month{m}, std::chrono::day{d}};
  if (!start.ok()) throw ValidationError("invalid first_day " + day);
  const year_month_day out{sys_days{start} + days{offset}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()),
                static_cast<unsigned>(out.month()), static_cast<unsigned>(out.day()));
  return buf;
}

void check_spec(const SynthSpec& s) {
  if (s.nodes < 4) throw ValidationError("synth: nodes must be >= 4");
  if (!(s.counter_frac > 0.0 && s.counter_frac <= 1.0)) throw ValidationError("synth: counter_frac must be in (0, 1]");
  if (s.records < 1) throw ValidationError("synth: records must be >= 1");
  if (!(s.signal >= 0.0 && s.signal <= 1.0)) throw ValidationError("synth: signal must be in [0, 1]");
  if (s.records_per_day < 1 || s.records_per_day > kDaytimeEnd - kDaytimeStart) {
    throw ValidationError("synth: records_per_day must be in 1..64");
  }
  if (!(s.temperature > 0.0) || !(s.local_decay > 0.0)) throw ValidationError("synth: temperature and local_decay must be > 0");
}

// Zero-padded so lexical and numeric order agree.
std::string padded(char prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n > 0 ? n - 1 : 0).size();
  std::string num = std::to_string(i);
  return std::string(1, prefix) + std::string(width - std::min(width, num.size()), '0') + num;
}

}  // namespace

Dataset synthesize_city(const SynthSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Rng rng(seed);
  const auto n_nodes = static_cast<std::size_t>(spec.nodes);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(2.0 * spec.nodes)));

  // Nodes on a jittered grid.
  std::vector<NodeRec> nodes(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    nodes[i].node_id = padded('n', i, n_nodes);
    const double row = static_cast<double>(i / cols);
    const double col = static_cast<double>(i % cols);
    nodes[i].lat = std::round((48.0 + 0.005 * row + rng.uniform(-0.001, 0.001)) * 1e6) / 1e6;
    nodes[i].lon = std::round((16.0 + 0.007 * col + rng.uniform(-0.001, 0.001)) * 1e6) / 1e6;
  }
  std::vector<std::size_t> order(n_nodes);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_counters = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.counter_frac * spec.nodes)), 1, n_nodes);
  std::vector<bool> has_counter(n_nodes, false);
  for (std::size_t k = 0; k < n_counters; ++k) has_counter[order[k]] = true;
  {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (has_counter[i]) nodes[i].counter_id = padded('c', c++, n_counters);
    }
  }

  // Undirected grid roads, each realised as one or two directed segments.
  struct Road {
    std::size_t a, b;
  };
  std::vector<Road> roads;
  std::vector<std::vector<std::size_t>> node_adj(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if ((i % cols) + 1 < cols && i + 1 < n_nodes) roads.push_back({i, i + 1});
    if (i + cols < n_nodes) roads.push_back({i, i + cols});
  }
  for (const auto& r : roads) {
    node_adj[r.a].push_back(r.b);
    node_adj[r.b].push_back(r.a);
  }

  // Multi-source BFS: hop distance and nearest counter per node (ties go to the lower index source).
  std::vector<int> dist(n_nodes, std::numeric_limits<int>::max());
  std::vector<std::size_t> nearest(n_nodes, 0);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if (has_counter[i]) {
      dist[i] = 0;
      nearest[i] = i;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : node_adj[u]) {
      if (dist[v] == std::numeric_limits<int>::max()) {
        dist[v] = dist[u] + 1;
        nearest[v] = nearest[u];
        queue.push_back(v);
      }
    }
  }
  auto counter_rank = std::vector<std::size_t>(n_nodes, 0);
  std::vector<std::size_t> counter_nodes;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if (has_counter[i]) {
      counter_rank[i] = counter_nodes.size();
      counter_nodes.push_back(i);
    }
  }

  struct SegGen {
    std::size_t tail, head;
    double base_logit;     // per-segment congestion propensity
    double base_volume;    // typical vehicles per bin
    std::size_t counter;   // index into counter_nodes
    double hop;            // hops to that counter
  };
  std::vector<SegmentRec> segs;
  std::vector<SegGen> gen;
  std::size_t expected = roads.size() * 2;
  for (const auto& road : roads) {
    const int importance = static_cast<int>(rng.below(kImportanceVocab));
    const int lanes = 1 + static_cast<int>(std::min<std::uint64_t>(3, (static_cast<std::uint64_t>(importance) + rng.below(3)) / 2));
    const int tunnel = rng.bernoulli(0.05) ? 1 : 0;
    const bool oneway = rng.bernoulli(0.25);
    const double maxspeed = 30.0 + 14.0 * importance;
    const double length = std::round(rng.uniform(60.0, 600.0) * 10.0) / 10.0;
    std::vector<std::pair<std::size_t, std::size_t>> dirs;
    if (oneway) {
      dirs.push_back(rng.bernoulli(0.5) ? std::pair{road.a, road.b} : std::pair{road.b, road.a});
    } else {
      dirs.push_back({road.a, road.b});
      dirs.push_back({road.b, road.a});
    }
    for (auto [t, h] : dirs) {
      SegmentRec s;
      s.segment_id = padded('s', segs.size(), expected);
      s.tail_node = nodes[t].node_id;
      s.head_node = nodes[h].node_id;
      s.importance = importance;
      s.oneway = oneway ? 1 : 0;
      s.tunnel = tunnel;
      s.lanes = lanes;
      s.parsed_maxspeed = maxspeed;
      s.limit_speed = maxspeed;
      s.flow_speed = std::round(maxspeed * rng.uniform(0.55, 0.9) * 10.0) / 10.0;
      s.length_meters = length;
      const std::size_t near_end = dist[t] <= dist[h] ? t : h;
      s.counter_distance = dist[near_end];
      SegGen g;
      g.tail = t;
      g.head = h;
      g.base_logit = -0.3 + 0.15 * (importance - 2.5) + rng.normal(0.0, 0.8);
      g.base_volume = 20.0 + 25.0 * importance + rng.uniform(0.0, 20.0);
      g.counter = counter_rank[nearest[near_end]];
      g.hop = dist[near_end];
      segs.push_back(std::move(s));
      gen.push_back(g);
    }
  }
  // Re-pad ids to the final count so ordering is lexical.
  for (std::size_t i = 0; i < segs.size(); ++i) segs[i].segment_id = padded('s', i, segs.size());

  std::vector<double> counter_base(counter_nodes.size());
  for (auto& b : counter_base) b = rng.uniform(40.0, 250.0);

  // Records: records_per_day distinct daytime slots per day.
  const auto R = static_cast<std::size_t>(spec.records);
  const auto per_day = static_cast<std::size_t>(spec.records_per_day);
  struct RecGen {
    std::vector<double> local;  // standardized local deviation per counter
    double volume_sum = 0.0;
  };
  Dataset d;
  d.meta.city_name = spec.city_name;
  std::vector<RecGen> rec_gen;
  const double local_sigma = 0.4;
  for (std::size_t day = 0; day * per_day < R; ++day) {
    const std::string date = add_days(spec.first_day, static_cast<int>(day));
    const double day_factor = std::exp(0.25 * rng.normal());
    std::vector<int> slots(kDaytimeEnd - kDaytimeStart);
    std::iota(slots.begin(), slots.end(), kDaytimeStart);
    rng.shuffle(std::span<int>(slots));
    const std::size_t take = std::min(per_day, R - day * per_day);
    std::vector<int> chosen(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (int t : chosen) {
      const double hour = t / 4.0;
      const double diurnal = 0.6 + 0.5 * std::exp(-std::pow((hour - 8.0) / 1.5, 2)) +
                             0.6 * std::exp(-std::pow((hour - 17.5) / 2.0, 2));
      const double level = day_factor * diurnal * std::exp(0.15 * rng.normal());
      VolumeRecord r;
      r.record_id = date + "_" + (t < 10 ? "0" : "") + std::to_string(t);
      r.day = date;
      r.t_index = t;
      RecGen rg;
      rg.local.resize(counter_nodes.size());
      for (std::size_t c = 0; c < counter_nodes.size(); ++c) {
        rg.local[c] = rng.normal();
        const double mean = counter_base[c] * level * std::exp(local_sigma * rg.local[c]);
        VolumeVector v{};
        for (auto& bin : v) bin = std::max(0.0, std::round(mean * std::exp(0.1 * rng.normal())));
        if (rng.bernoulli(0.05)) continue;  // vacant reading
        r.volumes.emplace(nodes[counter_nodes[c]].node_id, v);
        for (double b : v) rg.volume_sum += b;
      }
      d.records.push_back(std::move(r));
      rec_gen.push_back(std::move(rg));
    }
  }

  // Standardized log volumeSum drives the global effect.
  std::vector<double> g(d.records.size());
  {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = std::log1p(rec_gen[i].volume_sum);
      mean += g[i];
    }
    mean /= static_cast<double>(g.size());
    for (double x : g) sq += (x - mean) * (x - mean);
    const double sd = std::max(1e-6, std::sqrt(sq / static_cast<double>(g.size())));
    for (auto& x : g) x = (x - mean) / sd;
  }

  const double theta_green = 0.0;
  const double theta_red = 1.2;
  const double speed_factor[3] = {1.0, 0.65, 0.35};
  std::vector<std::vector<double>> true_speed(d.records.size(), std::vector<double>(segs.size()));
  for (std::size_t r = 0; r < d.records.size(); ++r) {
    LabelBundle b;
    b.record_id = d.records[r].record_id;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto& sg = gen[s];
      const double u = rec_gen[r].local[sg.counter];
      const double x = sg.base_logit + spec.signal * (spec.global_weight * g[r] +
                                                      spec.local_weight * u * std::exp(-sg.hop / spec.local_decay));
      const double p_green = sigmoid((theta_green - x) / spec.temperature);
      const double p_red = sigmoid((x - theta_red) / spec.temperature);
      const double draw = rng.uniform();
      const int cls = draw < p_green ? 0 : (draw < 1.0 - p_red ? 1 : 2);
      const double speed = segs[s].flow_speed * speed_factor[cls] * std::exp(0.05 * rng.normal());
      true_speed[r][s] = speed;
      const double vol_latent = std::log(sg.base_volume) + 0.5 * g[r] + 0.4 * u + 0.2 * rng.normal();
      const int vol_class = vol_latent < 4.0 ? 1 : (vol_latent < 4.8 ? 3 : 5);
      const bool undefined = rng.bernoulli(0.03);
      if (rng.bernoulli(0.1)) continue;  // segment unobserved in this record
      SegmentLabel l;
      l.cc = undefined ? 0 : cls + 1;
      l.speed_kph = std::round(speed * 100.0) / 100.0;
      l.vol_class = vol_class;
      b.edges.emplace(segs[s].segment_id, l);
    }
    d.labels.push_back(std::move(b));
  }

  // Supersegments: forward walks along chainable segments.
  std::vector<std::vector<std::size_t>> out_segs(n_nodes);
  for (std::size_t s = 0; s < gen.size(); ++s) out_segs[gen[s].tail].push_back(s);
  const std::size_t n_ss = std::max<std::size_t>(3, n_nodes / 5);
  for (std::size_t k = 0; k < n_ss; ++k) {
    const std::size_t target_len = 3 + rng.below(6);
    std::vector<std::size_t> path{static_cast<std::size_t>(rng.below(segs.size()))};
    std::set<std::size_t> visited{gen[path[0]].tail, gen[path[0]].head};
    while (path.size() < target_len) {
      std::vector<std::size_t> options;
      for (auto next : out_segs[gen[path.back()].head]) {
        if (!visited.contains(gen[next].head)) options.push_back(next);
      }
      if (options.empty()) break;
      const auto next = options[rng.below(options.size())];
      visited.insert(gen[next].head);
      path.push_back(next);
    }
    SuperSegment ss;
    ss.ss_id = padded('p', k, n_ss);
    for (auto s : path) ss.path.push_back(segs[s].segment_id);
    for (std::size_t r = 0; r < d.records.size(); ++r) {
      double eta = 0.0;
      for (auto s : path) eta += segs[s].length_meters / (true_speed[r][s] / 3.6);
      eta *= std::exp(0.05 * rng.normal());
      ss.etas.emplace(d.records[r].record_id, std::round(eta * 100.0) / 100.0);
    }
    d.supersegments.push_back(std::move(ss));
  }

  d.graph = RoadGraph(std::move(nodes), std::move(segs));
  validate_dataset(d);
  return d;
}

void generate_synthetic_city(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  write_dataset(synthesize_city(spec, seed), out_dir);
}

}  // namespace t4c
