#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "t4c/dataset.hpp"

namespace t4c {

struct SynthSpec {
  int nodes = 50;
  double counter_frac = 0.1;
  int records = 200;
  double signal = 0.9;  // 0: labels independent of volumes, 1: fully volume-driven
  int records_per_day = 10;
  std::string city_name = "synthetic";
  std::string first_day = "2021-06-01";

  // Label model. x = base + signal * (global_weight * g + local_weight * u * exp(-d / local_decay)),
  // where g is the standardized log volumeSum and u the nearest counter's standardized deviation.
  double global_weight = 3.0;
  double local_weight = 1.0;
  double local_decay = 1.5;
  double temperature = 0.15;
};

/// Deterministic desk-scale city: a jittered grid road network with sparse counters, daytime
/// records, labels with learnable volume structure, and chained supersegments with ETAs.
Dataset synthesize_city(const SynthSpec& spec, std::uint64_t seed);

/// synthesize_city + write_dataset.
void generate_synthetic_city(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace t4c
