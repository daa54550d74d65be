#pragma once

#include <string>

#include "diprl/trainer.hpp"

namespace diprl {

struct Checkpoint {
  TrainConfig config;
  PolicyShape shape;
  RelaxedPolicy policy;
  Critic critic;
  DualState dual;
  long step = 0;
  std::uint64_t sample_key = 0, sample_counter = 0;
  std::uint64_t shuffle_key = 0, shuffle_counter = 0;
};

std::string checkpoint_to_json(const TrainSnapshot& snap);
// Throws ConfigError on version/format problems.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint_file(const std::string& path, const TrainSnapshot& snap);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace diprl
