#pragma once

#include <cstdint>
#include <vector>

#include "diprl/envs.hpp"
#include "diprl/program.hpp"
#include "diprl/relaxed_policy.hpp"

namespace diprl {

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> returns;
};

enum class EvalMode { greedy, sampled };

// Runs `episodes` episodes with per-episode seeds derived from `seed`, so two
// evaluations with the same seed see identical initial states. `discount`
// 1.0 reports task returns; a (0,1) value reports discounted returns for
// comparison against exact solvers. Throws ContractError when episodes < 1.
EvalResult evaluate_policy(const RelaxedPolicy& policy, Env& env, int episodes,
                           std::uint64_t seed, EvalMode mode,
                           double discount = 1.0);

EvalResult evaluate_program(const DiscreteProgram& program, Env& env,
                            int episodes, std::uint64_t seed,
                            double discount = 1.0);

}  // namespace diprl
