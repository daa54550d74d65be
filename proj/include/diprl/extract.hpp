#pragma once

#include <cstdint>
#include <string>

#include "diprl/program.hpp"
#include "diprl/relaxed_policy.hpp"
#include "diprl/trainer_eval.hpp"

namespace diprl {

struct ExtractionReport {
  int chosen_depth = 1;  // d*, ties to the smallest depth
  double p_max = 0.0;
  double deleted_mass = 0.0;       // m_T = 1 - p_max
  double entropy = 0.0;            // H(T)
  double normalized_entropy = 0.0; // H / ln(D_m)
  double entropy_mass_bound = 0.0; // 1 - exp(-H)
  std::vector<double> depth_probs;

  std::string to_json() const;
};

// Argmax-depth discretization: clauses 1..d*-1 copy predicate parameters
// verbatim; discrete heads collapse to their argmax action (ties to the
// smallest index), continuous heads keep their affine means.
std::pair<DiscreteProgram, ExtractionReport> discretize(const RelaxedPolicy& policy);

// The extracted program re-expressed as a relaxed policy: same parameters
// with the architecture pinned at d*. Used by the exact theory checks.
RelaxedPolicy extracted_as_relaxed(const RelaxedPolicy& policy);

struct GapResult {
  double j_relaxed = 0.0;    // sampled relaxed policy
  double j_extracted = 0.0;  // deterministic program
  double gap = 0.0;          // j_relaxed - j_extracted
  EvalResult relaxed;
  EvalResult extracted;
};

// Monte-Carlo returns over matched episode seeds; discount 1.0 gives task
// returns, a (0,1) discount matches the exact tabular oracle.
GapResult extraction_gap(const RelaxedPolicy& policy, const DiscreteProgram& program,
                         Env& env, int episodes, std::uint64_t seed,
                         double discount = 1.0);

}  // namespace diprl
