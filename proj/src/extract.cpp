#include "diprl/extract.hpp"

#include <cmath>

#include <json.hpp>

namespace diprl {

std::string ExtractionReport::to_json() const {
  nlohmann::json j;
  j["chosen_depth"] = chosen_depth;
  j["p_max"] = p_max;
  j["deleted_mass"] = deleted_mass;
  j["entropy"] = entropy;
  j["normalized_entropy"] = normalized_entropy;
  j["entropy_mass_bound"] = entropy_mass_bound;
  j["depth_probs"] = depth_probs;
  return j.dump(2) + "\n";
}

std::pair<DiscreteProgram, ExtractionReport> discretize(const RelaxedPolicy& policy) {
  const PolicyShape& shape = policy.shape();
  DepthDistribution dist = policy.depth_distribution();

  ExtractionReport rep;
  rep.chosen_depth = dist.argmax_depth;
  rep.p_max = dist.p_max;
  rep.deleted_mass = dist.deleted_mass;
  rep.entropy = dist.entropy;
  rep.normalized_entropy = dist.normalized_entropy;
  rep.entropy_mass_bound = 1.0 - std::exp(-dist.entropy);
  rep.depth_probs = dist.p;

  auto head_action = [&](int k) {
    if (shape.head == HeadKind::discrete) {
      std::span<const double> logits =
          policy.params().values("head" + std::to_string(k) + ".logits");
      int best = 0;
      for (int a = 1; a < shape.n_actions; ++a) {
        if (logits[a] > logits[best]) best = a;  // ties keep the smaller index
      }
      return TerminalAction::make_discrete(best);
    }
    AffineAction aff;
    aff.dim = shape.action_dim;
    aff.in_dim = shape.feature_dim;
    std::span<const double> w =
        policy.params().values("head" + std::to_string(k) + ".W");
    std::span<const double> b =
        policy.params().values("head" + std::to_string(k) + ".b");
    aff.w.assign(w.begin(), w.end());
    aff.b.assign(b.begin(), b.end());
    return TerminalAction::make_affine(std::move(aff));
  };

  DiscreteProgram prog;
  for (int k = 0; k < rep.chosen_depth - 1; ++k) {
    Predicate pred;
    std::span<const double> w =
        policy.params().values("pred" + std::to_string(k) + ".w");
    pred.weights.assign(w.begin(), w.end());
    pred.bias = policy.params().values("pred" + std::to_string(k) + ".b")[0];
    prog.clauses.emplace_back(std::move(pred), head_action(k));
  }
  prog.fallback = head_action(rep.chosen_depth - 1);
  return {std::move(prog), std::move(rep)};
}

RelaxedPolicy extracted_as_relaxed(const RelaxedPolicy& policy) {
  DepthDistribution dist = policy.depth_distribution();
  RelaxedPolicy out = policy;
  out.freeze_depth(dist.argmax_depth);
  return out;
}

GapResult extraction_gap(const RelaxedPolicy& policy, const DiscreteProgram& program,
                         Env& env, int episodes, std::uint64_t seed,
                         double discount) {
  if (episodes < 1) throw ContractError("extraction_gap: episodes must be >= 1");
  GapResult out;
  out.relaxed = evaluate_policy(policy, env, episodes, seed, EvalMode::sampled, discount);
  out.extracted = evaluate_program(program, env, episodes, seed, discount);
  out.j_relaxed = out.relaxed.mean;
  out.j_extracted = out.extracted.mean;
  out.gap = out.j_relaxed - out.j_extracted;
  return out;
}

}  // namespace diprl
