#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "diprl/autodiff.hpp"
#include "diprl/envs.hpp"
#include "diprl/rng.hpp"

namespace diprl {

enum class HeadKind { discrete, gaussian };

// Soft gating uses sigmoid(phi); hard gating thresholds phi > 0 and matches
// deployed program behavior.
enum class GateMode { soft, hard };

struct PolicyShape {
  int max_depth = 6;
  int feature_dim = 0;
  HeadKind head = HeadKind::discrete;
  int n_actions = 0;   // discrete heads
  int action_dim = 0;  // gaussian heads
};

struct DepthDistribution {
  std::vector<double> p;  // over depths 1..D_m
  double entropy = 0.0;
  double normalized_entropy = 0.0;  // H / ln(D_m), 0 when D_m = 1
  double p_max = 0.0;
  int argmax_depth = 1;       // 1-based; ties break to the smallest depth
  double deleted_mass = 0.0;  // 1 - p_max
};

// Continuous relaxation of the if-else chain: a softmax over program depths,
// sigmoid-gated predicates shared across depths, and one action head per
// leaf. Depth d uses predicates 1..d-1 and heads 1..d.
class RelaxedPolicy {
 public:
  static RelaxedPolicy init(const PolicyShape& shape, Rng& rng);
  static RelaxedPolicy from_params(const PolicyShape& shape, ad::ParamSet params,
                                   std::optional<int> frozen_depth = {});

  const PolicyShape& shape() const { return shape_; }
  const ad::ParamSet& params() const { return params_; }
  ad::ParamSet& params() { return params_; }

  // Baseline-mode extraction: pins the architecture to one depth. The depth
  // distribution becomes exactly one-hot and depth logits stop receiving
  // gradients.
  void freeze_depth(int depth);
  std::optional<int> frozen_depth() const { return frozen_depth_; }

  DepthDistribution depth_distribution() const;

  // Gate weights of the depth-d program: g_k for the d-1 if-branches plus the
  // terminal else chain; always sums to 1.
  std::vector<double> gate_weights(std::span<const double> features, int depth,
                                   GateMode mode = GateMode::soft) const;

  // Mixture weight of each leaf head under the full depth distribution.
  std::vector<double> leaf_weights(std::span<const double> features,
                                   GateMode mode = GateMode::soft) const;

  // Discrete-head action probabilities (softmax of head k's logits).
  std::vector<double> head_distribution(int k) const;

  // pi(a|s) for discrete heads; convex mixture of the head simplexes.
  std::vector<double> action_distribution(std::span<const double> features,
                                          GateMode mode = GateMode::soft) const;

  // pi_d(a|s): the depth-d gated mixture alone (discrete heads).
  std::vector<double> depth_action_distribution(std::span<const double> features,
                                                int depth,
                                                GateMode mode = GateMode::soft) const;

  std::pair<Action, double> sample_action(std::span<const double> features,
                                          Rng& rng) const;
  // ln pi(a|s) (discrete mass / gaussian mixture density). Returns -inf for
  // zero-probability actions.
  double log_prob(std::span<const double> features, const Action& action) const;

  Action greedy_action(std::span<const double> features) const;

  // Gaussian head accessors (mean is affine in the features).
  std::vector<double> head_mean(int k, std::span<const double> features) const;
  std::span<const double> head_log_std(int k) const;

 private:
  explicit RelaxedPolicy(const PolicyShape& shape);
  std::vector<double> sigmoids(std::span<const double> features,
                               GateMode mode) const;

  PolicyShape shape_;
  ad::ParamSet params_;
  std::optional<int> frozen_depth_;

  friend struct PolicyGraph;
};

// Tape-side policy graph. Architecture nodes (depth softmax, entropy, suffix
// sums) and head distributions are state independent, so they are recorded
// once per tape and shared across all samples of a minibatch.
struct PolicyGraph {
  const RelaxedPolicy* policy = nullptr;
  ad::BoundParams bound;
  ad::NodeId depth_probs;             // length D_m
  ad::NodeId arch_entropy;            // scalar H(T)
  std::vector<ad::NodeId> depth_prob; // p_d picks, length D_m
  std::vector<ad::NodeId> tail_mass;  // sum of p_{d}, d > k, length D_m
  std::vector<ad::NodeId> head_dist;  // discrete heads only
  ad::NodeId one;

  static PolicyGraph build(ad::Tape& tape, const RelaxedPolicy& policy);

  // ln pi(a|s) for one sample.
  ad::NodeId log_prob(ad::Tape& tape, std::span<const double> features,
                      const Action& action) const;

  // Leaf mixture weights as tape nodes (length D_m).
  std::vector<ad::NodeId> leaf_weight_nodes(ad::Tape& tape,
                                            std::span<const double> features) const;
};

}  // namespace diprl
