#pragma once

#include <optional>
#include <span>
#include <vector>

#include "diprl/relaxed_policy.hpp"
#include "diprl/tabular.hpp"

namespace diprl {

// pi(a|s) rows for exact tabular evaluation.
struct PolicyTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // [s][a]

  double pi(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
  double& pi(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
};

// Evaluates the relaxed policy on every one-hot state. force_depth pins the
// architecture to one depth (the extracted-program form); gate mode selects
// sigmoid or thresholded predicates.
PolicyTable tabulate_policy(const RelaxedPolicy& policy, const TabularMDP& mdp,
                            GateMode mode = GateMode::soft,
                            std::optional<int> force_depth = {});

// Q^pi via direct linear solve of the Bellman system (LU with partial
// pivoting); exact to solver precision for gamma < 1.
std::vector<double> exact_q(const TabularMDP& mdp, const PolicyTable& pi);

// Iterative oracle for exact_q: value iteration on the fixed policy until
// the sup-norm update falls below tol.
std::vector<double> exact_q_value_iteration(const TabularMDP& mdp,
                                            const PolicyTable& pi,
                                            double tol = 1e-13,
                                            long max_iters = 4000000);

std::vector<double> state_values(const TabularMDP& mdp, const PolicyTable& pi,
                                 std::span<const double> q);

// J(pi) = E_{s0 ~ mu0} V(s0).
double exact_return(const TabularMDP& mdp, const PolicyTable& pi);

// d^pi(s) = (1-gamma) mu0^T (I - gamma P_pi)^{-1}; sums to 1.
std::vector<double> discounted_visitation(const TabularMDP& mdp,
                                          const PolicyTable& pi);

// Q^pi_d(s) = sum_a pi_d(a|s) Q(s,a) for each depth d, using the depth-d
// gated mixture. Returns [d][s] with d in 1..max_depth.
std::vector<std::vector<double>> path_values(const TabularMDP& mdp,
                                             const RelaxedPolicy& policy,
                                             std::span<const double> q,
                                             GateMode mode = GateMode::soft);

// The full decomposition of J(extracted) - J(relaxed) for one policy pair,
// with every identity and bound evaluated exactly.
struct GapReport {
  int chosen_depth = 1;
  double deleted_mass = 0.0;  // m_T
  double entropy = 0.0;       // H(T)
  std::vector<double> q_keep;  // per state
  std::vector<double> q_del;   // per state
  double kappa_min = 0.0;      // min_s (q_del - q_keep) over visited states
  bool kappa_positive = false;
  double delta = 0.0;  // max_s |q_keep - q_del| over visited states
  double j_relaxed = 0.0;
  double j_extracted = 0.0;
  // J(~pi) - J(pi) computed three ways.
  double gap_direct = 0.0;
  double gap_path_sum = 0.0;
  double gap_mass_form = 0.0;
  double identity_residual = 0.0;  // max pairwise disagreement
  // Bound slacks; all must be >= 0 (up to fp noise).
  double slack_mass_vs_exp = 0.0;   // (1 - exp(-H)) - m_T
  double slack_exp_vs_h = 0.0;      // H - (1 - exp(-H))
  double slack_gap_vs_delta = 0.0;  // delta * m_T / (1-gamma) - |gap|
  double slack_eq9 = 0.0;           // only meaningful when kappa_positive
};

// Verifies the performance-difference identity and the bound chains for the
// pair (policy, argmax-depth extraction of policy). Both policies use the
// given gate mode, so the path decomposition is exact in either mode.
GapReport verify_identity(const TabularMDP& mdp, const RelaxedPolicy& policy,
                          GateMode mode = GateMode::soft);

struct BoundSlacks {
  double mass_vs_exp = 0.0;  // (1 - exp(-H)) - m_T
  double exp_vs_h = 0.0;     // H - (1 - exp(-H))
  double entropy = 0.0;
  double deleted_mass = 0.0;
};

// m_T <= 1 - exp(-H) <= H for an arbitrary simplex.
BoundSlacks verify_bounds(std::span<const double> simplex);

}  // namespace diprl
