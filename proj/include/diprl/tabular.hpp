#pragma once

#include <cstddef>
#include <vector>

namespace diprl {

// Finite MDP with explicit tensors; the exact-evaluation oracle for the
// theory checks. States are encoded one-hot for policy evaluation.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> p;  // transition probs, [s][a][s']
  std::vector<double> r;  // rewards, [s][a][s']
  double gamma = 0.99;
  std::vector<double> mu0;  // initial state distribution

  double& P(int s, int a, int s2) {
    return p[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double P(int s, int a, int s2) const {
    return p[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double& R(int s, int a, int s2) {
    return r[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double R(int s, int a, int s2) const {
    return r[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }

  static TabularMDP zeros(int n_states, int n_actions, double gamma);

  // Throws NumericalError on malformed tensors (rows not summing to 1,
  // mu0 not a simplex, gamma out of range).
  void validate(double tol = 1e-12) const;

  std::vector<double> one_hot(int s) const;
};

}  // namespace diprl
