#include "diprl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diprl/errors.hpp"
#include "diprl/kernels.hpp"

namespace diprl {

namespace {

// Dense LU solve with partial pivoting; systems here are tiny (n <= a few
// dozen) and well conditioned for gamma < 1.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b,
                                 int n) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(a[col * n + col]);
    for (int row = col + 1; row < n; ++row) {
      double v = std::abs(a[row * n + col]);
      if (v > best) {
        best = v;
        pivot = row;
      }
    }
    if (best == 0.0) throw NumericalError("singular linear system");
    if (pivot != col) {
      for (int j = 0; j < n; ++j) std::swap(a[col * n + j], a[pivot * n + j]);
      std::swap(b[col], b[pivot]);
    }
    double d = a[col * n + col];
    for (int row = col + 1; row < n; ++row) {
      double f = a[row * n + col] / d;
      if (f == 0.0) continue;
      a[row * n + col] = 0.0;
      for (int j = col + 1; j < n; ++j) a[row * n + j] -= f * a[col * n + j];
      b[row] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (int row = n - 1; row >= 0; --row) {
    double acc = b[row];
    for (int j = row + 1; j < n; ++j) acc -= a[row * n + j] * x[j];
    x[row] = acc / a[row * n + row];
  }
  return x;
}

// P_pi[s][s'] and r_pi[s] = expected one-step reward under pi.
void policy_dynamics(const TabularMDP& mdp, const PolicyTable& pi,
                     std::vector<double>& p_pi, std::vector<double>& r_pi) {
  int n = mdp.n_states;
  p_pi.assign(static_cast<std::size_t>(n) * n, 0.0);
  r_pi.assign(n, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double pa = pi.pi(s, a);
      if (pa == 0.0) continue;
      for (int s2 = 0; s2 < n; ++s2) {
        double pr = mdp.P(s, a, s2);
        p_pi[s * n + s2] += pa * pr;
        r_pi[s] += pa * pr * mdp.R(s, a, s2);
      }
    }
  }
}

}  // namespace

PolicyTable tabulate_policy(const RelaxedPolicy& policy, const TabularMDP& mdp,
                            GateMode mode, std::optional<int> force_depth) {
  if (policy.shape().feature_dim != mdp.n_states) {
    throw ContractError("tabulate_policy: policy feature_dim != n_states");
  }
  PolicyTable t;
  t.n_states = mdp.n_states;
  t.n_actions = mdp.n_actions;
  t.probs.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    std::vector<double> feats = mdp.one_hot(s);
    std::vector<double> pi =
        force_depth.has_value()
            ? policy.depth_action_distribution(feats, *force_depth, mode)
            : policy.action_distribution(feats, mode);
    if (static_cast<int>(pi.size()) != mdp.n_actions) {
      throw ContractError("tabulate_policy: action count mismatch");
    }
    for (int a = 0; a < mdp.n_actions; ++a) t.pi(s, a) = pi[a];
  }
  return t;
}

std::vector<double> exact_q(const TabularMDP& mdp, const PolicyTable& pi) {
  int n = mdp.n_states;
  std::vector<double> p_pi, r_pi;
  policy_dynamics(mdp, pi, p_pi, r_pi);

  // Solve (I - gamma P_pi) V = r_pi, then expand to Q.
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int s2 = 0; s2 < n; ++s2) {
      a[s * n + s2] = (s == s2 ? 1.0 : 0.0) - mdp.gamma * p_pi[s * n + s2];
    }
  }
  std::vector<double> v = solve_linear(std::move(a), r_pi, n);

  std::vector<double> q(static_cast<std::size_t>(n) * mdp.n_actions, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int act = 0; act < mdp.n_actions; ++act) {
      double acc = 0.0;
      for (int s2 = 0; s2 < n; ++s2) {
        acc += mdp.P(s, act, s2) * (mdp.R(s, act, s2) + mdp.gamma * v[s2]);
      }
      q[s * mdp.n_actions + act] = acc;
    }
  }
  return q;
}

std::vector<double> exact_q_value_iteration(const TabularMDP& mdp,
                                            const PolicyTable& pi, double tol,
                                            long max_iters) {
  int n = mdp.n_states;
  int na = mdp.n_actions;
  std::vector<double> q(static_cast<std::size_t>(n) * na, 0.0);
  std::vector<double> v(n, 0.0);
  for (long it = 0; it < max_iters; ++it) {
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int a = 0; a < na; ++a) acc += pi.pi(s, a) * q[s * na + a];
      v[s] = acc;
    }
    double delta = 0.0;
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < na; ++a) {
        double acc = 0.0;
        for (int s2 = 0; s2 < n; ++s2) {
          acc += mdp.P(s, a, s2) * (mdp.R(s, a, s2) + mdp.gamma * v[s2]);
        }
        delta = std::max(delta, std::abs(acc - q[s * na + a]));
        q[s * na + a] = acc;
      }
    }
    if (delta < tol) break;
  }
  return q;
}

std::vector<double> state_values(const TabularMDP& mdp, const PolicyTable& pi,
                                 std::span<const double> q) {
  std::vector<double> v(mdp.n_states, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      v[s] += pi.pi(s, a) * q[s * mdp.n_actions + a];
    }
  }
  return v;
}

double exact_return(const TabularMDP& mdp, const PolicyTable& pi) {
  std::vector<double> q = exact_q(mdp, pi);
  std::vector<double> v = state_values(mdp, pi, q);
  return kernels::active().dot(mdp.mu0.data(), v.data(), v.size());
}

std::vector<double> discounted_visitation(const TabularMDP& mdp,
                                          const PolicyTable& pi) {
  int n = mdp.n_states;
  std::vector<double> p_pi, r_pi;
  policy_dynamics(mdp, pi, p_pi, r_pi);

  // Solve (I - gamma P_pi^T) d = (1-gamma) mu0.
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> b(n, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int s2 = 0; s2 < n; ++s2) {
      a[s * n + s2] = (s == s2 ? 1.0 : 0.0) - mdp.gamma * p_pi[s2 * n + s];
    }
    b[s] = (1.0 - mdp.gamma) * mdp.mu0[s];
  }
  return solve_linear(std::move(a), std::move(b), n);
}

std::vector<std::vector<double>> path_values(const TabularMDP& mdp,
                                             const RelaxedPolicy& policy,
                                             std::span<const double> q,
                                             GateMode mode) {
  int d_m = policy.shape().max_depth;
  std::vector<std::vector<double>> out(d_m, std::vector<double>(mdp.n_states, 0.0));
  for (int s = 0; s < mdp.n_states; ++s) {
    std::vector<double> feats = mdp.one_hot(s);
    for (int d = 1; d <= d_m; ++d) {
      std::vector<double> pi_d = policy.depth_action_distribution(feats, d, mode);
      double acc = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        acc += pi_d[a] * q[s * mdp.n_actions + a];
      }
      out[d - 1][s] = acc;
    }
  }
  return out;
}

BoundSlacks verify_bounds(std::span<const double> simplex) {
  double h = 0.0;
  double p_max = 0.0;
  for (double p : simplex) {
    if (p > 0.0) h -= p * std::log(p);
    p_max = std::max(p_max, p);
  }
  BoundSlacks s;
  s.entropy = h;
  s.deleted_mass = 1.0 - p_max;
  double bound = 1.0 - std::exp(-h);
  s.mass_vs_exp = bound - s.deleted_mass;
  s.exp_vs_h = h - bound;
  return s;
}

GapReport verify_identity(const TabularMDP& mdp, const RelaxedPolicy& policy,
                          GateMode mode) {
  mdp.validate();
  DepthDistribution dist = policy.depth_distribution();
  int d_m = policy.shape().max_depth;
  int d_star = dist.argmax_depth;

  PolicyTable pi = tabulate_policy(policy, mdp, mode);
  PolicyTable pi_ext = tabulate_policy(policy, mdp, mode, d_star);

  std::vector<double> q = exact_q(mdp, pi);
  std::vector<double> v = state_values(mdp, pi, q);
  std::vector<double> v_ext_q = exact_q(mdp, pi_ext);
  std::vector<double> v_ext = state_values(mdp, pi_ext, v_ext_q);

  GapReport rep;
  rep.chosen_depth = d_star;
  rep.deleted_mass = dist.deleted_mass;
  rep.entropy = dist.entropy;
  rep.j_relaxed = kernels::active().dot(mdp.mu0.data(), v.data(), v.size());
  rep.j_extracted =
      kernels::active().dot(mdp.mu0.data(), v_ext.data(), v_ext.size());
  rep.gap_direct = rep.j_extracted - rep.j_relaxed;

  // Path-sum form under the extracted policy's visitation.
  std::vector<double> d_vis = discounted_visitation(mdp, pi_ext);
  std::vector<std::vector<double>> qd = path_values(mdp, policy, q, mode);

  double m_t = rep.deleted_mass;
  rep.q_keep.assign(mdp.n_states, 0.0);
  rep.q_del.assign(mdp.n_states, 0.0);

  double path_sum = 0.0;
  double mass_form = 0.0;
  double kappa_min = std::numeric_limits<double>::infinity();
  double delta = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    // Retained set is {d*} with P_ext(d*) = 1.
    double keep_term = (1.0 - dist.p[d_star - 1]) * qd[d_star - 1][s];
    double del_term = 0.0;
    for (int d = 1; d <= d_m; ++d) {
      if (d == d_star) continue;
      del_term += dist.p[d - 1] * qd[d - 1][s];
    }
    path_sum += d_vis[s] * (keep_term - del_term);

    if (m_t > 0.0) {
      rep.q_keep[s] = keep_term / m_t;
      rep.q_del[s] = del_term / m_t;
    } else {
      rep.q_keep[s] = qd[d_star - 1][s];
      rep.q_del[s] = qd[d_star - 1][s];
    }
    mass_form += d_vis[s] * m_t * (rep.q_keep[s] - rep.q_del[s]);
    if (d_vis[s] > 0.0) {
      kappa_min = std::min(kappa_min, rep.q_del[s] - rep.q_keep[s]);
      delta = std::max(delta, std::abs(rep.q_keep[s] - rep.q_del[s]));
    }
  }
  double inv = 1.0 / (1.0 - mdp.gamma);
  rep.gap_path_sum = inv * path_sum;
  rep.gap_mass_form = inv * mass_form;
  rep.identity_residual =
      std::max({std::abs(rep.gap_direct - rep.gap_path_sum),
                std::abs(rep.gap_direct - rep.gap_mass_form),
                std::abs(rep.gap_path_sum - rep.gap_mass_form)});

  rep.kappa_min = std::isfinite(kappa_min) ? kappa_min : 0.0;
  rep.kappa_positive = std::isfinite(kappa_min) && kappa_min > 0.0;
  rep.delta = delta;

  BoundSlacks bounds = verify_bounds(dist.p);
  rep.slack_mass_vs_exp = bounds.mass_vs_exp;
  rep.slack_exp_vs_h = bounds.exp_vs_h;
  rep.slack_gap_vs_delta = rep.delta * m_t * inv - std::abs(rep.gap_direct);

  if (rep.kappa_positive) {
    // Eq. 9 upper bound: gap <= -E[m_T kappa(s)] / (1-gamma).
    double rhs = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      rhs += d_vis[s] * m_t * (rep.q_del[s] - rep.q_keep[s]);
    }
    rep.slack_eq9 = -inv * rhs - rep.gap_direct;
  }
  return rep;
}

}  // namespace diprl
