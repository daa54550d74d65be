#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diprl/envs.hpp"

namespace diprl {

// Linear predicate: value(s) = bias + sum_i weights[i] * features[i].
struct Predicate {
  std::vector<double> weights;
  double bias = 0.0;

  double value(std::span<const double> features) const;
};

// Affine continuous action: mean = W * features + b, W row-major (dim x F).
struct AffineAction {
  int dim = 0;
  int in_dim = 0;
  std::vector<double> w;
  std::vector<double> b;

  std::vector<double> mean(std::span<const double> features) const;
};

struct TerminalAction {
  enum class Kind { discrete, affine };
  Kind kind = Kind::discrete;
  int index = 0;       // discrete
  AffineAction affine;  // continuous

  static TerminalAction make_discrete(int idx) {
    TerminalAction t;
    t.kind = Kind::discrete;
    t.index = idx;
    return t;
  }
  static TerminalAction make_affine(AffineAction a) {
    TerminalAction t;
    t.kind = Kind::affine;
    t.affine = std::move(a);
    return t;
  }
};

// If-else chain: clauses are tested in order, the first predicate with
// value > 0 fires its action, otherwise the fallback fires. depth = number
// of clauses + 1.
struct DiscreteProgram {
  std::vector<std::pair<Predicate, TerminalAction>> clauses;
  TerminalAction fallback;

  int depth() const { return static_cast<int>(clauses.size()) + 1; }
  int feature_dim() const;
};

// Deterministic interpretation; continuous means are clamped to bounds when
// a space is supplied. Throws ContractError on dimension mismatch.
Action evaluate(const DiscreteProgram& prog, std::span<const double> features,
                const ActionSpace* clamp_to = nullptr);

// Naming context for text I/O. Empty vectors mean the default f0.../a0...
// names.
struct ProgramNames {
  std::vector<std::string> features;
  std::vector<std::string> actions;

  static ProgramNames for_env(const Env& env) {
    return {env.feature_names(), env.action_names()};
  }
};

// Round-trip text form; coefficients are printed with shortest
// representation that parses back bit-exactly.
std::string pretty_print(const DiscreteProgram& prog,
                         const ProgramNames& names = {});

// Inverse of pretty_print. Throws ParseError with line/column on syntax
// errors, unknown feature or action names, or depth > max_depth.
DiscreteProgram parse_program(std::string_view text, int feature_dim,
                              const ProgramNames& names = {},
                              int max_depth = 64);

}  // namespace diprl
