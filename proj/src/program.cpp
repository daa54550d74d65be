#include "diprl/program.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "diprl/kernels.hpp"

namespace diprl {

namespace {

// Shortest decimal form that round-trips the exact double.
std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string default_feature_name(int i) { return "f" + std::to_string(i); }
std::string default_action_name(int i) { return "a" + std::to_string(i); }

}  // namespace

double Predicate::value(std::span<const double> features) const {
  if (features.size() != weights.size()) {
    throw ContractError("predicate: feature length " +
                        std::to_string(features.size()) + " != weight length " +
                        std::to_string(weights.size()));
  }
  return bias + kernels::active().dot(weights.data(), features.data(),
                                      weights.size());
}

std::vector<double> AffineAction::mean(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != in_dim) {
    throw ContractError("affine action: feature length mismatch");
  }
  std::vector<double> out(dim, 0.0);
  kernels::active().gemv(w.data(), dim, in_dim, features.data(), out.data());
  kernels::active().add(out.data(), b.data(), out.data(), dim);
  return out;
}

int DiscreteProgram::feature_dim() const {
  if (!clauses.empty()) return static_cast<int>(clauses.front().first.weights.size());
  if (fallback.kind == TerminalAction::Kind::affine) return fallback.affine.in_dim;
  return 0;
}

Action evaluate(const DiscreteProgram& prog, std::span<const double> features,
                const ActionSpace* clamp_to) {
  auto fire = [&](const TerminalAction& t) -> Action {
    if (t.kind == TerminalAction::Kind::discrete) return t.index;
    std::vector<double> m = t.affine.mean(features);
    if (clamp_to != nullptr) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = std::clamp(m[i], clamp_to->low[i], clamp_to->high[i]);
      }
    }
    return m;
  };
  for (const auto& [pred, act] : prog.clauses) {
    if (pred.value(features) > 0.0) return fire(act);
  }
  return fire(prog.fallback);
}

// ------------------------------------------------------------ pretty print

namespace {

std::string format_linexpr(const Predicate& p,
                           const std::vector<std::string>& feature_names) {
  std::string out = fmt_double(p.bias);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    double w = p.weights[i];
    bool neg = std::signbit(w);
    out += neg ? " - " : " + ";
    out += fmt_double(neg ? -w : w);
    out += "*";
    out += i < feature_names.size() ? feature_names[i]
                                    : default_feature_name(static_cast<int>(i));
  }
  return out;
}

std::string format_action(const TerminalAction& t,
                          const std::vector<std::string>& action_names) {
  if (t.kind == TerminalAction::Kind::discrete) {
    if (t.index < static_cast<int>(action_names.size())) {
      return action_names[t.index];
    }
    return default_action_name(t.index);
  }
  std::string out = "affine([";
  for (int r = 0; r < t.affine.dim; ++r) {
    if (r > 0) out += ", ";
    out += "[";
    for (int c = 0; c < t.affine.in_dim; ++c) {
      if (c > 0) out += ", ";
      out += fmt_double(t.affine.w[r * t.affine.in_dim + c]);
    }
    out += "]";
  }
  out += "]; [";
  for (int r = 0; r < t.affine.dim; ++r) {
    if (r > 0) out += ", ";
    out += fmt_double(t.affine.b[r]);
  }
  out += "])";
  return out;
}

}  // namespace

std::string pretty_print(const DiscreteProgram& prog, const ProgramNames& names) {
  std::string out;
  for (std::size_t i = 0; i < prog.clauses.size(); ++i) {
    out += i == 0 ? "if (" : "else if (";
    out += format_linexpr(prog.clauses[i].first, names.features);
    out += " > 0):\n    ";
    out += format_action(prog.clauses[i].second, names.actions);
    out += "\n";
  }
  if (!prog.clauses.empty()) out += "else:\n    ";
  out += format_action(prog.fallback, names.actions);
  out += "\n";
  return out;
}

// ------------------------------------------------------------------ parser

namespace {

class Scanner {
 public:
  Scanner(std::string_view text, int line) : text_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) {
      ++pos_;
    }
  }

  bool eat(std::string_view token) {
    skip_ws();
    if (text_.substr(pos_).starts_with(token)) {
      pos_ += token.size();
      return true;
    }
    return false;
  }

  void expect(std::string_view token) {
    if (!eat(token)) {
      throw ParseError("expected '" + std::string(token) + "'", line_, col());
    }
  }

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  double number() {
    skip_ws();
    double v = 0.0;
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{}) {
      throw ParseError("expected a decimal literal", line_, col());
    }
    pos_ += static_cast<std::size_t>(res.ptr - begin);
    return v;
  }

  std::string identifier() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
            text_[pos_] == '_')) {
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError("expected an identifier", line_, col());
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  int col() const { return static_cast<int>(pos_) + 1; }
  int line() const { return line_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_;
};

struct LineFeed {
  std::vector<std::pair<int, std::string_view>> lines;  // (line number, text)
  std::size_t next = 0;

  explicit LineFeed(std::string_view text) {
    int ln = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t nl = text.find('\n', start);
      std::string_view line = nl == std::string_view::npos
                                  ? text.substr(start)
                                  : text.substr(start, nl - start);
      ++ln;
      // Drop blank lines entirely.
      if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
        if (line.ends_with('\r')) line.remove_suffix(1);
        lines.emplace_back(ln, line);
      }
      if (nl == std::string_view::npos) break;
      start = nl + 1;
    }
  }

  bool done() const { return next >= lines.size(); }
  Scanner take() {
    if (done()) {
      int last = lines.empty() ? 1 : lines.back().first;
      throw ParseError("unexpected end of input", last, 1);
    }
    auto [ln, text] = lines[next++];
    return Scanner(text, ln);
  }
};

int lookup_name(const std::string& ident, const std::vector<std::string>& names,
                char default_prefix, int limit, const char* what, int line,
                int col) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == ident) return static_cast<int>(i);
  }
  if (ident.size() >= 2 && ident[0] == default_prefix) {
    int idx = -1;
    auto res = std::from_chars(ident.data() + 1, ident.data() + ident.size(), idx);
    if (res.ec == std::errc{} && res.ptr == ident.data() + ident.size() &&
        idx >= 0 && (limit < 0 || idx < limit)) {
      return idx;
    }
  }
  throw ParseError(std::string("unknown ") + what + " name '" + ident + "'",
                   line, col);
}

Predicate parse_linexpr(Scanner& sc, int feature_dim,
                        const std::vector<std::string>& feature_names) {
  Predicate p;
  p.weights.assign(feature_dim, 0.0);
  p.bias = sc.number();
  for (;;) {
    double sign;
    if (sc.eat("+")) {
      sign = 1.0;
    } else if (sc.eat("-")) {
      sign = -1.0;
    } else {
      break;
    }
    double coeff = sc.number();
    sc.expect("*");
    int line = sc.line(), col = sc.col();
    std::string ident = sc.identifier();
    int idx = lookup_name(ident, feature_names, 'f', feature_dim, "feature",
                          line, col);
    p.weights[idx] = sign * coeff;
  }
  return p;
}

std::vector<double> parse_number_list(Scanner& sc) {
  std::vector<double> out;
  sc.expect("[");
  if (!sc.eat("]")) {
    out.push_back(sc.number());
    while (sc.eat(",")) out.push_back(sc.number());
    sc.expect("]");
  }
  return out;
}

TerminalAction parse_action(Scanner& sc, int feature_dim,
                            const std::vector<std::string>& action_names) {
  int line = sc.line(), col = sc.col();
  if (sc.eat("affine(")) {
    AffineAction aff;
    sc.expect("[");
    std::vector<std::vector<double>> rows;
    rows.push_back(parse_number_list(sc));
    while (sc.eat(",")) rows.push_back(parse_number_list(sc));
    sc.expect("]");
    sc.expect(";");
    std::vector<double> bias = parse_number_list(sc);
    sc.expect(")");
    aff.dim = static_cast<int>(rows.size());
    aff.in_dim = static_cast<int>(rows.front().size());
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != aff.in_dim) {
        throw ParseError("ragged affine matrix", line, col);
      }
      aff.w.insert(aff.w.end(), row.begin(), row.end());
    }
    if (aff.in_dim != feature_dim) {
      throw ParseError("affine matrix has " + std::to_string(aff.in_dim) +
                           " columns, expected " + std::to_string(feature_dim),
                       line, col);
    }
    if (static_cast<int>(bias.size()) != aff.dim) {
      throw ParseError("affine bias length mismatch", line, col);
    }
    aff.b = std::move(bias);
    return TerminalAction::make_affine(std::move(aff));
  }
  std::string ident = sc.identifier();
  int idx = lookup_name(ident, action_names, 'a', -1, "action", line, col);
  return TerminalAction::make_discrete(idx);
}

TerminalAction parse_action_line(LineFeed& feed, int feature_dim,
                                 const std::vector<std::string>& action_names) {
  Scanner sc = feed.take();
  TerminalAction t = parse_action(sc, feature_dim, action_names);
  if (!sc.at_end()) {
    throw ParseError("trailing text after action", sc.line(), sc.col());
  }
  return t;
}

}  // namespace

namespace {

// Parses '(linexpr > 0):' with the leading 'if' already consumed, then the
// indented action line.
std::pair<Predicate, TerminalAction> parse_clause_tail(
    Scanner& sc, LineFeed& feed, int feature_dim, const ProgramNames& names) {
  sc.expect("(");
  Predicate pred = parse_linexpr(sc, feature_dim, names.features);
  sc.expect(">");
  sc.expect("0");
  sc.expect(")");
  sc.expect(":");
  if (!sc.at_end()) {
    throw ParseError("trailing text after clause header", sc.line(), sc.col());
  }
  TerminalAction act = parse_action_line(feed, feature_dim, names.actions);
  return {std::move(pred), std::move(act)};
}

}  // namespace

DiscreteProgram parse_program(std::string_view text, int feature_dim,
                              const ProgramNames& names, int max_depth) {
  LineFeed feed(text);
  if (feed.done()) throw ParseError("empty program", 1, 1);

  DiscreteProgram prog;
  Scanner first = feed.take();
  if (!first.eat("if")) {
    // Depth-1 program: a single action line.
    prog.fallback = parse_action(first, feature_dim, names.actions);
    if (!first.at_end()) {
      throw ParseError("trailing text after action", first.line(), first.col());
    }
  } else {
    prog.clauses.push_back(parse_clause_tail(first, feed, feature_dim, names));
    for (;;) {
      Scanner sc = feed.take();
      sc.expect("else");
      if (sc.eat(":")) {
        if (!sc.at_end()) {
          throw ParseError("trailing text after else", sc.line(), sc.col());
        }
        prog.fallback = parse_action_line(feed, feature_dim, names.actions);
        break;
      }
      sc.expect("if");
      prog.clauses.push_back(parse_clause_tail(sc, feed, feature_dim, names));
      if (prog.depth() > max_depth) {
        throw ParseError(
            "program depth exceeds limit " + std::to_string(max_depth),
            sc.line(), 1);
      }
    }
  }
  if (prog.depth() > max_depth) {
    throw ParseError("program depth exceeds limit " + std::to_string(max_depth),
                     1, 1);
  }
  if (!feed.done()) {
    Scanner extra = feed.take();
    throw ParseError("unexpected trailing line", extra.line(), 1);
  }
  return prog;
}

}  // namespace diprl
