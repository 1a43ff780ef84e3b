#pragma once

// The 24-point card game: four cards, each used once with + - * / to reach
// a target. Equations are parsed from free text and evaluated in exact
// rational arithmetic.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "svdscope/error.hpp"
#include "svdscope/parallel.hpp"
#include "svdscope/rng.hpp"

namespace svdscope::gp {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// --- cards and rules --------------------------------------------------------

/// Card rank 1..13 (A, 2..10, J, Q, K). Suits are not modeled.
struct Card {
  int rank = 1;
  friend bool operator==(const Card&, const Card&) = default;
};

inline std::optional<Card> parse_card(std::string_view s) {
  if (s == "A") return Card{1};
  if (s == "J") return Card{11};
  if (s == "Q") return Card{12};
  if (s == "K") return Card{13};
  if (s == "10") return Card{10};
  if (s.size() == 1 && s[0] >= '2' && s[0] <= '9') return Card{s[0] - '0'};
  return std::nullopt;
}

inline std::string card_token(Card c) {
  switch (c.rank) {
    case 1: return "A";
    case 11: return "J";
    case 12: return "Q";
    case 13: return "K";
    default: return std::to_string(c.rank);
  }
}

enum class RuleVariant { ID, OOD };

struct Rule {
  RuleVariant variant = RuleVariant::ID;
  int jack = 10, queen = 10, king = 10;

  static Rule id() { return {RuleVariant::ID, 10, 10, 10}; }
  static Rule ood() { return {RuleVariant::OOD, 11, 12, 13}; }
};

inline std::optional<Rule> parse_rule(std::string_view s) {
  if (s == "id" || s == "ID") return Rule::id();
  if (s == "ood" || s == "OOD") return Rule::ood();
  return std::nullopt;
}

inline std::string_view rule_name(const Rule& r) { return r.variant == RuleVariant::ID ? "id" : "ood"; }

/// Ace is 1 and numerals are face value under both rules.
inline int interpret_card(Card c, const Rule& rule) {
  switch (c.rank) {
    case 11: return rule.jack;
    case 12: return rule.queen;
    case 13: return rule.king;
    default: return c.rank;
  }
}

struct GpState {
  std::array<Card, 4> cards{};
  int target = 24;
};

inline std::array<int, 4> card_values(const GpState& s, const Rule& rule) {
  std::array<int, 4> v{};
  for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(i)] = interpret_card(s.cards[static_cast<std::size_t>(i)], rule);
  return v;
}

/// "5,4,K,7" or a list of tokens.
inline std::optional<GpState> parse_cards(const std::vector<std::string>& tokens, int target = 24) {
  if (tokens.size() != 4) return std::nullopt;
  GpState s;
  s.target = target;
  for (std::size_t i = 0; i < 4; ++i) {
    auto c = parse_card(tokens[i]);
    if (!c) return std::nullopt;
    s.cards[i] = *c;
  }
  return s;
}

// --- equations ------------------------------------------------------------

class ParseFailure : public Error {
 public:
  ParseFailure(std::size_t position, const std::string& what)
      : Error("parse error at position " + std::to_string(position) + ": " + what), position_(position) {}
  [[nodiscard]] std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class DivisionByZero : public Error {
 public:
  DivisionByZero() : Error("division by zero") {}
};

struct Equation {
  struct Node {
    char op = 0;  // 0 for a literal
    BigInt literal;
    int lhs = -1, rhs = -1;
  };
  std::vector<Node> nodes;
  int root = -1;
  std::string source_text;

  [[nodiscard]] std::vector<BigInt> leaves() const {
    std::vector<BigInt> out;
    for (const auto& n : nodes) {
      if (n.op == 0) out.push_back(n.literal);
    }
    return out;
  }
};

namespace detail {

class EquationParser {
 public:
  explicit EquationParser(std::string_view text) : text_(text) {}

  Equation parse() {
    eq_.source_text = std::string(text_);
    eq_.root = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return std::move(eq_);
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseFailure(pos_, what); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  int add(Equation::Node n) {
    eq_.nodes.push_back(std::move(n));
    return static_cast<int>(eq_.nodes.size() - 1);
  }

  int expr() {
    int lhs = term();
    for (;;) {
      if (accept('+')) lhs = add({'+', 0, lhs, term()});
      else if (accept('-')) lhs = add({'-', 0, lhs, term()});
      else return lhs;
    }
  }

  int term() {
    int lhs = factor();
    for (;;) {
      if (accept('*')) lhs = add({'*', 0, lhs, factor()});
      else if (accept('/')) lhs = add({'/', 0, lhs, factor()});
      else return lhs;
    }
  }

  int factor() {
    if (++depth_ > 256) fail("nesting too deep");
    skip_ws();
    int node;
    if (accept('(')) {
      node = expr();
      if (!accept(')')) fail("expected ')'");
    } else if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      node = add({0, BigInt(std::string(text_.substr(start, pos_ - start))), -1, -1});
    } else if (pos_ == text_.size()) {
      fail("unexpected end of input");
    } else {
      fail("expected a number or '(' but found '" + std::string(1, text_[pos_]) + "'");
    }
    --depth_;
    return node;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  Equation eq_;
};

inline Rational eval_node(const Equation& eq, int i) {
  const auto& n = eq.nodes[static_cast<std::size_t>(i)];
  if (n.op == 0) return Rational(n.literal);
  const Rational a = eval_node(eq, n.lhs);
  const Rational b = eval_node(eq, n.rhs);
  switch (n.op) {
    case '+': return a + b;
    case '-': return a - b;
    case '*': return a * b;
    default:
      if (b == 0) throw DivisionByZero();
      return a / b;
  }
}

inline int precedence(char op) { return op == '+' || op == '-' ? 1 : op == 0 ? 3 : 2; }

inline std::string render_node(const Equation& eq, int i) {
  const auto& n = eq.nodes[static_cast<std::size_t>(i)];
  if (n.op == 0) return n.literal.str();
  const auto& l = eq.nodes[static_cast<std::size_t>(n.lhs)];
  const auto& r = eq.nodes[static_cast<std::size_t>(n.rhs)];
  std::string ls = render_node(eq, n.lhs);
  std::string rs = render_node(eq, n.rhs);
  // Left operands need parentheses only at lower precedence; right operands
  // also at equal precedence so the rendered text re-parses to this tree.
  if (precedence(l.op) < precedence(n.op)) ls = "(" + ls + ")";
  if (precedence(r.op) <= precedence(n.op)) rs = "(" + rs + ")";
  return ls + n.op + rs;
}

}  // namespace detail

/// expr := term (('+'|'-') term)*; term := factor (('*'|'/') factor)*;
/// factor := integer | '(' expr ')'. Whitespace is ignored; there is no
/// unary minus. Throws ParseFailure with the offending position.
inline Equation parse_equation(std::string_view text) { return detail::EquationParser(text).parse(); }

/// Exact value; throws DivisionByZero.
inline Rational evaluate(const Equation& eq) { return detail::eval_node(eq, eq.root); }

/// Canonical text with the fewest parentheses that preserve the tree.
inline std::string to_string(const Equation& eq) { return detail::render_node(eq, eq.root); }

// --- validation -------------------------------------------------------------

enum class Reason { OK, ParseError, WrongOperandMultiset, DivisionByZero, WrongValue, NoEquationFound };

inline std::string_view reason_name(Reason r) {
  switch (r) {
    case Reason::OK: return "OK";
    case Reason::ParseError: return "ParseError";
    case Reason::WrongOperandMultiset: return "WrongOperandMultiset";
    case Reason::DivisionByZero: return "DivisionByZero";
    case Reason::WrongValue: return "WrongValue";
    case Reason::NoEquationFound: return "NoEquationFound";
  }
  return "?";
}

struct Verdict {
  bool valid = false;
  Reason reason = Reason::NoEquationFound;
  std::optional<Rational> value;
  std::string detail;  // parse position and message, when relevant

  /// Reward for downstream use: 1 for a correct equation, 0 otherwise.
  [[nodiscard]] int reward() const { return valid ? 1 : 0; }
};

inline Verdict validate(const GpState& state, const Rule& rule, std::string_view text) {
  Verdict v;
  Equation eq;
  try {
    eq = parse_equation(text);
  } catch (const ParseFailure& e) {
    v.reason = Reason::ParseError;
    v.detail = e.what();
    return v;
  }
  try {
    v.value = evaluate(eq);
  } catch (const DivisionByZero&) {
  }
  auto leaves = eq.leaves();
  std::vector<BigInt> expected;
  for (int x : card_values(state, rule)) expected.emplace_back(x);
  std::sort(leaves.begin(), leaves.end());
  std::sort(expected.begin(), expected.end());
  if (leaves != expected) {
    v.reason = Reason::WrongOperandMultiset;
    return v;
  }
  if (!v.value) {
    v.reason = Reason::DivisionByZero;
    return v;
  }
  if (*v.value != state.target) {
    v.reason = Reason::WrongValue;
    return v;
  }
  v.valid = true;
  v.reason = Reason::OK;
  return v;
}

// --- solving ----------------------------------------------------------------

namespace detail {

// Exact fractions for the solver's search. With four operands in [1, 13]
// every intermediate numerator and denominator stays far inside int64.
struct SmallRational {
  std::int64_t num = 0, den = 1;

  static SmallRational make(std::int64_t n, std::int64_t d) {
    if (d < 0) n = -n, d = -d;
    const std::int64_t g = std::gcd(n, d);
    return g > 1 ? SmallRational{n / g, d / g} : SmallRational{n, d};
  }
  friend bool operator==(const SmallRational&, const SmallRational&) = default;
};

inline std::optional<SmallRational> apply(char op, SmallRational a, SmallRational b) {
  switch (op) {
    case '+': return SmallRational::make(a.num * b.den + b.num * a.den, a.den * b.den);
    case '-': return SmallRational::make(a.num * b.den - b.num * a.den, a.den * b.den);
    case '*': return SmallRational::make(a.num * b.num, a.den * b.den);
    default:
      if (b.num == 0) return std::nullopt;
      return SmallRational::make(a.num * b.den, a.den * b.num);
  }
}

inline constexpr std::array<char, 4> kOps = {'+', '-', '*', '/'};

// Evaluates shape s over operands x[0..3] with operators o[0..2].
//   0: ((a o b) o c) o d     1: (a o (b o c)) o d    2: (a o b) o (c o d)
//   3: a o ((b o c) o d)     4: a o (b o (c o d))
inline std::optional<SmallRational> eval_shape(int s, const std::array<SmallRational, 4>& x,
                                               const std::array<char, 3>& o) {
  using R = std::optional<SmallRational>;
  auto ap = [](char op, const R& a, const R& b) -> R {
    if (!a || !b) return std::nullopt;
    return apply(op, *a, *b);
  };
  switch (s) {
    case 0: return ap(o[2], ap(o[1], ap(o[0], x[0], x[1]), x[2]), x[3]);
    case 1: return ap(o[2], ap(o[0], x[0], ap(o[1], x[1], x[2])), x[3]);
    case 2: return ap(o[1], ap(o[0], x[0], x[1]), ap(o[2], x[2], x[3]));
    case 3: return ap(o[0], x[0], ap(o[2], ap(o[1], x[1], x[2]), x[3]));
    default: return ap(o[0], x[0], ap(o[1], x[1], ap(o[2], x[2], x[3])));
  }
}

inline Equation build_shape(int s, const std::array<int, 4>& x, const std::array<char, 3>& o) {
  Equation eq;
  auto leaf = [&](int v) {
    eq.nodes.push_back({0, BigInt(v), -1, -1});
    return static_cast<int>(eq.nodes.size() - 1);
  };
  auto bin = [&](char op, int l, int r) {
    eq.nodes.push_back({op, 0, l, r});
    return static_cast<int>(eq.nodes.size() - 1);
  };
  const int a = leaf(x[0]), b = leaf(x[1]), c = leaf(x[2]), d = leaf(x[3]);
  switch (s) {
    case 0: eq.root = bin(o[2], bin(o[1], bin(o[0], a, b), c), d); break;
    case 1: eq.root = bin(o[2], bin(o[0], a, bin(o[1], b, c)), d); break;
    case 2: eq.root = bin(o[1], bin(o[0], a, b), bin(o[2], c, d)); break;
    case 3: eq.root = bin(o[0], a, bin(o[2], bin(o[1], b, c), d)); break;
    default: eq.root = bin(o[0], a, bin(o[1], b, bin(o[2], c, d))); break;
  }
  eq.source_text = to_string(eq);
  return eq;
}

}  // namespace detail

/// Exhaustive search over 4! operand orders x 4^3 operator choices x 5 tree
/// shapes; returns the first witness in that order.
inline std::optional<Equation> solve(const GpState& state, const Rule& rule) {
  const auto values = card_values(state, rule);
  const detail::SmallRational target{state.target, 1};
  std::array<int, 4> perm = {0, 1, 2, 3};
  do {
    std::array<int, 4> xv{};
    std::array<detail::SmallRational, 4> x{};
    for (std::size_t i = 0; i < 4; ++i) {
      xv[i] = values[static_cast<std::size_t>(perm[i])];
      x[i] = {xv[i], 1};
    }
    for (char o0 : detail::kOps) {
      for (char o1 : detail::kOps) {
        for (char o2 : detail::kOps) {
          const std::array<char, 3> o = {o0, o1, o2};
          for (int s = 0; s < 5; ++s) {
            const auto r = detail::eval_shape(s, x, o);
            if (r && *r == target) return detail::build_shape(s, xv, o);
          }
        }
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::nullopt;
}

/// n states with ranks drawn uniformly (with replacement) from the 13 ranks.
inline std::vector<GpState> deal(std::uint64_t seed, std::size_t n, const Rule& rule, bool solvable_only,
                                 int target = 24) {
  if (n < 1) throw DomainError("deal: count must be at least 1");
  Rng rng(seed);
  std::vector<GpState> out;
  out.reserve(n);
  while (out.size() < n) {
    GpState s;
    s.target = target;
    for (auto& c : s.cards) c.rank = static_cast<int>(rng.below(13)) + 1;
    if (solvable_only && !solve(s, rule)) continue;
    out.push_back(s);
  }
  return out;
}

// --- free-text responses ----------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool parses(std::string_view s) {
  try {
    parse_equation(s);
    return true;
  } catch (const ParseFailure&) {
    return false;
  }
}

inline bool equation_char(char c) {
  return std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '*' || c == '/' || c == '(' ||
         c == ')' || c == ' ' || c == '\t';
}

}  // namespace detail

/// With a marker present in the response, the text after its last
/// occurrence (first line, any "= ..." tail and final period removed).
/// Otherwise the last maximal substring that parses as an equation,
/// preferring one that contains an operator.
inline std::optional<std::string> extract_equation(std::string_view response,
                                                   std::optional<std::string_view> marker = "Answer:") {
  if (marker && !marker->empty()) {
    const std::size_t at = response.rfind(*marker);
    if (at != std::string_view::npos) {
      std::string_view rest = response.substr(at + marker->size());
      rest = rest.substr(0, rest.find('\n'));
      rest = rest.substr(0, rest.find('='));
      rest = detail::trim(rest);
      if (!rest.empty() && rest.back() == '.') rest = detail::trim(rest.substr(0, rest.size() - 1));
      if (rest.empty()) return std::nullopt;
      return std::string(rest);
    }
  }
  // Scan runs of equation characters from the end; in each run the longest
  // parseable span with the largest end wins. Spans with an operator are
  // preferred so that "... = 24" does not yield the bare result.
  for (const bool need_operator : {true, false}) {
    std::size_t end = response.size();
    while (end > 0) {
      while (end > 0 && !detail::equation_char(response[end - 1])) --end;
      std::size_t begin = end;
      while (begin > 0 && detail::equation_char(response[begin - 1])) --begin;
      for (std::size_t j = end; j > begin; --j) {
        if (response[j - 1] == ' ' || response[j - 1] == '\t') continue;
        for (std::size_t i = begin; i < j; ++i) {
          if (response[i] == ' ' || response[i] == '\t') continue;
          const std::string_view cand = response.substr(i, j - i);
          if (need_operator && cand.find_first_of("+-*/") == std::string_view::npos) continue;
          if (detail::parses(cand)) return std::string(cand);
        }
      }
      end = begin;
    }
  }
  return std::nullopt;
}

// --- transcript scoring -----------------------------------------------------

struct ScoredRecord {
  nlohmann::ordered_json record;  // input fields plus the verdict fields
  Verdict verdict;
  bool malformed = false;
};

struct ScoreSummary {
  std::size_t n = 0;
  std::size_t ok = 0;
  double success_rate = 0;
  std::vector<ScoredRecord> records;
};

inline std::string rational_text(const Rational& r) { return r.str(); }

inline ScoredRecord score_line(std::string_view line, const Rule& default_rule,
                               std::optional<std::string_view> marker) {
  ScoredRecord out;
  auto flag = [&](const std::string& why) {
    out.malformed = true;
    out.verdict = Verdict{};
    out.verdict.reason = Reason::NoEquationFound;
    out.verdict.detail = why;
  };
  std::optional<std::string> equation;
  try {
    out.record = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception&) {
    out.record = nlohmann::ordered_json{{"raw", std::string(line)}};
    flag("record is not valid JSON");
  }
  if (!out.malformed) {
    const auto& r = out.record;
    std::optional<GpState> state;
    std::optional<Rule> rule = default_rule;
    if (!r.is_object()) {
      flag("record is not an object");
      out.record = nlohmann::ordered_json{{"raw", std::string(line)}};
    } else if (!r.contains("cards") || !r["cards"].is_array() || !r.contains("response") ||
               !r["response"].is_string()) {
      flag("record needs 'cards' and 'response'");
    } else {
      std::vector<std::string> tokens;
      for (const auto& c : r["cards"]) {
        if (c.is_string()) tokens.push_back(c.get<std::string>());
        else if (c.is_number_integer()) tokens.push_back(std::to_string(c.get<int>()));
        else tokens.emplace_back("?");
      }
      int target = 24;
      if (r.contains("target") && r["target"].is_number_integer()) target = r["target"].get<int>();
      state = parse_cards(tokens, target);
      if (r.contains("rule")) rule = r["rule"].is_string() ? parse_rule(r["rule"].get<std::string>()) : std::nullopt;
      if (!state) flag("cards must be four tokens from A,2-10,J,Q,K");
      else if (!rule) flag("rule must be 'id' or 'ood'");
    }
    if (!out.malformed) {
      equation = extract_equation(r["response"].get<std::string>(), marker);
      if (equation) {
        out.verdict = validate(*state, *rule, *equation);
      } else {
        out.verdict = Verdict{};
        out.verdict.reason = Reason::NoEquationFound;
      }
    }
  }
  auto& rec = out.record;
  rec["valid"] = out.verdict.valid;
  rec["reason"] = reason_name(out.verdict.reason);
  rec["equation"] = equation ? nlohmann::ordered_json(*equation) : nlohmann::ordered_json(nullptr);
  rec["value"] = out.verdict.value ? nlohmann::ordered_json(rational_text(*out.verdict.value))
                                   : nlohmann::ordered_json(nullptr);
  if (out.malformed) {
    rec["malformed"] = true;
    rec["error"] = out.verdict.detail;
  }
  return out;
}

/// Scores line-delimited JSON records {cards, response, rule?}. Blank lines
/// are ignored; a malformed record counts as NoEquationFound and is flagged.
inline ScoreSummary score_transcripts(std::istream& in, const Rule& default_rule,
                                      std::optional<std::string_view> marker = "Answer:", unsigned jobs = 1) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(std::move(line));
  }
  if (lines.empty()) throw Error("no records");
  ScoreSummary s;
  s.records.resize(lines.size());
  parallel_for(lines.size(), jobs,
               [&](std::size_t i) { s.records[i] = score_line(lines[i], default_rule, marker); });
  s.n = lines.size();
  for (const auto& r : s.records) s.ok += r.verdict.valid ? 1 : 0;
  s.success_rate = static_cast<double>(s.ok) / static_cast<double>(s.n);
  return s;
}

inline ScoreSummary score_transcripts(const std::string& path, const Rule& default_rule,
                                      std::optional<std::string_view> marker = "Answer:", unsigned jobs = 1) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return score_transcripts(in, default_rule, marker, jobs);
}

inline void write_scores(std::ostream& os, const ScoreSummary& s) {
  for (const auto& r : s.records) os << r.record.dump() << '\n';
  os << nlohmann::ordered_json{{"n", s.n}, {"success_rate", s.success_rate}}.dump() << '\n';
}

}  // namespace svdscope::gp
