#include "npll/rules.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "npll/error.hpp"

namespace npll {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_variable_name(std::string_view s) {
  if (s.empty() || !std::islower(static_cast<unsigned char>(s.front()))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::islower(u) || std::isdigit(u) || c == '_';
  });
}

class LineParser {
 public:
  LineParser(const KnowledgeGraph& kg, const std::string& source, std::size_t line)
      : kg_(kg), source_(source), line_(line) {}

  Rule parse(std::string_view text) {
    auto tab = text.find('\t');
    if (tab == std::string_view::npos) fail("expected <confidence><TAB><rule>");
    Rule rule;
    rule.confidence = parse_confidence(trim(text.substr(0, tab)));

    auto body_text = trim(text.substr(tab + 1));
    auto arrow = body_text.find("<-");
    if (arrow == std::string_view::npos) fail("missing '<-'");
    rule.head = parse_atom(trim(body_text.substr(0, arrow)));
    auto rest = trim(body_text.substr(arrow + 2));
    if (rest.empty()) fail("empty rule body");
    std::size_t start = 0;
    while (start <= rest.size()) {
      auto amp = rest.find('&', start);
      auto piece = trim(rest.substr(start, amp == std::string_view::npos ? std::string_view::npos : amp - start));
      rule.body.push_back(parse_atom(piece));
      if (amp == std::string_view::npos) break;
      start = amp + 1;
    }

    std::vector<bool> in_body(variables_.size(), false);
    for (const auto& a : rule.body) {
      for (const Term& t : {a.arg1, a.arg2}) {
        if (t.is_variable) in_body[static_cast<std::size_t>(t.value)] = true;
      }
    }
    for (const Term& t : {rule.head.arg1, rule.head.arg2}) {
      if (t.is_variable && !in_body[static_cast<std::size_t>(t.value)]) {
        fail("unsafe rule: head variable '" + variables_[static_cast<std::size_t>(t.value)] +
             "' does not occur in the body");
      }
    }

    rule.variables = variables_;
    for (Atom a : rule.body) {
      a.negated = true;
      rule.clause.push_back(a);
    }
    rule.clause.push_back(rule.head);
    rule.weight = std::clamp(rule.confidence, kMinInitialWeight, kMaxInitialWeight);
    return rule;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_, what); }

  double parse_confidence(std::string_view s) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad confidence '" + std::string(s) + "'");
    if (!(v >= 0.0 && v <= 1.0)) fail("confidence " + std::string(s) + " outside [0,1]");
    return v;
  }

  Term parse_term(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
      auto name = s.substr(1, s.size() - 2);
      auto e = kg_.entities().find(name);
      if (e < 0) fail("unknown entity constant \"" + std::string(name) + "\"");
      return Term::constant(e);
    }
    if (!is_variable_name(s)) fail("bad argument '" + std::string(s) + "'");
    auto it = std::find(variables_.begin(), variables_.end(), s);
    if (it != variables_.end()) return Term::variable(static_cast<std::int32_t>(it - variables_.begin()));
    variables_.emplace_back(s);
    return Term::variable(static_cast<std::int32_t>(variables_.size() - 1));
  }

  Atom parse_atom(std::string_view s) {
    auto open = s.find('(');
    auto close = s.rfind(')');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open || close + 1 != s.size()) {
      fail("malformed atom '" + std::string(s) + "'");
    }
    auto pred_name = trim(s.substr(0, open));
    auto pred = kg_.relations().find(pred_name);
    if (pred < 0) fail("unknown predicate '" + std::string(pred_name) + "'");
    auto args = s.substr(open + 1, close - open - 1);
    auto comma = args.find(',');
    if (comma == std::string_view::npos || args.find(',', comma + 1) != std::string_view::npos) {
      fail("predicate '" + std::string(pred_name) + "' must have exactly two arguments");
    }
    Atom a;
    a.pred = pred;
    a.arg1 = parse_term(args.substr(0, comma));
    a.arg2 = parse_term(args.substr(comma + 1));
    return a;
  }

  const KnowledgeGraph& kg_;
  const std::string& source_;
  std::size_t line_;
  std::vector<std::string> variables_;
};

// Duplicate detection ignores body order and variable names: the key is the
// smallest spelling over body orders, with variables numbered by first use.
std::string canonical_key(const Rule& r) {
  std::vector<std::size_t> order(r.body.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto spell = [&r](std::span<const std::size_t> body_order) {
    std::map<std::int32_t, int> number;
    std::string out;
    auto term = [&](const Term& t) {
      if (!t.is_variable) return "c" + std::to_string(t.value);
      auto it = number.emplace(t.value, static_cast<int>(number.size())).first;
      return "v" + std::to_string(it->second);
    };
    auto atom = [&](const Atom& a) { out += std::to_string(a.pred) + "(" + term(a.arg1) + "," + term(a.arg2) + ")"; };
    atom(r.head);
    for (std::size_t i : body_order) {
      out += "&";
      atom(r.body[i]);
    }
    return out;
  };
  if (order.size() > 6) {
    std::sort(order.begin(), order.end(), [&r](std::size_t a, std::size_t b) { return r.body[a].pred < r.body[b].pred; });
    return spell(order);
  }
  std::string best = spell(order);
  while (std::next_permutation(order.begin(), order.end())) best = std::min(best, spell(order));
  return best;
}

}  // namespace

std::vector<Rule> parse_rules_text(std::string_view text, const KnowledgeGraph& kg, const std::string& source,
                                   RuleParseStats* stats) {
  RuleParseStats local;
  std::vector<Rule> rules;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    ++local.lines;

    Rule rule = LineParser(kg, source, lineno).parse(line);
    if (std::find(rule.body.begin(), rule.body.end(), rule.head) != rule.body.end()) {
      ++local.self_reflective;
      continue;
    }
    if (!seen.insert(canonical_key(rule)).second) {
      ++local.duplicates;
      continue;
    }
    rule.id = static_cast<int>(rules.size());
    rules.push_back(std::move(rule));
  }
  if (stats) *stats = local;
  return rules;
}

std::vector<Rule> parse_rules(const std::filesystem::path& path, const KnowledgeGraph& kg, RuleParseStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError("cannot open rule file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_rules_text(buf.str(), kg, path.string(), stats);
}

std::vector<Rule> filter_by_confidence(std::span<const Rule> rules, double alpha) {
  std::vector<Rule> out;
  for (const auto& r : rules) {
    if (r.confidence > alpha) out.push_back(r);
  }
  return out;
}

std::string format_rule(const Rule& rule, const KnowledgeGraph& kg) {
  auto term = [&](const Term& t) {
    return t.is_variable ? rule.variables[static_cast<std::size_t>(t.value)]
                         : "\"" + kg.entities().name(t.value) + "\"";
  };
  auto atom = [&](const Atom& a) {
    return kg.relations().name(a.pred) + "(" + term(a.arg1) + "," + term(a.arg2) + ")";
  };
  char conf[32];
  auto res = std::to_chars(conf, conf + sizeof conf, rule.confidence);
  std::ostringstream os;
  os << std::string_view(conf, static_cast<std::size_t>(res.ptr - conf)) << '\t' << atom(rule.head) << " <- ";
  for (std::size_t i = 0; i < rule.body.size(); ++i) {
    if (i) os << " & ";
    os << atom(rule.body[i]);
  }
  return os.str();
}

bool implication_holds(std::span<const bool> body, bool head) {
  bool all = std::all_of(body.begin(), body.end(), [](bool b) { return b; });
  return !all || head;
}

bool clause_holds(const Rule& rule, std::span<const bool> body, bool head) {
  if (body.size() + 1 != rule.clause.size()) throw ContractViolation("clause arity mismatch");
  for (std::size_t i = 0; i < rule.clause.size(); ++i) {
    bool value = i < body.size() ? body[i] : head;
    if (rule.clause[i].negated ? !value : value) return true;
  }
  return false;
}

}  // namespace npll
