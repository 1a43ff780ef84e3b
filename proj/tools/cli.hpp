#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "svdscope/svdscope.hpp"

namespace svdscope::cli {

using nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

inline std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> flags;  // resolved values; --jobs is left out
  std::map<std::string, std::string> inputs;  // path -> FNV-1a 64 digest
  std::optional<std::uint64_t> seed;
  std::vector<std::string> notes;

  void digest(const std::string& path) { inputs[path] = hex64(fnv1a64(read_file(path))); }

  [[nodiscard]] ordered_json to_json() const {
    ordered_json j;
    j["subcommand"] = subcommand;
    j["version"] = kVersion;
    j["flags"] = flags;
    j["inputs"] = inputs;
    j["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
    j["notes"] = notes;
    return j;
  }
};

// Writes text to --out when given, otherwise to the output stream.
inline void emit(const std::string& out_path, std::ostream& out, const std::string& text) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  write_file(out_path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline void emit_manifest(const RunManifest& m, const std::string& out_path, std::ostream& err) {
  const std::string text = m.to_json().dump(2) + "\n";
  if (out_path.empty()) {
    err << text;
  } else {
    emit(out_path + ".manifest.json", err, text);
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw CLI::ValidationError(what, "'" + s + "' is not a number");
  }
  return v;
}

inline gp::Rule rule_flag(const std::string& s) {
  auto r = gp::parse_rule(s);
  if (!r) throw CLI::ValidationError("--rule", "expected id or ood");
  return *r;
}

inline gp::GpState cards_flag(const std::string& s, int target) {
  auto st = gp::parse_cards(split(s, ','), target);
  if (!st) throw CLI::ValidationError("--cards", "expected four cards from A,2-10,J,Q,K");
  return *st;
}

inline std::string cards_text(const gp::GpState& s) {
  std::string t;
  for (std::size_t i = 0; i < 4; ++i) t += (i ? "," : "") + gp::card_token(s.cards[i]);
  return t;
}

inline const char* kGpNotes = "ace counts 1 under both rules; J/Q/K are 10 (id) or 11/12/13 (ood)";

// --- subcommand options -------------------------------------------------------

struct Options {
  std::string base, target, pattern = "*", out, plan, mode, rank_head, rank_tail, layers;
  bool include_untied = false;
  std::string cards, rule = "id";
  int target_number = 24;
  std::uint64_t seed = 0;
  unsigned jobs = default_jobs();
  std::string transcripts, marker = "Answer:";
  bool solvable_only = false;
  std::string eta_grid = "1e-1,1e-2,1e-3,1e-4", dims = "8,16,8";
  int trials = 32;
  double bucket_fraction = 0.2;
  std::size_t count = 1;
  std::string equation, csv;
};

// --- handlers -------------------------------------------------------------------

inline int run_spectra(const Options& o, bool angles_only, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = angles_only ? "angles" : "spectra";
  m.flags = {{"base", o.base},
             {"target", o.target},
             {"pattern", o.pattern},
             {"out", o.out},
             {"bucket-fraction", format_double(o.bucket_fraction)}};
  m.digest(o.base);
  m.digest(o.target);
  m.notes = {"rows are aligned by rank index", "angles in degrees"};
  if (!(o.bucket_fraction >= 0.0 && o.bucket_fraction <= 0.5)) {
    throw DomainError("--bucket-fraction must lie in [0, 0.5]");
  }
  const Checkpoint base = load_checkpoint(o.base);
  const Checkpoint target = load_checkpoint(o.target);
  const auto sel = select_tensors(base, o.pattern);
  for (const auto& name : sel.skipped) err << "skipping non-matrix tensor '" << name << "'\n";
  const auto rows = angle_report(base, target, o.pattern, o.jobs);
  if (rows.empty()) throw DomainError("pattern '" + o.pattern + "' matches no matrices");
  std::ostringstream csv;
  write_report_rows(csv, rows, angles_only);
  emit(o.out, out, csv.str());
  if (!o.out.empty()) {
    auto dtypes = [](const Checkpoint& c) {
      std::set<std::string> seen;
      for (const auto& r : c.records()) seen.insert(std::string(dtype_name(r.source_dtype)));
      std::string joined;
      for (const auto& d : seen) joined += (joined.empty() ? "" : ",") + d;
      return joined;
    };
    std::map<std::string, std::string> meta = {{"base", o.base},
                                               {"target", o.target},
                                               {"pattern", o.pattern},
                                               {"alignment", "rank index"},
                                               {"base_dtypes", dtypes(base)},
                                               {"target_dtypes", dtypes(target)},
                                               {"working_precision", "F64"}};
    emit(o.out + ".summary.json", err, summary_to_json(summarize(rows, o.bucket_fraction), meta).dump(2) + "\n");
  }
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_surgery(const Options& o, std::ostream& err) {
  RunManifest m;
  m.subcommand = "surgery";
  m.digest(o.base);
  m.digest(o.target);
  SurgeryPlan plan;
  if (!o.plan.empty()) {
    m.digest(o.plan);
    const auto bytes = read_file(o.plan);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(o.plan + ": " + e.what());
    }
    plan = plan_from_json(j);
  }
  if (!o.mode.empty()) {
    if (o.mode == "directions") {
      plan.direction_source = Role::Base;
      plan.value_source = Role::Target;
    } else if (o.mode == "values") {
      plan.direction_source = Role::Target;
      plan.value_source = Role::Base;
    } else {
      throw CLI::ValidationError("--mode", "expected directions or values");
    }
  }
  if (!o.rank_head.empty()) {
    plan.rank = parse_rank_flags(o.rank_head, o.rank_tail.empty() ? std::nullopt
                                                                   : std::optional<std::string_view>(o.rank_tail));
  } else if (!o.rank_tail.empty()) {
    plan.rank = parse_rank_flags(o.rank_tail.starts_with("f:") ? "f:0" : "0", std::string_view(o.rank_tail));
  }
  if (!o.layers.empty()) plan.layers = parse_layer_ranges(o.layers);
  if (o.pattern != "*") plan.pattern = o.pattern;
  if (o.include_untied) plan.include_untied = true;

  m.flags = {{"base", o.base}, {"target", o.target}, {"out", o.out}, {"plan", o.plan}};
  m.flags["resolved-plan"] = plan_to_json(plan).dump();
  m.notes = {"rank indices follow descending singular values of the target"};

  const Checkpoint merged = apply_plan(load_checkpoint(o.base), load_checkpoint(o.target), plan, o.jobs);
  save_checkpoint(merged, o.out);
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_gauge(const Options& o, std::ostream& out, std::ostream& err) {
  GaugeConfig c;
  const auto d = split(o.dims, ',');
  if (d.size() != 3) throw CLI::ValidationError("--dims", "expected IN,MID,OUT");
  c.d_in = static_cast<Eigen::Index>(parse_number(d[0], "--dims"));
  c.d_mid = static_cast<Eigen::Index>(parse_number(d[1], "--dims"));
  c.d_out = static_cast<Eigen::Index>(parse_number(d[2], "--dims"));
  c.eta_grid.clear();
  for (const auto& e : split(o.eta_grid, ',')) c.eta_grid.push_back(parse_number(e, "--eta-grid"));
  c.trials = o.trials;
  c.seed = o.seed;

  RunManifest m;
  m.subcommand = "gauge";
  m.flags = {{"dims", o.dims}, {"eta-grid", o.eta_grid}, {"trials", std::to_string(o.trials)}, {"out", o.out}};
  m.seed = o.seed;
  m.notes = {"row-vector chain y = x W1 W2 with W1' = W1(I + eta A), W2' = (I - eta A) W2"};

  ordered_json j = scaling_to_json(c, scaling_experiment(c));
  const auto toy = procrustes_toy(10.0, o.seed, 5);
  j["procrustes_toy"] = {{"theta_deg", 10.0},
                         {"r_error", toy.r_error},
                         {"aligned_delta", toy.aligned_delta},
                         {"max_output_diff", toy.max_output_diff}};
  emit(o.out, out, j.dump(2) + "\n");
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_gp_solve(const Options& o, std::ostream& out, std::ostream& err) {
  const auto rule = rule_flag(o.rule);
  const auto state = cards_flag(o.cards, o.target_number);
  RunManifest m;
  m.subcommand = "gp solve";
  m.flags = {{"cards", cards_text(state)}, {"rule", o.rule}, {"target-number", std::to_string(o.target_number)}};
  m.notes = {kGpNotes};
  const auto eq = gp::solve(state, rule);
  emit(o.out, out, (eq ? gp::to_string(*eq) : std::string("no solution")) + "\n");
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_gp_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto rule = rule_flag(o.rule);
  const auto state = cards_flag(o.cards, o.target_number);
  RunManifest m;
  m.subcommand = "gp validate";
  m.flags = {{"cards", cards_text(state)},
             {"rule", o.rule},
             {"target-number", std::to_string(o.target_number)},
             {"equation", o.equation}};
  m.notes = {kGpNotes};
  const auto v = gp::validate(state, rule, o.equation);
  ordered_json j = {{"valid", v.valid},
                    {"reason", gp::reason_name(v.reason)},
                    {"value", v.value ? ordered_json(gp::rational_text(*v.value)) : ordered_json(nullptr)}};
  if (!v.detail.empty()) j["detail"] = v.detail;
  emit(o.out, out, j.dump() + "\n");
  emit_manifest(m, o.out, err);
  return v.valid ? kExitOk : kExitDomain;
}

inline int run_gp_deal(const Options& o, std::ostream& out, std::ostream& err) {
  const auto rule = rule_flag(o.rule);
  RunManifest m;
  m.subcommand = "gp deal";
  m.flags = {{"count", std::to_string(o.count)},
             {"rule", o.rule},
             {"target-number", std::to_string(o.target_number)},
             {"solvable-only", o.solvable_only ? "true" : "false"}};
  m.seed = o.seed;
  m.notes = {kGpNotes, "ranks drawn uniformly with replacement"};
  std::string text;
  for (const auto& s : gp::deal(o.seed, o.count, rule, o.solvable_only, o.target_number)) {
    ordered_json cards = ordered_json::array();
    for (const auto& c : s.cards) cards.push_back(gp::card_token(c));
    text += ordered_json{{"cards", cards}, {"rule", o.rule}, {"target", s.target}}.dump() + "\n";
  }
  emit(o.out, out, text);
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_gp_score(const Options& o, std::ostream& out, std::ostream& err) {
  const auto rule = rule_flag(o.rule);
  RunManifest m;
  m.subcommand = "gp score";
  m.flags = {{"transcripts", o.transcripts}, {"rule", o.rule}, {"marker", o.marker}, {"out", o.out}};
  m.digest(o.transcripts);
  m.notes = {kGpNotes};
  const auto s = gp::score_transcripts(o.transcripts, rule,
                                       o.marker.empty() ? std::nullopt : std::optional<std::string_view>(o.marker),
                                       o.jobs);
  std::ostringstream os;
  gp::write_scores(os, s);
  emit(o.out, out, os.str());
  emit_manifest(m, o.out, err);
  return kExitOk;
}

inline int run_report_summary(const Options& o, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "report-summary";
  m.flags = {{"csv", o.csv}, {"bucket-fraction", format_double(o.bucket_fraction)}, {"out", o.out}};
  m.digest(o.csv);
  std::ifstream in(o.csv);
  if (!in) throw Error("cannot open '" + o.csv + "'");
  const auto rows = read_report_csv(in);
  emit(o.out, out, summary_to_json(summarize(rows, o.bucket_fraction), {{"source", o.csv}}).dump(2) + "\n");
  emit_manifest(m, o.out, err);
  return kExitOk;
}

// --- entry point ------------------------------------------------------------------

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 domain error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Spectral diagnostics, checkpoint surgery and GeneralPoints tooling", "svdscope"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  auto add_jobs = [&](CLI::App* s) {
    s->add_option("--jobs", o.jobs, "Worker threads (outputs do not depend on it)")->check(CLI::PositiveNumber);
  };
  auto add_pair = [&](CLI::App* s) {
    s->add_option("--base", o.base, "Base checkpoint")->required();
    s->add_option("--target", o.target, "Target checkpoint")->required();
  };

  auto* spectra = app.add_subcommand("spectra", "Per-rank singular values and principal angles as CSV");
  auto* angles = app.add_subcommand("angles", "Like spectra with angle columns only");
  for (auto* s : {spectra, angles}) {
    add_pair(s);
    s->add_option("--pattern", o.pattern, "Tensor-name glob");
    s->add_option("--out", o.out, "CSV path (stdout when omitted)");
    s->add_option("--bucket-fraction", o.bucket_fraction, "Head/tail fraction for the summary");
    add_jobs(s);
  }

  auto* surgery = app.add_subcommand("surgery", "Rebuild matrices from mixed singular factors");
  add_pair(surgery);
  surgery->add_option("--out", o.out, "Merged checkpoint path")->required();
  surgery->add_option("--plan", o.plan, "Plan JSON; the flags below override its fields");
  surgery->add_option("--mode", o.mode, "directions (base vectors, target values) or values");
  surgery->add_option("--rank-head", o.rank_head, "K, f:FRAC, full or none");
  surgery->add_option("--rank-tail", o.rank_tail, "K or f:FRAC");
  surgery->add_option("--layers", o.layers, "A..B[,C..D], half-open");
  surgery->add_option("--pattern", o.pattern, "Tensor-name glob (default: attention and MLP projections)");
  surgery->add_flag("--include-untied", o.include_untied, "Also merge embedding and output-head matrices");
  add_jobs(surgery);

  auto* gauge = app.add_subcommand("gauge", "Orthogonal-gauge scaling experiment");
  gauge->add_option("--eta-grid", o.eta_grid, "Decreasing step sizes");
  gauge->add_option("--trials", o.trials, "Trials per step size")->check(CLI::PositiveNumber);
  gauge->add_option("--dims", o.dims, "IN,MID,OUT");
  gauge->add_option("--seed", o.seed, "RNG seed");
  gauge->add_option("--out", o.out, "JSON path (stdout when omitted)");
  add_jobs(gauge);

  auto* gpc = app.add_subcommand("gp", "GeneralPoints card game");
  gpc->require_subcommand(1);
  auto add_rule = [&](CLI::App* s) { s->add_option("--rule", o.rule, "id or ood"); };
  auto* solve = gpc->add_subcommand("solve", "Find a witness equation");
  auto* validate = gpc->add_subcommand("validate", "Check an equation");
  for (auto* s : {solve, validate}) {
    s->add_option("--cards", o.cards, "C1,C2,C3,C4")->required();
    add_rule(s);
    s->add_option("--target-number", o.target_number, "Target value");
    s->add_option("--out", o.out, "Output path (stdout when omitted)");
  }
  validate->add_option("equation", o.equation, "Equation text")->required();
  auto* deal = gpc->add_subcommand("deal", "Deal random hands as JSON lines");
  deal->add_option("count", o.count, "Number of hands")->check(CLI::PositiveNumber);
  deal->add_option("--seed", o.seed, "RNG seed");
  deal->add_flag("--solvable-only", o.solvable_only, "Redraw unsolvable hands");
  deal->add_option("--target-number", o.target_number, "Target value");
  deal->add_option("--out", o.out, "Output path (stdout when omitted)");
  add_rule(deal);
  auto* score = gpc->add_subcommand("score", "Score model transcripts");
  score->add_option("--transcripts", o.transcripts, "JSON-lines transcripts")->required();
  score->add_option("--marker", o.marker, "Answer marker; empty to scan the whole response");
  score->add_option("--out", o.out, "Output path (stdout when omitted)");
  add_rule(score);
  for (auto* s : {solve, validate, deal, score}) add_jobs(s);

  auto* summary = app.add_subcommand("report-summary", "Summarize a spectra CSV");
  summary->add_option("csv", o.csv, "Report CSV")->required();
  summary->add_option("--bucket-fraction", o.bucket_fraction, "Head/tail fraction");
  summary->add_option("--out", o.out, "JSON path (stdout when omitted)");
  add_jobs(summary);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (spectra->parsed()) return run_spectra(o, false, out, err);
    if (angles->parsed()) return run_spectra(o, true, out, err);
    if (surgery->parsed()) return run_surgery(o, err);
    if (gauge->parsed()) return run_gauge(o, out, err);
    if (solve->parsed()) return run_gp_solve(o, out, err);
    if (validate->parsed()) return run_gp_validate(o, out, err);
    if (deal->parsed()) return run_gp_deal(o, out, err);
    if (score->parsed()) return run_gp_score(o, out, err);
    if (summary->parsed()) return run_report_summary(o, out, err);
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace svdscope::cli
