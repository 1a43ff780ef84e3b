#pragma once

// Checkpoint surgery: rebuild matrices from the singular directions of one
// checkpoint and the singular values of another, restricted to a set of rank
// indices (head and/or tail of the spectrum) and a set of layers.

#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "svdscope/error.hpp"
#include "svdscope/glob.hpp"
#include "svdscope/linalg.hpp"
#include "svdscope/parallel.hpp"
#include "svdscope/spectral.hpp"
#include "svdscope/tensor_store.hpp"
#include "svdscope/version.hpp"

namespace svdscope {

enum class RankKind { Count, Fraction, Full, None };

struct RankScope {
  RankKind kind = RankKind::Full;
  double head = 0;
  double tail = 0;

  friend bool operator==(const RankScope&, const RankScope&) = default;
};

struct ResolvedRank {
  std::size_t head = 0, tail = 0;
  friend bool operator==(const ResolvedRank&, const ResolvedRank&) = default;
};

inline ResolvedRank resolve_rank_scope(const RankScope& scope, std::size_t r) {
  auto count = [&](double x, const char* which) -> std::size_t {
    if (!(x >= 0.0) || x != std::floor(x)) {
      throw DomainError(std::string("rank ") + which + " count must be a non-negative integer");
    }
    return static_cast<std::size_t>(x);
  };
  auto fraction = [&](double f, const char* which) -> std::size_t {
    if (!(f >= 0.0 && f <= 1.0)) throw DomainError(std::string("rank ") + which + " fraction must lie in [0, 1]");
    // The epsilon keeps products such as 0.1 * 30 from rounding up a step.
    return static_cast<std::size_t>(std::ceil(f * static_cast<double>(r) - 1e-9));
  };
  ResolvedRank out;
  switch (scope.kind) {
    case RankKind::Full: return {r, 0};
    case RankKind::None: return {0, 0};
    case RankKind::Count:
      out = {count(scope.head, "head"), count(scope.tail, "tail")};
      break;
    case RankKind::Fraction:
      out = {fraction(scope.head, "head"), fraction(scope.tail, "tail")};
      break;
  }
  if (out.head + out.tail > r) {
    throw DomainError("rank scope selects " + std::to_string(out.head) + " head + " + std::to_string(out.tail) +
                      " tail directions but rank is " + std::to_string(r));
  }
  return out;
}

/// Index set S = [0, head) U [r - tail, r), widened so that no block of
/// tied singular values (|s_i - s_{i+1}| <= 1e-9 s_1) in any of `spectra`
/// straddles its boundary.
inline std::vector<bool> scope_mask(std::size_t r, ResolvedRank k, const std::vector<const Vector*>& spectra) {
  std::vector<bool> in(r, false);
  for (std::size_t i = 0; i < k.head; ++i) in[i] = true;
  for (std::size_t i = r - k.tail; i < r; ++i) in[i] = true;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Vector* s : spectra) {
      const double tol = s->size() ? 1e-9 * (*s)(0) : 0.0;
      std::size_t start = 0;
      for (std::size_t i = 1; i <= r; ++i) {
        const bool tied = i < r && std::fabs((*s)(static_cast<Eigen::Index>(i - 1)) -
                                             (*s)(static_cast<Eigen::Index>(i))) <= tol;
        if (tied) continue;
        // block [start, i)
        bool any = false, all = true;
        for (std::size_t j = start; j < i; ++j) {
          any = any || in[j];
          all = all && in[j];
        }
        if (any && !all) {
          for (std::size_t j = start; j < i; ++j) in[j] = true;
          changed = true;
        }
        start = i;
      }
    }
  }
  return in;
}

/// sum_{i in S} u_i^dir s_i^val (v_i^dir)^T + sum_{i not in S} u_i^rest s_i^rest (v_i^rest)^T
inline Matrix merge_components(const SvdFactors& dir, const SvdFactors& val, const SvdFactors& rest,
                               const std::vector<bool>& in_scope) {
  const Eigen::Index r = val.rank();
  Matrix left(dir.u.rows(), r);
  Matrix right(dir.v.rows(), r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const bool s = in_scope[static_cast<std::size_t>(i)];
    const SvdFactors& src = s ? dir : rest;
    const double sigma = s ? val.sigma(i) : rest.sigma(i);
    left.col(i) = src.u.col(i) * sigma;
    right.col(i) = src.v.col(i);
  }
  return left * right.transpose();
}

struct MergeOutcome {
  TensorRecord record;
  ResolvedRank requested;
  std::size_t scope_size = 0;  // after tie-block widening
};

inline MergeOutcome merge_factors(const std::string& name, DType dtype, const SvdFactors& dir,
                                  const SvdFactors& val, const SvdFactors& rest, ResolvedRank k) {
  const auto r = static_cast<std::size_t>(val.rank());
  if (k.head + k.tail > r) {
    throw DomainError("'" + name + "': scope " + std::to_string(k.head) + "+" + std::to_string(k.tail) +
                      " exceeds rank " + std::to_string(r));
  }
  const auto mask = scope_mask(r, k, {&dir.sigma, &val.sigma, &rest.sigma});
  MergeOutcome out;
  out.requested = k;
  out.scope_size = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  out.record = make_record(name, merge_components(dir, val, rest, mask), dtype);
  return out;
}

/// Directions from dir_w on the head/tail index set, singular values from
/// val_w everywhere; outside the set val_w's own factors are kept.
inline TensorRecord merge_spectral(const TensorRecord& dir_w, const TensorRecord& val_w, std::size_t k_head,
                                   std::size_t k_tail) {
  require_same_shape(dir_w, val_w);
  const SvdFactors dir = svd_of(dir_w);
  const SvdFactors val = svd_of(val_w);
  return merge_factors(val_w.name, val_w.source_dtype, dir, val, val, {k_head, k_tail}).record;
}

/// U and V of the first argument with the singular values of the second.
inline TensorRecord restore_values(const TensorRecord& dir_val_w, const TensorRecord& sigma_source) {
  require_same_shape(dir_val_w, sigma_source);
  const SvdFactors dir = svd_of(dir_val_w);
  const Vector sigma = svd_of(sigma_source).sigma;
  return make_record(dir_val_w.name, dir.u * sigma.asDiagonal() * dir.v.transpose(), dir_val_w.source_dtype);
}

// --- plans ----------------------------------------------------------------

enum class Role { Base, Target };

inline std::string_view role_name(Role r) { return r == Role::Base ? "base" : "target"; }

inline Role parse_role(std::string_view s) {
  if (s == "base") return Role::Base;
  if (s == "target") return Role::Target;
  throw DomainError("unknown checkpoint role '" + std::string(s) + "' (expected base or target)");
}

/// Half-open layer interval [begin, end).
struct LayerRange {
  int begin = 0, end = 0;
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

inline const std::vector<std::string>& default_surgery_patterns() {
  static const std::vector<std::string> p = {"*.q_proj.*",  "*.k_proj.*",    "*.v_proj.*",   "*.o_proj.*",
                                             "*.up_proj.*", "*.gate_proj.*", "*.down_proj.*"};
  return p;
}

/// Embedding and output-head matrices, which are untied from each other.
inline bool is_untied(std::string_view name) {
  static const Glob embed("*embed_tokens*");
  static const Glob head("*lm_head*");
  return embed.matches(name) || head.matches(name);
}

struct SurgeryPlan {
  Role direction_source = Role::Base;
  Role value_source = Role::Target;
  RankScope rank;
  std::vector<LayerRange> layers;  // empty: every layer
  std::string pattern;             // empty: default projection set
  bool include_untied = false;

  friend bool operator==(const SurgeryPlan&, const SurgeryPlan&) = default;
};

/// Parses "A..B[,C..D]" (half-open ranges) or single indices "C"; "all"
/// yields an empty list.
inline std::vector<LayerRange> parse_layer_ranges(std::string_view text) {
  std::vector<LayerRange> out;
  if (text == "all") return out;
  if (text.empty()) throw DomainError("empty layer list");
  auto parse_int = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || v < 0) {
      throw DomainError("bad layer index '" + std::string(s) + "' in '" + std::string(text) + "'");
    }
    return v;
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    const std::string_view item = text.substr(pos, comma - pos);
    const std::size_t dots = item.find("..");
    LayerRange range;
    if (dots == std::string_view::npos) {
      range.begin = parse_int(item);
      range.end = range.begin + 1;
    } else {
      range.begin = parse_int(item.substr(0, dots));
      range.end = parse_int(item.substr(dots + 2));
    }
    if (range.end <= range.begin) throw DomainError("empty layer range '" + std::string(item) + "'");
    out.push_back(range);
    pos = comma + 1;
  }
  return out;
}

inline std::string format_layer_ranges(const std::vector<LayerRange>& layers) {
  if (layers.empty()) return "all";
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(layers[i].begin) + ".." + std::to_string(layers[i].end);
  }
  return s;
}

/// CLI rank flags: head is K, f:FRAC, full or none; tail is K or f:FRAC and
/// must use the same kind as head.
inline RankScope parse_rank_flags(std::string_view head, std::optional<std::string_view> tail) {
  auto parse_one = [](std::string_view s, RankKind& kind, double& value) {
    if (s == "full") {
      kind = RankKind::Full;
      return;
    }
    if (s == "none") {
      kind = RankKind::None;
      return;
    }
    std::string_view num = s;
    kind = RankKind::Count;
    if (s.starts_with("f:")) {
      kind = RankKind::Fraction;
      num = s.substr(2);
    }
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
    if (num.empty() || ec != std::errc{} || ptr != num.data() + num.size()) {
      throw DomainError("bad rank value '" + std::string(s) + "'");
    }
  };
  RankScope scope;
  parse_one(head, scope.kind, scope.head);
  if (tail) {
    RankKind tk{};
    parse_one(*tail, tk, scope.tail);
    if (scope.kind == RankKind::Full || scope.kind == RankKind::None) {
      throw DomainError("--rank-tail cannot be combined with a full or none head scope");
    }
    if (tk != scope.kind) throw DomainError("--rank-head and --rank-tail must both be counts or both fractions");
  }
  return scope;
}

inline std::string_view rank_kind_name(RankKind k) {
  switch (k) {
    case RankKind::Count: return "count";
    case RankKind::Fraction: return "fraction";
    case RankKind::Full: return "full";
    case RankKind::None: return "none";
  }
  return "?";
}

inline nlohmann::ordered_json plan_to_json(const SurgeryPlan& p) {
  return {{"direction_source", role_name(p.direction_source)},
          {"value_source", role_name(p.value_source)},
          {"rank", {{"kind", rank_kind_name(p.rank.kind)}, {"head", p.rank.head}, {"tail", p.rank.tail}}},
          {"layers", format_layer_ranges(p.layers)},
          {"pattern", p.pattern.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(p.pattern)},
          {"include_untied", p.include_untied}};
}

inline SurgeryPlan plan_from_json(const nlohmann::json& j) {
  try {
    SurgeryPlan p;
    if (!j.is_object()) throw DomainError("surgery plan must be an object");
    if (j.contains("direction_source")) p.direction_source = parse_role(j.at("direction_source").get<std::string>());
    if (j.contains("value_source")) p.value_source = parse_role(j.at("value_source").get<std::string>());
    if (j.contains("rank")) {
      const auto& r = j.at("rank");
      const auto kind = r.at("kind").get<std::string>();
      if (kind == "count") p.rank.kind = RankKind::Count;
      else if (kind == "fraction") p.rank.kind = RankKind::Fraction;
      else if (kind == "full") p.rank.kind = RankKind::Full;
      else if (kind == "none") p.rank.kind = RankKind::None;
      else throw DomainError("unknown rank kind '" + kind + "'");
      p.rank.head = r.value("head", 0.0);
      p.rank.tail = r.value("tail", 0.0);
    }
    if (j.contains("layers") && !j.at("layers").is_null()) p.layers = parse_layer_ranges(j.at("layers").get<std::string>());
    if (j.contains("pattern") && !j.at("pattern").is_null()) p.pattern = j.at("pattern").get<std::string>();
    if (j.contains("include_untied")) p.include_untied = j.at("include_untied").get<bool>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed surgery plan: ") + e.what());
  }
}

// --- applying plans ---------------------------------------------------------

inline bool plan_selects(const SurgeryPlan& plan, const std::vector<Glob>& globs, const TensorRecord& r) {
  if (!r.is_matrix()) return false;
  bool hit = false;
  for (const auto& g : globs) hit = hit || g.matches(r.name);
  // Untied matrices join the default set on request; an explicit pattern
  // must still match them.
  if (is_untied(r.name)) return plan.include_untied && (hit || plan.pattern.empty());
  if (!hit) return false;
  if (plan.layers.empty()) return true;
  const auto layer = layer_index(r.name);
  if (!layer) return false;
  for (const auto& range : plan.layers) {
    if (*layer >= range.begin && *layer < range.end) return true;
  }
  return false;
}

/// Tensors in scope are rebuilt from (direction_source directions,
/// value_source singular values) on the plan's rank set, with the target's
/// own factors elsewhere; everything else is copied from the target.
inline Checkpoint apply_plan(const Checkpoint& base, const Checkpoint& target, const SurgeryPlan& plan,
                             unsigned jobs = 1) {
  std::vector<Glob> globs;
  if (plan.pattern.empty()) {
    for (const auto& p : default_surgery_patterns()) globs.emplace_back(p);
  } else {
    globs.emplace_back(plan.pattern);
  }

  int depth = 0;
  for (const auto& r : target.records()) {
    if (auto l = layer_index(r.name)) depth = std::max(depth, *l + 1);
  }
  for (const auto& range : plan.layers) {
    if (range.end > depth) {
      throw DomainError("layer range " + std::to_string(range.begin) + ".." + std::to_string(range.end) +
                        " exceeds model depth " + std::to_string(depth));
    }
  }

  std::vector<std::string> problems;
  std::vector<std::size_t> scoped;  // indices into target.records()
  for (std::size_t i = 0; i < target.records().size(); ++i) {
    const auto& t = target.records()[i];
    if (!plan_selects(plan, globs, t)) continue;
    const TensorRecord* b = base.find(t.name);
    if (!b) {
      problems.push_back("'" + t.name + "' missing from base");
    } else if (b->shape != t.shape) {
      problems.push_back("shape mismatch for '" + t.name + "': base " + shape_string(b->shape) + " vs target " +
                         shape_string(t.shape));
    } else {
      scoped.push_back(i);
    }
  }
  for (const auto& b : base.records()) {
    if (plan_selects(plan, globs, b) && !target.find(b.name)) problems.push_back("'" + b.name + "' missing from target");
  }
  if (!problems.empty()) {
    std::string msg = "surgery failed for " + std::to_string(problems.size()) + " tensor(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ShapeError(msg);
  }
  if (scoped.empty()) throw DomainError("surgery plan selects no tensors");

  std::vector<std::optional<MergeOutcome>> merged(scoped.size());
  if (plan.rank.kind != RankKind::None) {
    std::vector<std::string> errors(scoped.size());
    parallel_for(scoped.size(), jobs, [&](std::size_t s) {
      const TensorRecord& t = target.records()[scoped[s]];
      try {
        const TensorRecord& b = *base.find(t.name);
        const SvdFactors fb = svd_of(b);
        const SvdFactors ft = svd_of(t);
        const SvdFactors& dir = plan.direction_source == Role::Base ? fb : ft;
        const SvdFactors& val = plan.value_source == Role::Base ? fb : ft;
        const auto k = resolve_rank_scope(plan.rank, static_cast<std::size_t>(ft.rank()));
        merged[s] = merge_factors(t.name, t.source_dtype, dir, val, ft, k);
      } catch (const Error& e) {
        errors[s] = "'" + t.name + "': " + e.what();
      }
    });
    std::string msg;
    std::size_t failures = 0;
    for (const auto& e : errors) {
      if (!e.empty()) msg += "\n  " + e, ++failures;
    }
    if (failures) throw Error("surgery failed for " + std::to_string(failures) + " tensor(s):" + msg);
  }

  Checkpoint out;
  out.metadata = target.metadata;
  out.metadata["svdscope.version"] = std::string(kVersion);
  out.metadata["svdscope.plan"] = plan_to_json(plan).dump();
  std::size_t s = 0;
  for (std::size_t i = 0; i < target.records().size(); ++i) {
    const auto& t = target.records()[i];
    if (s < scoped.size() && scoped[s] == i) {
      if (merged[s]) {
        const auto& m = *merged[s];
        out.metadata["svdscope.k." + t.name] = "head=" + std::to_string(m.requested.head) +
                                               ",tail=" + std::to_string(m.requested.tail) +
                                               ",scope=" + std::to_string(m.scope_size);
        out.add(m.record);
      } else {
        out.metadata["svdscope.k." + t.name] = "head=0,tail=0,scope=0";
        out.add(t);
      }
      ++s;
    } else {
      out.add(t);
    }
  }
  return out;
}

}  // namespace svdscope
