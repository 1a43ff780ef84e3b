#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdscope/error.hpp"
#include "svdscope/linalg.hpp"
#include "svdscope/parallel.hpp"
#include "svdscope/tensor_store.hpp"

namespace svdscope {

inline double to_degrees(double rad) { return rad * 180.0 / std::numbers::pi; }
inline double to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline void require_same_shape(const TensorRecord& a, const TensorRecord& b) {
  if (a.shape != b.shape) {
    throw ShapeError("shape mismatch for '" + a.name + "': " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

inline SvdFactors svd_of(const TensorRecord& r) { return compute_svd(to_matrix(r), {.label = r.name}); }

/// sigma_tgt - sigma_base, aligned by rank index.
inline std::vector<double> delta_sigma(const TensorRecord& base, const TensorRecord& tgt) {
  require_same_shape(base, tgt);
  const Vector sb = svd_of(base).sigma;
  const Vector st = svd_of(tgt).sigma;
  std::vector<double> d(static_cast<std::size_t>(sb.size()));
  for (Eigen::Index i = 0; i < sb.size(); ++i) d[static_cast<std::size_t>(i)] = st(i) - sb(i);
  return d;
}

inline double spectral_energy(const Vector& sigma) { return sigma.squaredNorm(); }

/// ||W||_F^2 computed as the sum of squared singular values.
inline double spectral_energy(const TensorRecord& r) { return spectral_energy(svd_of(r).sigma); }

struct SpectralReportRow {
  std::string tensor_name;
  std::optional<int> layer_index;
  std::size_t rank_index = 0;
  double sigma_base = 0, sigma_tgt = 0, delta_sigma = 0;
  double theta_left = 0, theta_right = 0;          // principal angles, radians
  double per_index_left = 0, per_index_right = 0;  // vector angles, radians
};

/// Rows for one matched tensor pair.
inline std::vector<SpectralReportRow> tensor_rows(const TensorRecord& base, const TensorRecord& tgt) {
  require_same_shape(base, tgt);
  const SvdFactors fb = svd_of(base);
  const SvdFactors ft = svd_of(tgt);
  const PrincipalAngleSpectrum ang = angle_spectrum(fb, ft);
  const auto layer = layer_index(base.name);
  std::vector<SpectralReportRow> rows(static_cast<std::size_t>(fb.rank()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    rows[i] = {base.name,          layer,
               i,                  fb.sigma(ii),
               ft.sigma(ii),       ft.sigma(ii) - fb.sigma(ii),
               ang.theta_left[i],  ang.theta_right[i],
               ang.per_index_left[i], ang.per_index_right[i]};
  }
  return rows;
}

struct MatchedPair {
  const TensorRecord* base;
  const TensorRecord* tgt;
};

/// Pairs the 2-D tensors matching `glob` in both checkpoints, in base
/// order. Every problem is collected before throwing.
inline std::vector<MatchedPair> match_tensors(const Checkpoint& base, const Checkpoint& tgt, const Glob& glob) {
  std::vector<MatchedPair> pairs;
  std::vector<std::string> problems;
  for (const TensorRecord* b : select_tensors(base, glob).matrices) {
    const TensorRecord* t = tgt.find(b->name);
    if (!t) {
      problems.push_back("'" + b->name + "' missing from target");
    } else if (t->shape != b->shape) {
      problems.push_back("shape mismatch for '" + b->name + "': " + shape_string(b->shape) + " vs " +
                         shape_string(t->shape));
    } else {
      pairs.push_back({b, t});
    }
  }
  for (const TensorRecord* t : select_tensors(tgt, glob).matrices) {
    if (!base.find(t->name)) problems.push_back("'" + t->name + "' missing from base");
  }
  if (!problems.empty()) {
    std::string msg = "cannot compare checkpoints:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ShapeError(msg);
  }
  return pairs;
}

/// Computes rows tensor by tensor, `jobs` tensors at a time, and hands each
/// tensor's rows to `sink` in base-checkpoint order.
inline void stream_angle_report(const Checkpoint& base, const Checkpoint& tgt, const Glob& glob, unsigned jobs,
                                const std::function<void(std::vector<SpectralReportRow>&&)>& sink) {
  const auto pairs = match_tensors(base, tgt, glob);
  const std::size_t chunk = std::max(1u, jobs);
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t count = std::min(chunk, pairs.size() - start);
    std::vector<std::vector<SpectralReportRow>> out(count);
    parallel_for(count, jobs, [&](std::size_t i) {
      out[i] = tensor_rows(*pairs[start + i].base, *pairs[start + i].tgt);
    });
    for (auto& rows : out) sink(std::move(rows));
  }
}

inline std::vector<SpectralReportRow> angle_report(const Checkpoint& base, const Checkpoint& tgt,
                                                   std::string_view pattern, unsigned jobs = 1) {
  std::vector<SpectralReportRow> all;
  stream_angle_report(base, tgt, Glob(pattern), jobs, [&](std::vector<SpectralReportRow>&& rows) {
    all.insert(all.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  });
  return all;
}

// --- summaries ------------------------------------------------------------

struct AngleStats {
  double mean = 0, max = 0;
};

struct BucketStats {
  std::size_t begin = 0, end = 0;  // rank range [begin, end)
  AngleStats theta_left, theta_right, per_index_left, per_index_right;
};

struct BucketRanges {
  std::size_t head_end, tail_begin;
};

/// head = [0, ceil(f r)), tail = [r - ceil(f r), r) clipped so the three
/// buckets partition [0, r).
inline BucketRanges bucket_ranges(std::size_t r, double fraction) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(r) - 1e-9));
  const std::size_t head_end = std::min(k, r);
  const std::size_t tail_begin = std::max(head_end, r - std::min(k, r));
  return {head_end, tail_begin};
}

struct TensorSummary {
  std::string tensor;
  std::optional<int> layer;
  std::size_t rank = 0;
  double energy_base = 0, energy_tgt = 0, max_abs_delta_sigma = 0;
  BucketStats head, bulk, tail;
};

struct LayerSummary {
  std::optional<int> layer;
  std::size_t tensors = 0;
  double energy_base = 0, energy_tgt = 0, max_abs_delta_sigma = 0;
  BucketStats head, bulk, tail;  // begin/end unused: buckets pool rows across tensors
};

struct SpectralSummary {
  double bucket_fraction = 0.2;
  std::vector<TensorSummary> tensors;
  std::vector<LayerSummary> layers;
};

namespace detail {

struct AngleAccumulator {
  std::size_t count = 0;
  double sum[4] = {0, 0, 0, 0};
  double max[4] = {0, 0, 0, 0};

  void add(const SpectralReportRow& r) {
    const double v[4] = {r.theta_left, r.theta_right, r.per_index_left, r.per_index_right};
    for (int k = 0; k < 4; ++k) {
      sum[k] += v[k];
      max[k] = std::max(max[k], v[k]);
    }
    ++count;
  }

  void fill(BucketStats& b) const {
    AngleStats* s[4] = {&b.theta_left, &b.theta_right, &b.per_index_left, &b.per_index_right};
    for (int k = 0; k < 4; ++k) {
      s[k]->mean = count ? sum[k] / static_cast<double>(count) : 0.0;
      s[k]->max = max[k];
    }
  }
};

}  // namespace detail

inline SpectralSummary summarize(const std::vector<SpectralReportRow>& rows, double bucket_fraction = 0.2) {
  if (rows.empty()) throw Error("cannot summarize an empty report");
  if (!(bucket_fraction >= 0.0 && bucket_fraction <= 0.5)) {
    throw DomainError("bucket fraction must lie in [0, 0.5]");
  }
  SpectralSummary out;
  out.bucket_fraction = bucket_fraction;

  // Group rows by tensor, keeping first-appearance order.
  std::vector<std::vector<const SpectralReportRow*>> groups;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    auto [it, fresh] = slot.try_emplace(r.tensor_name, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(&r);
  }

  struct LayerAcc {
    LayerSummary s;
    detail::AngleAccumulator head, bulk, tail;
  };
  std::map<std::optional<int>, LayerAcc> layers;

  for (const auto& g : groups) {
    TensorSummary t;
    t.tensor = g.front()->tensor_name;
    t.layer = g.front()->layer_index;
    t.rank = g.size();
    const auto [head_end, tail_begin] = bucket_ranges(t.rank, bucket_fraction);
    detail::AngleAccumulator head, bulk, tail;
    LayerAcc& la = layers[t.layer];
    for (const auto* r : g) {
      t.energy_base += r->sigma_base * r->sigma_base;
      t.energy_tgt += r->sigma_tgt * r->sigma_tgt;
      t.max_abs_delta_sigma = std::max(t.max_abs_delta_sigma, std::fabs(r->delta_sigma));
      if (r->rank_index < head_end) {
        head.add(*r);
        la.head.add(*r);
      } else if (r->rank_index < tail_begin) {
        bulk.add(*r);
        la.bulk.add(*r);
      } else {
        tail.add(*r);
        la.tail.add(*r);
      }
    }
    t.head.begin = 0, t.head.end = head_end;
    t.bulk.begin = head_end, t.bulk.end = tail_begin;
    t.tail.begin = tail_begin, t.tail.end = t.rank;
    head.fill(t.head);
    bulk.fill(t.bulk);
    tail.fill(t.tail);

    la.s.layer = t.layer;
    la.s.tensors += 1;
    la.s.energy_base += t.energy_base;
    la.s.energy_tgt += t.energy_tgt;
    la.s.max_abs_delta_sigma = std::max(la.s.max_abs_delta_sigma, t.max_abs_delta_sigma);
    out.tensors.push_back(std::move(t));
  }
  for (auto& [key, la] : layers) {
    la.head.fill(la.s.head);
    la.bulk.fill(la.s.bulk);
    la.tail.fill(la.s.tail);
    out.layers.push_back(la.s);
  }
  return out;
}

// --- text formats ---------------------------------------------------------

inline constexpr const char* kReportHeader =
    "tensor,layer,rank,sigma_base,sigma_tgt,delta_sigma,theta_left_deg,theta_right_deg,"
    "vec_angle_left_deg,vec_angle_right_deg";
inline constexpr const char* kAngleHeader =
    "tensor,layer,rank,theta_left_deg,theta_right_deg,vec_angle_left_deg,vec_angle_right_deg";

/// Header line plus one line per row; angles in degrees.
inline void write_report_rows(std::ostream& os, const std::vector<SpectralReportRow>& rows, bool angles_only) {
  os << (angles_only ? kAngleHeader : kReportHeader) << '\n';
  for (const auto& r : rows) {
    os << r.tensor_name << ',' << (r.layer_index ? std::to_string(*r.layer_index) : std::string()) << ','
       << r.rank_index << ',';
    if (!angles_only) {
      os << format_double(r.sigma_base) << ',' << format_double(r.sigma_tgt) << ','
         << format_double(r.delta_sigma) << ',';
    }
    os << format_double(to_degrees(r.theta_left)) << ',' << format_double(to_degrees(r.theta_right)) << ','
       << format_double(to_degrees(r.per_index_left)) << ',' << format_double(to_degrees(r.per_index_right))
       << '\n';
  }
}

/// Parses a full spectra CSV (the non-angle-only layout).
inline std::vector<SpectralReportRow> read_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kReportHeader) {
    throw FormatError("report CSV: expected header '" + std::string(kReportHeader) + "'");
  }
  std::vector<SpectralReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw FormatError("report CSV line " + std::to_string(lineno) + ": expected 10 fields");
    auto num = [&](const std::string& s) {
      double v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("report CSV line " + std::to_string(lineno) + ": bad number '" + s + "'");
      }
      return v;
    };
    SpectralReportRow r;
    r.tensor_name = f[0];
    if (!f[1].empty()) r.layer_index = static_cast<int>(num(f[1]));
    r.rank_index = static_cast<std::size_t>(num(f[2]));
    r.sigma_base = num(f[3]);
    r.sigma_tgt = num(f[4]);
    r.delta_sigma = num(f[5]);
    r.theta_left = to_radians(num(f[6]));
    r.theta_right = to_radians(num(f[7]));
    r.per_index_left = to_radians(num(f[8]));
    r.per_index_right = to_radians(num(f[9]));
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace detail {

inline nlohmann::ordered_json bucket_json(const BucketStats& b, bool with_range) {
  auto stats = [](const AngleStats& s) {
    return nlohmann::ordered_json{{"mean", to_degrees(s.mean)}, {"max", to_degrees(s.max)}};
  };
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  if (with_range) j["ranks"] = {b.begin, b.end};
  j["theta_left_deg"] = stats(b.theta_left);
  j["theta_right_deg"] = stats(b.theta_right);
  j["vec_angle_left_deg"] = stats(b.per_index_left);
  j["vec_angle_right_deg"] = stats(b.per_index_right);
  return j;
}

inline nlohmann::ordered_json layer_json(const std::optional<int>& l) {
  return l ? nlohmann::ordered_json(*l) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json summary_to_json(const SpectralSummary& s,
                                              const std::map<std::string, std::string>& metadata = {}) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  meta["alignment"] = "rank-index";
  meta["angle_units"] = "degrees";
  meta["bucket_fraction"] = s.bucket_fraction;
  for (const auto& [k, v] : metadata) meta[k] = v;
  j["metadata"] = std::move(meta);
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : s.tensors) {
    j["tensors"].push_back({{"tensor", t.tensor},
                            {"layer", detail::layer_json(t.layer)},
                            {"rank", t.rank},
                            {"energy_base", t.energy_base},
                            {"energy_tgt", t.energy_tgt},
                            {"max_abs_delta_sigma", t.max_abs_delta_sigma},
                            {"head", detail::bucket_json(t.head, true)},
                            {"bulk", detail::bucket_json(t.bulk, true)},
                            {"tail", detail::bucket_json(t.tail, true)}});
  }
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : s.layers) {
    j["layers"].push_back({{"layer", detail::layer_json(l.layer)},
                           {"tensors", l.tensors},
                           {"energy_base", l.energy_base},
                           {"energy_tgt", l.energy_tgt},
                           {"max_abs_delta_sigma", l.max_abs_delta_sigma},
                           {"head", detail::bucket_json(l.head, false)},
                           {"bulk", detail::bucket_json(l.bulk, false)},
                           {"tail", detail::bucket_json(l.tail, false)}});
  }
  return j;
}

}  // namespace svdscope
