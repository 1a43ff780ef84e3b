#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "svdscope/surgery.hpp"

using namespace svdscope;

namespace {

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

// Target = base with the leading k left directions tilted out of the
// column span and the leading k right directions mixed among themselves;
// singular values nudged by at most 0.005.
struct Planted {
  Matrix base, target;
  Vector sigma_t;
};

Planted planted(Eigen::Index m, Eigen::Index n, Eigen::Index k, double theta, Rng& rng) {
  Vector s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = 1.0 + 0.1 * static_cast<double>(n - i);
  const Matrix q = random_orthonormal(m, n + k, rng);
  const Matrix u = q.leftCols(n);
  const Matrix v = random_orthonormal(n, n, rng);
  Matrix ut = u, vt = v;
  const Matrix g = random_orthonormal(k, k, rng);
  ut.leftCols(k) = std::cos(theta) * u.leftCols(k) * g + std::sin(theta) * q.rightCols(k);
  vt.leftCols(k) = v.leftCols(k) * random_orthonormal(k, k, rng);
  Planted p;
  p.sigma_t = s;
  for (Eigen::Index i = 0; i < n; ++i) p.sigma_t(i) += 0.005 * (rng.uniform() - 0.5) * 2.0;
  p.base = u * s.asDiagonal() * v.transpose();
  p.target = ut * p.sigma_t.asDiagonal() * vt.transpose();
  return p;
}

Checkpoint model(double scale, int layers, Rng& rng) {
  Checkpoint c;
  c.metadata["origin"] = "unit";
  c.add(make_record("model.embed_tokens.weight", scale * random_gaussian(12, 4, rng)));
  for (int l = 0; l < layers; ++l) {
    const std::string p = "model.layers." + std::to_string(l);
    c.add(make_record(p + ".self_attn.q_proj.weight", scale * random_gaussian(4, 4, rng)));
    c.add(make_record(p + ".mlp.down_proj.weight", scale * random_gaussian(4, 6, rng)));
    c.add(TensorRecord{p + ".input_layernorm.weight", {4}, DType::F64, {scale, scale, scale, scale}});
  }
  c.add(make_record("lm_head.weight", scale * random_gaussian(12, 4, rng)));
  return c;
}

}  // namespace

TEST(RankScope, Resolution) {
  EXPECT_EQ(resolve_rank_scope({RankKind::Full}, 8), (ResolvedRank{8, 0}));
  EXPECT_EQ(resolve_rank_scope({RankKind::None}, 8), (ResolvedRank{0, 0}));
  EXPECT_EQ(resolve_rank_scope({RankKind::Count, 3, 2}, 8), (ResolvedRank{3, 2}));
  EXPECT_EQ(resolve_rank_scope({RankKind::Fraction, 0.1, 0.0}, 30), (ResolvedRank{3, 0}));
  EXPECT_EQ(resolve_rank_scope({RankKind::Fraction, 0.25, 0.1}, 10), (ResolvedRank{3, 1}));
  EXPECT_THROW(resolve_rank_scope({RankKind::Count, 5, 4}, 8), DomainError);
  EXPECT_THROW(resolve_rank_scope({RankKind::Count, 1.5, 0}, 8), DomainError);
  EXPECT_THROW(resolve_rank_scope({RankKind::Fraction, 1.5, 0}, 8), DomainError);
}

TEST(RankScope, TieBlocksAreNotSplit) {
  Vector s(5);
  s << 3.0, 2.0, 2.0, 1.0, 0.5;
  const auto mask = scope_mask(5, {2, 0}, {&s});
  EXPECT_EQ(mask, (std::vector<bool>{true, true, true, false, false}));
  const auto tail = scope_mask(5, {0, 1}, {&s});
  EXPECT_EQ(tail, (std::vector<bool>{false, false, false, false, true}));
}

TEST(RankScope, FlagParsing) {
  EXPECT_EQ(parse_rank_flags("full", std::nullopt).kind, RankKind::Full);
  EXPECT_EQ(parse_rank_flags("none", std::nullopt).kind, RankKind::None);
  const auto f = parse_rank_flags("f:0.2", std::string_view("f:0.1"));
  EXPECT_EQ(f.kind, RankKind::Fraction);
  EXPECT_EQ(f.head, 0.2);
  EXPECT_EQ(f.tail, 0.1);
  EXPECT_EQ(parse_rank_flags("16", std::string_view("4")).tail, 4.0);
  EXPECT_THROW(parse_rank_flags("16", std::string_view("f:0.1")), DomainError);
  EXPECT_THROW(parse_rank_flags("full", std::string_view("2")), DomainError);
  EXPECT_THROW(parse_rank_flags("abc", std::nullopt), DomainError);
}

TEST(LayerRanges, ParseAndFormat) {
  const auto r = parse_layer_ranges("0..4,7");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], (LayerRange{0, 4}));
  EXPECT_EQ(r[1], (LayerRange{7, 8}));
  EXPECT_EQ(format_layer_ranges(r), "0..4,7..8");
  EXPECT_TRUE(parse_layer_ranges("all").empty());
  EXPECT_THROW(parse_layer_ranges("3..3"), DomainError);
  EXPECT_THROW(parse_layer_ranges("a..b"), DomainError);
  EXPECT_THROW(parse_layer_ranges(""), DomainError);
}

TEST(Plan, JsonRoundTrip) {
  SurgeryPlan p;
  p.direction_source = Role::Target;
  p.value_source = Role::Base;
  p.rank = {RankKind::Fraction, 0.2, 0.05};
  p.layers = {{0, 2}, {5, 6}};
  p.pattern = "*q_proj*";
  p.include_untied = true;
  EXPECT_EQ(plan_from_json(nlohmann::json::parse(plan_to_json(p).dump())), p);
  EXPECT_EQ(plan_from_json(nlohmann::json::object()), SurgeryPlan{});
  EXPECT_THROW(plan_from_json(nlohmann::json::parse(R"({"direction_source":"sft"})")), DomainError);
  EXPECT_THROW(plan_from_json(nlohmann::json::parse(R"({"rank":{"kind":"most"}})")), DomainError);
}

TEST(Merge, FullRestorationWithSameSourceIsIdentity) {
  Rng rng(1);
  const auto w = make_record("w", random_gaussian(9, 6, rng));
  EXPECT_LE(rel(to_matrix(merge_spectral(w, w, 6, 0)), to_matrix(w)), 1e-12);
  EXPECT_LE(rel(to_matrix(restore_values(w, w)), to_matrix(w)), 1e-12);
}

TEST(Merge, PlantedHeadRestoration) {
  Rng rng(2);
  const auto p = planted(30, 10, 3, 0.3, rng);
  const auto merged = merge_spectral(make_record("w", p.base), make_record("w", p.target), 3, 0);
  const SvdFactors fm = compute_svd(to_matrix(merged));
  const SvdFactors fb = compute_svd(p.base);
  for (double a : principal_angles(fb.u, fm.u)) EXPECT_LE(a, 1e-10);
  for (double a : per_index_angles(fb.u, fm.u)) EXPECT_LE(a, 1e-8);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(fm.sigma(i), p.sigma_t(i), 1e-12);
  EXPECT_NEAR(spectral_energy(merged), p.sigma_t.squaredNorm(), 1e-12 * p.sigma_t.squaredNorm());
}

TEST(Merge, ValuesModeSwapsRoles) {
  Rng rng(3);
  const auto p = planted(20, 6, 2, 0.2, rng);
  const auto t = make_record("w", p.target);
  const auto b = make_record("w", p.base);
  // Target directions with base values on the full rank.
  const Matrix merged = to_matrix(merge_spectral(t, b, 6, 0));
  const SvdFactors ft = compute_svd(p.target);
  const SvdFactors fb = compute_svd(p.base);
  EXPECT_LE(rel(merged, ft.u * fb.sigma.asDiagonal() * ft.v.transpose()), 1e-12);
}

TEST(Apply, DirectionsModeTouchesOnlyScopedTensors) {
  Rng rng(4);
  const Checkpoint base = model(1.0, 3, rng);
  const Checkpoint target = model(1.0, 3, rng);
  SurgeryPlan plan;
  plan.layers = {{1, 2}};
  plan.pattern = "*q_proj*";
  const Checkpoint out = apply_plan(base, target, plan);
  ASSERT_EQ(out.records().size(), target.records().size());
  for (const auto& r : out.records()) {
    const auto& t = *target.find(r.name);
    if (r.name == "model.layers.1.self_attn.q_proj.weight") {
      const auto expected = restore_values(*base.find(r.name), t);
      EXPECT_LE(rel(to_matrix(r), to_matrix(expected)), 1e-12);
    } else {
      EXPECT_EQ(r, t) << r.name;
    }
  }
  EXPECT_EQ(out.metadata.at("origin"), "unit");
  EXPECT_EQ(out.metadata.at("svdscope.k.model.layers.1.self_attn.q_proj.weight"), "head=4,tail=0,scope=4");
  EXPECT_EQ(plan_from_json(nlohmann::json::parse(out.metadata.at("svdscope.plan"))), plan);
}

TEST(Apply, DefaultPatternsAndUntied) {
  Rng rng(5);
  const Checkpoint base = model(1.0, 2, rng);
  const Checkpoint target = model(2.0, 2, rng);
  SurgeryPlan plan;
  const Checkpoint a = apply_plan(base, target, plan);
  EXPECT_EQ(*a.find("lm_head.weight"), *target.find("lm_head.weight"));
  EXPECT_NE(*a.find("model.layers.0.mlp.down_proj.weight"), *target.find("model.layers.0.mlp.down_proj.weight"));
  plan.include_untied = true;
  plan.layers = {{0, 1}};
  const Checkpoint b = apply_plan(base, target, plan);
  EXPECT_NE(*b.find("lm_head.weight"), *target.find("lm_head.weight"));
  EXPECT_EQ(*b.find("model.layers.1.mlp.down_proj.weight"), *target.find("model.layers.1.mlp.down_proj.weight"));
}

TEST(Apply, NoneScopeCopiesTarget) {
  Rng rng(6);
  const Checkpoint base = model(1.0, 2, rng);
  const Checkpoint target = model(1.0, 2, rng);
  SurgeryPlan plan;
  plan.rank.kind = RankKind::None;
  const Checkpoint out = apply_plan(base, target, plan);
  for (const auto& r : out.records()) EXPECT_EQ(r, *target.find(r.name));
}

TEST(Apply, ResultIndependentOfJobs) {
  Rng rng(7);
  const Checkpoint base = model(1.0, 4, rng);
  const Checkpoint target = model(1.0, 4, rng);
  SurgeryPlan plan;
  plan.rank = {RankKind::Fraction, 0.5, 0.25};
  EXPECT_EQ(encode_checkpoint(apply_plan(base, target, plan, 1)), encode_checkpoint(apply_plan(base, target, plan, 4)));
}

TEST(Apply, Errors) {
  Rng rng(8);
  const Checkpoint base = model(1.0, 2, rng);
  Checkpoint target;
  for (const auto& r : base.records()) {
    if (r.name == "model.layers.0.self_attn.q_proj.weight") {
      target.add(make_record(r.name, Matrix::Ones(5, 4)));
    } else if (r.name != "model.layers.1.mlp.down_proj.weight") {
      target.add(r);
    }
  }
  try {
    apply_plan(base, target, SurgeryPlan{});
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2 tensor(s)"), std::string::npos);
    EXPECT_NE(msg.find("shape mismatch for 'model.layers.0.self_attn.q_proj.weight'"), std::string::npos);
    EXPECT_NE(msg.find("'model.layers.1.mlp.down_proj.weight' missing from target"), std::string::npos);
  }
  SurgeryPlan deep;
  deep.layers = {{0, 9}};
  EXPECT_THROW(apply_plan(base, base, deep), DomainError);
  SurgeryPlan nothing;
  nothing.pattern = "*nope*";
  EXPECT_THROW(apply_plan(base, base, nothing), DomainError);
}
