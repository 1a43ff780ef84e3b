#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "svdscope/spectral.hpp"

using namespace svdscope;

namespace {

// Base checkpoint plus a target whose layer-1 q_proj has its leading left
// singular vector tilted by `theta` out of the column span.
struct Pair {
  Checkpoint base, target;
  double theta = 0;
};

Pair make_pair(double theta) {
  Rng rng(3);
  Pair p;
  p.theta = theta;
  Vector s(4);
  s << 4.0, 3.0, 2.0, 1.0;
  const Matrix u = random_orthonormal(10, 5, rng);
  const Matrix v = random_orthonormal(4, 4, rng);
  const Matrix w0 = u.leftCols(4) * s.asDiagonal() * v.transpose();
  Matrix ut = u.leftCols(4);
  ut.col(0) = std::cos(theta) * u.col(0) + std::sin(theta) * u.col(4);
  const Matrix w1 = ut * s.asDiagonal() * v.transpose();
  const Matrix other = random_gaussian(6, 3, rng);
  p.base.add(make_record("model.layers.0.self_attn.q_proj.weight", w0));
  p.base.add(make_record("model.layers.1.self_attn.q_proj.weight", w0));
  p.base.add(make_record("model.layers.1.mlp.up_proj.weight", other));
  p.base.add(TensorRecord{"model.norm.weight", {2}, DType::F64, {1.0, 1.0}});
  p.target.add(make_record("model.layers.0.self_attn.q_proj.weight", w0));
  p.target.add(make_record("model.layers.1.self_attn.q_proj.weight", w1));
  p.target.add(make_record("model.layers.1.mlp.up_proj.weight", 1.5 * other));
  p.target.add(TensorRecord{"model.norm.weight", {2}, DType::F64, {1.0, 2.0}});
  return p;
}

}  // namespace

TEST(Spectral, EnergyIsFrobeniusSquared) {
  Rng rng(1);
  const Matrix a = random_gaussian(7, 5, rng);
  EXPECT_NEAR(spectral_energy(make_record("w", a)), a.squaredNorm(), 1e-12 * a.squaredNorm());
}

TEST(Spectral, DeltaSigma) {
  Rng rng(2);
  const Matrix a = random_gaussian(6, 4, rng);
  const auto d = delta_sigma(make_record("w", a), make_record("w", 2.0 * a));
  const Vector s = compute_svd(a).sigma;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(d[static_cast<std::size_t>(i)], s(i), 1e-12);
  EXPECT_THROW(delta_sigma(make_record("w", a), make_record("w", Matrix(a.transpose()))), ShapeError);
}

TEST(Spectral, ReportLocalizesPlantedTilt) {
  const Pair p = make_pair(0.2);
  const auto rows = angle_report(p.base, p.target, "*q_proj*");
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rows[i].layer_index, 0);
    EXPECT_NEAR(rows[i].theta_left, 0.0, 1e-12);
    EXPECT_EQ(rows[i].delta_sigma, 0.0);
  }
  EXPECT_EQ(rows[4].layer_index, 1);
  EXPECT_NEAR(rows[4 + 3].theta_left, 0.2, 1e-12);  // largest principal angle sorts last
  EXPECT_NEAR(rows[4].per_index_left, 0.2, 1e-12);
  for (std::size_t i = 5; i < 8; ++i) EXPECT_NEAR(rows[i].per_index_left, 0.0, 1e-10);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_NEAR(rows[i].delta_sigma, 0.0, 1e-12);
}

TEST(Spectral, ReportIndependentOfJobs) {
  const Pair p = make_pair(0.4);
  const auto one = angle_report(p.base, p.target, "*", 1);
  const auto three = angle_report(p.base, p.target, "*", 3);
  std::ostringstream a, b;
  write_report_rows(a, one, false);
  write_report_rows(b, three, false);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Spectral, MatchingCollectsEveryProblem) {
  Pair p = make_pair(0.1);
  p.target = Checkpoint{};
  p.target.add(make_record("model.layers.0.self_attn.q_proj.weight", Matrix::Ones(3, 3)));
  p.target.add(make_record("model.layers.5.self_attn.q_proj.weight", Matrix::Ones(3, 3)));
  try {
    angle_report(p.base, p.target, "*q_proj*");
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("shape mismatch for 'model.layers.0"), std::string::npos);
    EXPECT_NE(msg.find("'model.layers.1.self_attn.q_proj.weight' missing from target"), std::string::npos);
    EXPECT_NE(msg.find("'model.layers.5.self_attn.q_proj.weight' missing from base"), std::string::npos);
  }
}

TEST(Spectral, BucketRangesPartition) {
  EXPECT_EQ(bucket_ranges(10, 0.2).head_end, 2u);
  EXPECT_EQ(bucket_ranges(10, 0.2).tail_begin, 8u);
  EXPECT_EQ(bucket_ranges(3, 0.5).head_end, 2u);
  EXPECT_EQ(bucket_ranges(3, 0.5).tail_begin, 2u);
  EXPECT_EQ(bucket_ranges(1, 0.2).head_end, 1u);
  EXPECT_EQ(bucket_ranges(1, 0.2).tail_begin, 1u);
  EXPECT_EQ(bucket_ranges(7, 0.0).head_end, 0u);
  EXPECT_EQ(bucket_ranges(7, 0.0).tail_begin, 7u);
}

TEST(Spectral, SummaryAggregates) {
  const Pair p = make_pair(0.3);
  const auto rows = angle_report(p.base, p.target, "*");
  const auto s = summarize(rows, 0.25);
  ASSERT_EQ(s.tensors.size(), 3u);
  EXPECT_NEAR(s.tensors[0].energy_base, 30.0, 1e-12);
  EXPECT_EQ(s.tensors[1].head.end, 1u);
  EXPECT_NEAR(s.tensors[1].head.per_index_left.max, 0.3, 1e-12);
  EXPECT_NEAR(s.tensors[2].energy_tgt, 2.25 * s.tensors[2].energy_base, 1e-9);
  ASSERT_EQ(s.layers.size(), 2u);
  EXPECT_EQ(s.layers[1].tensors, 2u);
  EXPECT_THROW(summarize({}, 0.2), Error);
  EXPECT_THROW(summarize(rows, 0.6), DomainError);
  const auto j = summary_to_json(s, {{"base", "b.st"}});
  EXPECT_EQ(j["metadata"]["alignment"], "rank-index");
  EXPECT_EQ(j["metadata"]["base"], "b.st");
  EXPECT_EQ(j["tensors"].size(), 3u);
}

TEST(Spectral, CsvRoundTrip) {
  const Pair p = make_pair(0.3);
  const auto rows = angle_report(p.base, p.target, "*");
  std::stringstream ss;
  write_report_rows(ss, rows, false);
  const auto back = read_report_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].tensor_name, rows[i].tensor_name);
    EXPECT_EQ(back[i].layer_index, rows[i].layer_index);
    EXPECT_EQ(back[i].sigma_base, rows[i].sigma_base);
    EXPECT_NEAR(back[i].theta_left, rows[i].theta_left, 1e-15);
  }
  std::stringstream angles;
  write_report_rows(angles, rows, true);
  EXPECT_THROW(read_report_csv(angles), FormatError);
}
