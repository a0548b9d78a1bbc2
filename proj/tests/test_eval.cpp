// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "p2p/curves.hpp"
#include "p2p/eval.hpp"
#include "p2p/trainer.hpp"

using namespace p2p;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.frame = 2;
  d.feature = 6;
  d.latent = 2;
  d.hidden = 8;
  return d;
}

SequenceBatch test_split(std::size_t count, std::size_t length) {
  return DatasetSpec{}.generate(Split::kTest, 0, count, length);
}

EvalOptions small_options(std::size_t n) {
  EvalOptions o;
  o.n_samples = n;
  return o;
}

}  // namespace

TEST(Evaluate, ReportShapeAndDeterminism) {
  const P2PModel model(tiny_dims(), true, 3);
  const SequenceBatch test = test_split(5, 9);
  const MetricsReport a = evaluate(model, test, 9, small_options(4));
  const MetricsReport b = evaluate(model, test, 9, small_options(4));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.n_test_sequences, 5u);
  EXPECT_EQ(a.n_samples, 4u);
  ASSERT_EQ(a.div_through_time.size(), 9u);
  ASSERT_EQ(a.best_through_time_ci.size(), 9u);
  EXPECT_EQ(a.div_through_time.front(), 0.0);
  EXPECT_EQ(a.best_through_time.front(), 0.0);
  ASSERT_TRUE(a.s_div.has_value());
  ASSERT_TRUE(a.r_best.has_value());
  EvalOptions other = small_options(4);
  other.seed = 2;
  EXPECT_NE(evaluate(model, test, 9, other).s_best.mean, a.s_best.mean);
}

TEST(Evaluate, AggregatesMatchPerSequenceMetrics) {
  const P2PModel model(tiny_dims(), true, 4);
  const SequenceBatch test = test_split(3, 6);
  const EvalOptions opts = small_options(5);
  const MetricsReport r = evaluate(model, test, 6, opts);
  std::vector<double> best;
  for (std::size_t i = 0; i < test.count(); ++i) {
    const FrameSequence truth = sequence_prefix(test, i, 6);
    Rng rng(mix_seed(opts.seed) ^ mix_seed(i + 1));
    best.push_back(s_best(draw_samples(model, truth.front(), truth.back(), 6, 5, rng), truth, opts.kind));
  }
  const Interval expected = confidence_interval(best);
  EXPECT_EQ(r.s_best.mean, expected.mean);
  EXPECT_EQ(r.s_best.half_width, expected.half_width);
}

TEST(Evaluate, SingleSampleHasNoDiversity) {
  const P2PModel model(tiny_dims(), true, 5);
  const MetricsReport r = evaluate(model, test_split(3, 6), 6, small_options(1));
  EXPECT_FALSE(r.s_div.has_value());
  EXPECT_TRUE(r.div_through_time.empty());
  EXPECT_TRUE(to_json(r)["s_div"].is_null());
  EXPECT_NE(to_csv_row(r).find(",,"), std::string::npos);
}

TEST(Evaluate, RejectsBadInputs) {
  const P2PModel model(tiny_dims(), true, 6);
  EXPECT_THROW(evaluate(model, test_split(2, 6), 6, small_options(0)), std::invalid_argument);
  EXPECT_THROW(evaluate(model, SequenceBatch{2, {}}, 6, small_options(2)), std::invalid_argument);
  EXPECT_THROW(evaluate(model, test_split(2, 6), 8, small_options(2)), DimensionError);
  DatasetSpec wide;
  wide.n_points = 2;
  EXPECT_THROW(evaluate(model, wide.generate(Split::kTest, 0, 2, 6), 6, small_options(2)), DimensionError);
}

TEST(Curves, RowCounts) {
  const P2PModel model(tiny_dims(), true, 7);
  const std::vector<NamedModel> models{{"m", &model}};
  const CurveTable lengths = cpc_vs_length(models, DatasetSpec{}, 2, {8, 12, 16, 20}, small_options(2));
  EXPECT_EQ(lengths.rows.size(), 4u);
  EXPECT_EQ(lengths.header, (std::vector<std::string>{"length", "m", "m_ci"}));
  EXPECT_EQ(lengths.rows[2][0], "16");
  const CurveTable div = div_through_time(models, test_split(2, 7), 7, small_options(3));
  EXPECT_EQ(div.rows.size(), 7u);
  EXPECT_EQ(div.rows[0][1], "0");
  const CurveTable quality = quality_through_time(models, test_split(2, 5), 5, small_options(3));
  EXPECT_EQ(quality.rows.size(), 5u);
  EXPECT_THROW(cpc_vs_length(models, DatasetSpec{}, 2, {12, 8}, small_options(2)), std::invalid_argument);
  EXPECT_THROW(cpc_vs_length(models, DatasetSpec{}, 2, {}, small_options(2)), std::invalid_argument);
  EXPECT_THROW(cpc_vs_length({{"x", nullptr}}, DatasetSpec{}, 2, {8}, small_options(2)), std::invalid_argument);
}

TEST(Curves, WeightSweepHasOnePairPerWeight) {
  const P2PModel a(tiny_dims(), true, 8), b(tiny_dims(), true, 9);
  const std::vector<SweepModel> sweep{{false, 10, &a}, {false, 100, &b}, {true, 10, &b}, {true, 100, &a}};
  const CurveTable t = cpc_weight_sweep(sweep, test_split(2, 6), 6, small_options(2));
  EXPECT_EQ(t.header, (std::vector<std::string>{"variant", "w10", "w10_ci", "w100", "w100_ci"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "prior");
  EXPECT_EQ(t.rows[0][1], t.rows[1][3]);  // both evaluate model a
  const std::vector<SweepModel> ragged{{false, 10, &a}, {true, 100, &b}};
  EXPECT_THROW(cpc_weight_sweep(ragged, test_split(2, 6), 6, small_options(2)), std::invalid_argument);
  EXPECT_EQ(parse_curve_kind("cpc_weight_sweep"), CurveKind::kCpcWeightSweep);
  EXPECT_THROW(parse_curve_kind("fig5"), std::invalid_argument);
}
