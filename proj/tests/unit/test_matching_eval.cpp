#include "dqen/errors.hpp"
#include "dqen/evaluation.hpp"
#include "dqen/matching.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace dqen;
using dqen::testing::random_matrix;

namespace {

Box row_box(const ag::Matrix& m, ag::Index r) { return {m(r, 0), m(r, 1), m(r, 2), m(r, 3)}; }

ImageTargets two_targets(const HOIVocabulary& vocab) {
  Annotation ann;
  ann.image_id = "a";
  GroundTruthInstance g0, g1;
  g0.human_box = Box::from_corners(0.1, 0.1, 0.3, 0.5);
  g0.object_box = Box::from_corners(0.3, 0.2, 0.4, 0.3);
  g0.object_class = vocab.object_of(0);
  g0.verb_ids = {vocab.verb_of(0)};
  g1.human_box = Box::from_corners(0.5, 0.5, 0.7, 0.9);
  g1.object_box = Box::from_corners(0.6, 0.6, 0.8, 0.8);
  g1.object_class = vocab.object_of(2);
  g1.verb_ids = {vocab.verb_of(2)};
  ann.instances = {g0, g1};
  return make_image_targets(ann, vocab, 2, 2, Vector::Zero(4));
}

LayerPredictions random_predictions(std::mt19937_64& rng, int nq, const ModelConfig& cfg) {
  LayerPredictions p;
  ag::Matrix boxes = random_matrix(rng, nq, 4, 0.1).array() + 0.3;
  p.human_boxes = ag::parameter(boxes);
  p.object_boxes = ag::parameter(random_matrix(rng, nq, 4, 0.1).array() + 0.3);
  p.object_logits = ag::parameter(random_matrix(rng, nq, cfg.num_objects + 1));
  p.inter_logits = ag::parameter(random_matrix(rng, nq, cfg.num_hoi));
  p.verb_logits = ag::parameter(random_matrix(rng, nq, cfg.num_verbs));
  return p;
}

}  // namespace

TEST(Hungarian, SmallExamples) {
  ag::Matrix c(2, 2);
  c << 1, 2, 2, 4;
  const auto a = hungarian(c);
  EXPECT_EQ(a.pairs, (std::vector<std::pair<int, int>>{{0, 1}, {1, 0}}));
  EXPECT_DOUBLE_EQ(a.cost, 4.0);

  ag::Matrix wide(2, 3);
  wide << 5, 1, 9, 1, 2, 9;
  EXPECT_DOUBLE_EQ(hungarian(wide).cost, 2.0);
  const auto tall = hungarian(wide.transpose());
  EXPECT_EQ(tall.pairs, (std::vector<std::pair<int, int>>{{0, 1}, {1, 0}}));
  EXPECT_TRUE(hungarian(ag::Matrix(0, 3)).pairs.empty());

  ag::Matrix bad = ag::Matrix::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(bad), NumericError);
}

TEST(Matching, TargetsAreMultiHot) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  const auto t = two_targets(vocab);
  EXPECT_EQ(t.hoi_targets.rows(), 2);
  EXPECT_DOUBLE_EQ(t.hoi_targets(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.hoi_targets.sum(), 2.0);
  EXPECT_DOUBLE_EQ(t.verb_targets(1, vocab.verb_of(2)), 1.0);
  EXPECT_EQ(t.token_targets.size(), 4U);
}

TEST(Matching, CostMatrixMatchesLoopOracle) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  ModelConfig cfg;
  cfg.num_verbs = 3;
  cfg.num_objects = 3;
  cfg.num_hoi = 5;
  std::mt19937_64 rng(11);
  const auto pred = random_predictions(rng, 4, cfg);
  const auto gt = two_targets(vocab);
  const ag::Matrix cost = build_cost_matrix(pred, gt, cfg);
  const double a = cfg.focal_alpha, g = cfg.focal_gamma;
  for (int q = 0; q < 4; ++q) {
    for (int j = 0; j < 2; ++j) {
      const ag::Matrix& ol = pred.object_logits.value();
      double z = 0;
      for (int c = 0; c < 4; ++c) z += std::exp(ol(q, c));
      const double s_o = std::exp(ol(q, gt.object_classes[static_cast<std::size_t>(j)])) / z;
      double l1 = 0;
      for (int k = 0; k < 4; ++k) {
        l1 += std::abs(pred.human_boxes.value()(q, k) - gt.human_boxes(j, k));
        l1 += std::abs(pred.object_boxes.value()(q, k) - gt.object_boxes(j, k));
      }
      const double gi = 2.0 - giou(row_box(pred.human_boxes.value(), q), row_box(gt.human_boxes, j)) -
                        giou(row_box(pred.object_boxes.value(), q), row_box(gt.object_boxes, j));
      double inter = 0;
      int npos = 0;
      for (int n = 0; n < 5; ++n) {
        if (gt.hoi_targets(j, n) < 0.5) continue;
        ++npos;
        const double p = 1.0 / (1.0 + std::exp(-pred.inter_logits.value()(q, n)));
        inter += a * std::pow(1 - p, g) * -std::log(p) - (1 - a) * std::pow(p, g) * -std::log(1 - p);
      }
      const double expect = cfg.lambda_box * l1 + cfg.lambda_giou * gi - cfg.lambda_obj * s_o +
                            cfg.lambda_inter * inter / npos;
      EXPECT_NEAR(cost(q, j), expect, 1e-12) << q << "," << j;
    }
  }
}

TEST(Matching, LossOracles) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  ModelConfig cfg;
  cfg.num_verbs = 3;
  cfg.num_objects = 3;
  cfg.num_hoi = 5;
  std::mt19937_64 rng(12);
  const auto pred = random_predictions(rng, 3, cfg);
  const auto gt = two_targets(vocab);
  Assignment a;
  a.pairs = {{0, 1}, {2, 0}};
  const auto [l1, lu] = loss_boxes(pred, gt, a);
  double e1 = 0, eu = 0;
  for (const auto& [q, j] : a.pairs) {
    e1 += (pred.human_boxes.value().row(q) - gt.human_boxes.row(j)).cwiseAbs().sum();
    e1 += (pred.object_boxes.value().row(q) - gt.object_boxes.row(j)).cwiseAbs().sum();
    eu += 1 - giou(row_box(pred.human_boxes.value(), q), row_box(gt.human_boxes, j));
    eu += 1 - giou(row_box(pred.object_boxes.value(), q), row_box(gt.object_boxes, j));
  }
  EXPECT_NEAR(l1.item(), e1, 1e-12);
  // The differentiable GIoU pads union and hull by 1e-9.
  EXPECT_NEAR(lu.item(), eu, 1e-8);

  const auto [ce, la] = loss_classification(pred, gt, a, cfg);
  // Query 1 is unmatched: background target at weight 0.1.
  const std::vector<int> cls{gt.object_classes[1], 3, gt.object_classes[0]};
  const std::vector<double> w{1.0, cfg.background_weight, 1.0};
  double num = 0, den = 0;
  for (int q = 0; q < 3; ++q) {
    const ag::Matrix& ol = pred.object_logits.value();
    double z = 0;
    for (int c = 0; c < 4; ++c) z += std::exp(ol(q, c));
    num += w[static_cast<std::size_t>(q)] * (std::log(z) - ol(q, cls[static_cast<std::size_t>(q)]));
    den += w[static_cast<std::size_t>(q)];
  }
  EXPECT_NEAR(ce.item(), num / den, 1e-12);
  EXPECT_GT(la.item(), 0.0);

  EXPECT_TRUE(loss_boxes(pred, gt, Assignment{}).first.item() == 0.0);
}

TEST(Matching, UniformObjectLogitsGiveLogClassCount) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  ModelConfig cfg;
  cfg.num_verbs = 3;
  cfg.num_objects = 3;
  cfg.num_hoi = 5;
  std::mt19937_64 rng(13);
  auto pred = random_predictions(rng, 4, cfg);
  pred.object_logits = ag::parameter(ag::Matrix::Zero(4, 4));
  Assignment a;
  a.pairs = {{1, 0}};
  EXPECT_NEAR(loss_classification(pred, two_targets(vocab), a, cfg).first.item(), std::log(4.0), 1e-14);

  const Var tokens = ag::constant(ag::Matrix::Zero(4, 4));
  EXPECT_NEAR(loss_oqe_ce(tokens, {0, 3, 3, 1}).item(), std::log(4.0), 1e-14);
  EXPECT_THROW(loss_oqe_ce(tokens, {0}), ShapeError);
}

TEST(Matching, DistillationIsMeanAbsoluteError) {
  ag::Matrix e(1, 3);
  e << 0.5, -0.5, 1.0;
  Vector v(3);
  v << 0.0, 0.5, 1.0;
  EXPECT_NEAR(loss_kd(ag::constant(e), v).item(), (0.5 + 1.0 + 0.0) / 3.0, 1e-15);
  EXPECT_THROW(loss_kd(ag::constant(e), Vector::Zero(2)), ShapeError);
}

// ---- evaluation

namespace {

ScoredPair sp(double s, Box h, Box o) { return {s, h, o}; }

}  // namespace

TEST(Evaluation, AveragePrecisionFrozenValues) {
  EXPECT_NEAR(average_precision({true, false, true}, 2), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(average_precision({true, true}, 2), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, 3), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({false, false}, 1), 0.0);
  EXPECT_THROW(average_precision({true}, 0), ConfigError);
  // Sorted by score first: the FP drops to the end.
  EXPECT_DOUBLE_EQ(average_precision({false, true, true}, {0.1, 0.9, 0.8}, 2), 1.0);
  // Eleven-point: recall 0.5 at precision 1, recall 1 at precision 2/3.
  EXPECT_NEAR(average_precision({true, false, true}, 2, ApInterpolation::kElevenPoint), (6 * 1.0 + 5 * 2.0 / 3.0) / 11,
              1e-15);
}

TEST(Evaluation, MatchingRules) {
  const Box h = Box::from_corners(0, 0, 0.4, 0.4), o = Box::from_corners(0.5, 0.5, 0.9, 0.9);
  const Box far = Box::from_corners(0.6, 0, 1, 0.4);
  const std::vector<PairBoxes> gts{{h, o}};
  // Duplicates of a matched ground truth are false positives.
  EXPECT_EQ(match_predictions({sp(0.9, h, o), sp(0.8, h, o)}, gts), (std::vector<bool>{true, false}));
  // Both boxes must exceed the threshold.
  EXPECT_EQ(match_predictions({sp(0.9, h, far)}, gts), (std::vector<bool>{false}));
  // Output follows descending score.
  EXPECT_EQ(match_predictions({sp(0.1, h, o), sp(0.8, far, far)}, gts), (std::vector<bool>{false, true}));
  // IoU exactly at the threshold is not a match.
  const Box shifted = Box::from_corners(0.2, 0, 0.6, 0.4);
  EXPECT_NEAR(iou(shifted, h), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(match_predictions({sp(1, shifted, o)}, gts, iou(shifted, h)), (std::vector<bool>{false}));
  EXPECT_EQ(match_predictions({sp(1, shifted, o)}, gts, 0.33), (std::vector<bool>{true}));
}

TEST(Evaluation, PerfectAndEmptyDetections) {
  const auto world_vocab = HOIVocabulary::synthetic(2, 2, 3, 0);
  std::vector<Annotation> test(2);
  for (int i = 0; i < 2; ++i) {
    test[static_cast<std::size_t>(i)].image_id = "img" + std::to_string(i);
    GroundTruthInstance g;
    g.human_box = Box::from_corners(0.1, 0.1, 0.3, 0.5);
    g.object_box = Box::from_corners(0.3 + 0.1 * i, 0.2, 0.5, 0.4);
    g.object_class = world_vocab.object_of(i);
    g.verb_ids = {world_vocab.verb_of(i)};
    test[static_cast<std::size_t>(i)].instances = {g};
  }
  std::vector<ImageDetections> dets(2);
  for (int i = 0; i < 2; ++i) {
    const auto& g = test[static_cast<std::size_t>(i)].instances[0];
    dets[static_cast<std::size_t>(i)].image_id = test[static_cast<std::size_t>(i)].image_id;
    FlatTriplet t;
    t.hoi_id = i;
    t.verb_id = g.verb_ids[0];
    t.object_id = g.object_class;
    t.score = 0.9;
    t.human_box = g.human_box;
    t.object_box = g.object_box;
    dets[static_cast<std::size_t>(i)].triplets = {t};
  }
  const std::vector<int> counts{20, 3, 0};
  const auto r = evaluate(test, dets, world_vocab, counts, EvalSetting::kDefault);
  EXPECT_DOUBLE_EQ(r.map_full, 1.0);
  EXPECT_EQ(r.categories_evaluated, 2);
  EXPECT_TRUE(std::isnan(r.per_category_ap[2]));
  EXPECT_TRUE(r.rare[1]);
  EXPECT_FALSE(r.rare[0]);
  EXPECT_DOUBLE_EQ(r.map_rare, 1.0);
  EXPECT_DOUBLE_EQ(r.map_nonrare, 1.0);

  std::vector<ImageDetections> none(2);
  none[0].image_id = "img0";
  none[1].image_id = "img1";
  EXPECT_DOUBLE_EQ(evaluate(test, none, world_vocab, counts, EvalSetting::kDefault).map_full, 0.0);
  EXPECT_DOUBLE_EQ(evaluate(test, {}, world_vocab, counts, EvalSetting::kKnownObject).map_full, 0.0);
}
