#include "dqen/errors.hpp"
#include "dqen/heads.hpp"
#include "dqen/isf.hpp"
#include "dqen/oqe.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dqen;
using dqen::testing::gradcheck;
using dqen::testing::random_matrix;

// ---- object query enhancement

TEST(Oqe, SelectsHighestForegroundTokens) {
  // One foreground class plus background; the background logit is ignored.
  ag::Matrix logits(4, 2);
  logits << 0.1, 5.0, 0.9, 9.0, 0.5, -1.0, 0.3, 0.0;
  const Var tokens = ag::constant(ag::Matrix::Identity(4, 4));
  TokenObjectScores s{ag::constant(logits), true};
  const auto sel = select_top_n(s, tokens, 2, OqeSelection::kMaxLogit, false);
  EXPECT_EQ(sel.indices, (std::vector<int>{1, 2}));
  EXPECT_EQ(sel.scores, (std::vector<double>{0.9, 0.5}));
  EXPECT_TRUE(sel.features.value().row(0).isApprox(ag::Matrix::Identity(4, 4).row(1)));
  EXPECT_THROW(select_top_n(s, tokens, 5), ShapeError);

  const auto gated = select_top_n(s, tokens, 2, OqeSelection::kMaxLogit, true);
  EXPECT_NEAR(gated.features.value()(0, 1), 1.0 / (1.0 + std::exp(-0.9)), 1e-15);
}

TEST(Oqe, ZeroClassifierGivesUniformLogits) {
  nn::ParamStore store;
  nn::Rng rng(0);
  auto cls = nn::Linear::create(store, "c", 6, 4, rng);
  cls.set_zero();
  std::mt19937_64 r(1);
  const Var tokens = ag::parameter(random_matrix(r, 5, 6));
  const auto s = score_tokens(cls, tokens, true);
  EXPECT_TRUE(s.detached_input);
  EXPECT_TRUE((s.logits.value().array() == 0.0).all());
  // Equal scores keep the lower token index first.
  const auto sel = select_top_n(s, tokens, 3, OqeSelection::kSoftmaxMax, false);
  EXPECT_EQ(sel.indices, (std::vector<int>{0, 1, 2}));
  EXPECT_NEAR(sel.scores[0], 0.25, 1e-15);
}

TEST(Oqe, DetachedClassifierInputStopsGradient) {
  nn::ParamStore store;
  nn::Rng rng(0);
  auto cls = nn::Linear::create(store, "c", 3, 3, rng);
  std::mt19937_64 r(2);
  auto tokens = ag::parameter(random_matrix(r, 4, 3));
  ag::backward(ag::sum_all(score_tokens(cls, tokens, true).logits));
  EXPECT_FALSE(tokens.has_grad() && tokens.grad().norm() > 0);
  ag::backward(ag::sum_all(score_tokens(cls, tokens, false).logits));
  EXPECT_GT(tokens.grad().norm(), 0.0);
}

TEST(Oqe, NestedBoxesTakeTheSmallest) {
  GroundTruthInstance big, small;
  big.object_box = Box::from_corners(0.0, 0.0, 1.0, 1.0);
  big.object_class = 0;
  small.object_box = Box::from_corners(0.0, 0.0, 0.5, 0.5);
  small.object_class = 2;
  const auto t = oqe_classifier_targets({big, small}, 2, 2, 3);
  EXPECT_EQ(t, (std::vector<int>{2, 0, 0, 0}));
  EXPECT_EQ(oqe_classifier_targets({}, 2, 3, 3), (std::vector<int>(6, 3)));

  GroundTruthInstance off;
  off.object_box = Box::from_corners(0.6, 0.6, 0.9, 0.9);
  off.object_class = 1;
  EXPECT_EQ(oqe_classifier_targets({off}, 2, 2, 3), (std::vector<int>{3, 3, 3, 1}));
}

// ---- interaction semantic fusion

namespace {

struct IsfFixture {
  HOIVocabulary vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  nn::ParamStore store;
  IsfModule isf;

  explicit IsfFixture(AttentionWeightShape shape = AttentionWeightShape::kVector, int k = 3) {
    nn::Rng rng(7);
    isf = IsfModule::create(store, "isf", vocab, 4, 6, k, shape, rng);
    std::mt19937_64 r(8);
    for (auto p : store.params()) p.var.mutable_value() = random_matrix(r, p.var.rows(), p.var.cols(), 0.5);
  }
};

ag::Matrix loop_matmul_nt(const ag::Matrix& a, const ag::Matrix& b) {
  ag::Matrix out(a.rows(), b.rows());
  for (ag::Index i = 0; i < a.rows(); ++i) {
    for (ag::Index j = 0; j < b.rows(); ++j) {
      double s = 0;
      for (ag::Index c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
      out(i, j) = s;
    }
  }
  return out;
}

}  // namespace

TEST(Isf, EmbedCandidatesGathersTableRows) {
  IsfFixture f;
  const std::vector<int> ids{4, 0, 2};
  const auto e = embed_candidates(ids, f.isf.tables, f.vocab);
  for (int k = 0; k < 3; ++k) {
    const int id = ids[static_cast<std::size_t>(k)];
    EXPECT_EQ(e.t_verb.value().row(k), f.isf.tables.verb_table.value().row(f.vocab.verb_of(id)));
    EXPECT_EQ(e.t_obj.value().row(k), f.isf.tables.object_table.value().row(f.vocab.object_of(id)));
    EXPECT_EQ(e.t_hoi.value().row(k), f.isf.tables.hoi_table.value().row(id));
  }
  EXPECT_THROW(embed_candidates({}, f.isf.tables, f.vocab), ShapeError);
  EXPECT_THROW(embed_candidates({9}, f.isf.tables, f.vocab), ConfigError);
}

TEST(Isf, StagesMatchLoopOracles) {
  IsfFixture f;
  IsfTrace tr;
  const std::vector<int> ids{1, 3, 4};
  const Var out = isf_forward(ids, f.isf.tables, f.isf.params, f.vocab, &tr);
  const ag::Matrix& vo = tr.t_vo.value();
  const ag::Matrix& hh = tr.t_hoi_hat.value();
  const ag::Matrix& wa = f.isf.params.w_a.value();
  ASSERT_EQ(vo.rows(), 3);
  ASSERT_EQ(vo.cols(), 4);

  ag::Matrix weighted = vo;
  for (ag::Index i = 0; i < 3; ++i) {
    for (ag::Index c = 0; c < 4; ++c) weighted(i, c) *= wa(0, c);
  }
  const ag::Matrix c = loop_matmul_nt(weighted, hh);
  EXPECT_LT((c - tr.correlation.value()).cwiseAbs().maxCoeff(), 1e-14);

  ag::Matrix vo_hat = ag::Matrix::Zero(3, 4);
  for (ag::Index i = 0; i < 3; ++i) {
    double z = 0;
    for (ag::Index j = 0; j < 3; ++j) z += std::exp(c(i, j));
    for (ag::Index j = 0; j < 3; ++j) {
      for (ag::Index d = 0; d < 4; ++d) vo_hat(i, d) += std::exp(c(i, j)) / z * vo(j, d);
    }
  }
  EXPECT_LT((vo_hat - tr.t_vo_hat.value()).cwiseAbs().maxCoeff(), 1e-13);

  const ag::Matrix fused = vo_hat.cwiseProduct(hh);
  EXPECT_LT((fused - tr.fused.value()).cwiseAbs().maxCoeff(), 1e-13);
  ASSERT_EQ(out.rows(), 1);
  ASSERT_EQ(out.cols(), 6);
  const Var expected = f.isf.params.mlp_out(ag::constant(fused.colwise().sum()));
  EXPECT_LT((expected.value() - out.value()).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Isf, FuseVoReadsConcatenation) {
  IsfFixture f;
  std::mt19937_64 r(3);
  const Var v = ag::constant(random_matrix(r, 2, 4));
  const Var o = ag::constant(random_matrix(r, 2, 4));
  ag::Matrix cat(2, 8);
  cat << v.value(), o.value();
  const Var expect = f.isf.params.mlp_vo(ag::constant(cat));
  EXPECT_TRUE(fuse_vo(v, o, f.isf.params).value().isApprox(expect.value()));
}

TEST(Isf, MatrixAttentionWeightShape) {
  IsfFixture f(AttentionWeightShape::kMatrix, 3);
  EXPECT_EQ(f.isf.params.w_a.rows(), 3);
  EXPECT_NO_THROW(isf_forward({0, 1, 2}, f.isf.tables, f.isf.params, f.vocab));
  EXPECT_THROW(isf_forward({0, 1}, f.isf.tables, f.isf.params, f.vocab), ShapeError);
}

TEST(Isf, ForwardGradcheck) {
  IsfFixture f;
  std::vector<Var> leaves;
  for (const auto& p : f.store.params()) leaves.push_back(p.var);
  EXPECT_LT(gradcheck([&] { return ag::sum_all(ag::square(isf_forward({2, 0, 4}, f.isf.tables, f.isf.params, f.vocab))); },
                      leaves, 1e-5),
            1e-4);
}

TEST(Isf, WordInitModes) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 5, 1);
  const auto provider = mock_provider(vocab, 0, 4, 0.1);
  {
    nn::ParamStore store;
    nn::Rng rng(0);
    auto isf = IsfModule::create(store, "isf", vocab, 4, 4, 2, AttentionWeightShape::kVector, rng);
    initialize_word_tables(isf, store, "isf", vocab, provider.get(), WordInit::kClipFrozen, 0);
    // D == C_k: the tables are the provider embeddings themselves.
    const ag::Matrix t = provider->text_embed(vocab.text_labels()).transpose();
    EXPECT_TRUE(isf.tables.hoi_table.value().isApprox(t));
    const ag::Matrix words = provider->text_embed(word_prompt_labels(vocab)).transpose();
    EXPECT_TRUE(isf.tables.verb_table.value().isApprox(words.topRows(3)));
    int frozen = 0;
    for (const auto& p : store.params()) frozen += p.frozen ? 1 : 0;
    EXPECT_EQ(frozen, 3);
  }
  {
    nn::ParamStore store;
    nn::Rng rng(0);
    auto isf = IsfModule::create(store, "isf", vocab, 4, 4, 2, AttentionWeightShape::kVector, rng);
    EXPECT_THROW(initialize_word_tables(isf, store, "isf", vocab, nullptr, WordInit::kOurs, 0), ConfigError);
    EXPECT_NO_THROW(initialize_word_tables(isf, store, "isf", vocab, nullptr, WordInit::kRandom, 0));
    for (const auto& p : store.params()) EXPECT_FALSE(p.frozen);
  }
}

// ---- heads and scoring

namespace {

HOIVocabulary abc_vocab() {
  // verbs {0,1}, objects {0,1}; hoi 0 = (0,0), 1 = (1,0), 2 = (1,1)
  return HOIVocabulary({{0, "hold", "holding"}, {1, "ride", "riding"}},
                       {{0, "apple"}, {1, "bike"}},
                       {{0, 0, 0}, {1, 1, 0}, {2, 1, 1}});
}

FlatTriplet trip(int hoi, double score, Box h, Box o) {
  FlatTriplet t;
  t.hoi_id = hoi;
  t.score = score;
  t.human_box = h;
  t.object_box = o;
  return t;
}

}  // namespace

TEST(Heads, ZeroWeightsGiveCenteredBoxesAndUniformObjects) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.num_objects = 4;
  cfg.num_hoi = 5;
  cfg.num_verbs = 3;
  nn::ParamStore store;
  nn::Rng rng(0);
  auto heads = PredictionHeads::create(store, "h", cfg, rng);
  heads.human_box.set_zero();
  heads.object_box.set_zero();
  heads.object_cls.set_zero();
  std::mt19937_64 r(1);
  const Var x = ag::constant(random_matrix(r, 3, 8));
  const auto p = predict_layer(heads, x, x, x, true);
  EXPECT_TRUE((p.human_boxes.value().array() == 0.5).all());
  EXPECT_TRUE((p.object_boxes.value().array() == 0.5).all());
  const ag::Matrix so = predict_object_scores(p.object_logits.value());
  ASSERT_EQ(so.cols(), 4);
  EXPECT_LT((so.array() - 0.2).abs().maxCoeff(), 1e-15);
  // Focal prior on the interaction bias.
  EXPECT_NEAR(heads.inter_cls.bias.value()(0, 0), -std::log(99.0), 1e-12);
  EXPECT_FALSE(predict_layer(heads, x, x, x, false).verb_logits.defined());
}

TEST(Heads, CombineAndFinalScores) {
  const auto v = abc_vocab();
  Vector s_inter(3), s_verb(2);
  s_inter << 0.5, 0.1, 0.3;
  s_verb << 0.2, 0.4;
  const Vector hoi = combine_hoi(s_inter, s_verb, 0.5, v);
  EXPECT_DOUBLE_EQ(hoi(0), 0.6);
  EXPECT_DOUBLE_EQ(hoi(1), 0.1 + 0.5 * 0.4);
  EXPECT_DOUBLE_EQ(hoi(2), 0.3 + 0.5 * 0.4);
  EXPECT_THROW(combine_hoi(s_inter, s_verb, -1.0, v), ConfigError);

  Vector s_o(2), s_tf(3);
  s_o << 0.7, 0.1;
  s_tf << 0.25, 0.0, 0.05;
  const Vector fin = final_scores(hoi, s_o, s_tf, v);
  EXPECT_NEAR(fin(0), 1.34, 1e-15);  // 0.6 + 0.49 + 0.25
  EXPECT_NEAR(fin(2), 0.5 + 0.01 + 0.05, 1e-15);
  const Vector prod = final_scores(hoi, s_o, s_tf, v, ScoreCombine::kProduct);
  EXPECT_NEAR(prod(0), 0.6 * 0.7 + 0.25, 1e-15);
  EXPECT_THROW(final_scores(hoi, s_tf, s_tf, v), ShapeError);
}

TEST(Heads, TripletNms) {
  const Box a = Box::from_corners(0, 0, 0.4, 0.4), b = Box::from_corners(0.5, 0.5, 0.9, 0.9);
  // Identical boxes and category: only the higher score survives.
  auto kept = triplet_nms({trip(1, 0.3, a, b), trip(1, 0.8, a, b)}, 0.5);
  ASSERT_EQ(kept.size(), 1U);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.8);
  // Different category, disjoint human box, or only one box overlapping: all kept.
  EXPECT_EQ(triplet_nms({trip(1, 0.3, a, b), trip(2, 0.8, a, b)}, 0.5).size(), 2U);
  EXPECT_EQ(triplet_nms({trip(1, 0.3, a, b), trip(1, 0.8, b, b)}, 0.5).size(), 2U);
  EXPECT_EQ(triplet_nms({trip(1, 0.3, a, a), trip(1, 0.8, a, b)}, 0.5).size(), 2U);
  // Equal scores keep input order.
  kept = triplet_nms({trip(0, 0.5, a, a), trip(2, 0.5, b, b)}, 0.5);
  EXPECT_EQ(kept[0].hoi_id, 0);
  EXPECT_THROW(triplet_nms({}, 0.0), ConfigError);
}

TEST(Heads, TopKFlattensQueryByCategory) {
  const auto v = abc_vocab();
  std::vector<TripletPrediction> preds(2);
  preds[0].final_scores = (Vector(3) << 0.1, 0.9, 0.4).finished();
  preds[1].final_scores = (Vector(3) << 0.8, 0.2, 0.3).finished();
  preds[0].human_box = Box::from_corners(0, 0, 0.2, 0.2);
  preds[1].human_box = Box::from_corners(0.5, 0.5, 0.9, 0.9);
  preds[0].object_box = preds[0].human_box;
  preds[1].object_box = preds[1].human_box;
  preds[0].query_index = 0;
  preds[1].query_index = 1;
  const auto top = top_k_triplets(preds, 3, 0.5, v);
  ASSERT_EQ(top.size(), 3U);
  EXPECT_EQ(top[0].hoi_id, 1);
  EXPECT_EQ(top[0].query_index, 0);
  EXPECT_EQ(top[0].verb_id, 1);
  EXPECT_EQ(top[0].object_id, 0);
  EXPECT_EQ(top[1].hoi_id, 0);
  EXPECT_EQ(top[1].query_index, 1);
  EXPECT_DOUBLE_EQ(top[2].score, 0.4);
  EXPECT_EQ(top_k_triplets(preds, 100, 0.5, v).size(), 6U);
}

TEST(Heads, DetectionsJsonRoundTrip) {
  ImageDetections d;
  d.image_id = "img";
  d.triplets = {trip(2, 0.75, Box{0.5, 0.5, 0.2, 0.3}, Box{0.3, 0.3, 0.1, 0.1})};
  d.triplets[0].verb_id = 1;
  d.triplets[0].object_id = 1;
  d.objects = {{1, 0.5, Box{0.3, 0.3, 0.1, 0.1}}};
  const auto back = image_detections_from_json(to_json(d));
  EXPECT_EQ(back.image_id, "img");
  ASSERT_EQ(back.triplets.size(), 1U);
  EXPECT_EQ(back.triplets[0].hoi_id, 2);
  EXPECT_DOUBLE_EQ(back.triplets[0].score, 0.75);
  EXPECT_EQ(back.triplets[0].human_box, d.triplets[0].human_box);
  ASSERT_EQ(back.objects.size(), 1U);
  EXPECT_EQ(back.objects[0].object_id, 1);
}
