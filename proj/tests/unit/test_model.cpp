#include "dqen/attention.hpp"
#include "dqen/checkpoint.hpp"
#include "dqen/errors.hpp"
#include "dqen/model.hpp"
#include "dqen/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace dqen;
using dqen::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Tiny {
  SyntheticWorld world;
  ModelConfig cfg;
  std::unique_ptr<EmbeddingProvider> provider;

  Tiny() {
    SyntheticWorldConfig w;
    w.num_images = 6;
    w.num_test_images = 2;
    w.num_verbs = 3;
    w.num_objects = 3;
    w.compositions = 5;
    w.image_size = 32;
    w.seed = 2;
    world = generate_synthetic_world(w);
    ModelConfig m;
    m.num_queries = 4;
    m.channels = 16;
    m.num_heads = 2;
    m.ffn_dim = 32;
    m.encoder_layers = 1;
    m.instance_decoder_layers = 2;
    m.interaction_decoder_layers = 2;
    m.embed_dim = m.word_dim = 16;
    m.k_candidates = 3;
    m.training_free_r = 2;
    m.k_out = 10;
    cfg = fit_model_to_vocabulary(m, world.vocabulary);
    provider = mock_provider(world.vocabulary, 0, 16, 0.3);
  }

  [[nodiscard]] DqenModel model() const {
    DqenModel m(cfg, world.vocabulary);
    m.initialize_word_tables(provider.get());
    return m;
  }

  [[nodiscard]] SemanticContext context(std::size_t i) const {
    const ag::Matrix t = provider->text_embed(world.vocabulary.text_labels());
    return semantic_context(*provider, make_image_ref(world.train.annotations[i], nullptr, world.vocabulary), t);
  }
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dqen_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Model, ForwardShapes) {
  const Tiny t;
  const DqenModel m = t.model();
  const auto out = m.forward(t.world.train.images[0], t.context(0));
  EXPECT_EQ(out.features.height, 4);
  EXPECT_EQ(out.features.width, 4);
  EXPECT_EQ(out.encoded.tokens.rows(), 16);
  EXPECT_EQ(out.token_scores.logits.cols(), 4);
  EXPECT_EQ(out.selected.indices.size(), 4U);
  EXPECT_EQ(out.candidates.hoi_ids.size(), 3U);
  EXPECT_EQ(out.q_i.rows(), 1);
  EXPECT_EQ(out.q_i.cols(), 16);
  ASSERT_EQ(out.layers.size(), 2U);
  for (const auto& l : out.layers) {
    EXPECT_EQ(l.human_boxes.rows(), 4);
    EXPECT_EQ(l.human_boxes.cols(), 4);
    EXPECT_EQ(l.object_logits.cols(), 4);
    EXPECT_EQ(l.inter_logits.cols(), 5);
    EXPECT_EQ(l.verb_logits.cols(), 3);
    EXPECT_TRUE((l.human_boxes.value().array() > 0).all() && (l.human_boxes.value().array() < 1).all());
  }
  EXPECT_EQ(out.kd_embedding.cols(), 16);

  const auto preds = m.triplet_predictions(out, t.context(0));
  ASSERT_EQ(preds.size(), 4U);
  EXPECT_EQ(preds[0].final_scores.size(), 5);
  const auto det = m.detect(t.world.train.images[0], t.context(0), "x");
  EXPECT_LE(det.triplets.size(), 10U);
  for (std::size_t i = 1; i < det.triplets.size(); ++i) EXPECT_GE(det.triplets[i - 1].score, det.triplets[i].score);
}

TEST(Model, AblationSwitchesChangeStructure) {
  Tiny t;
  t.cfg.use_oqe = false;
  t.cfg.use_iqe = false;
  t.cfg.use_apu = false;
  const DqenModel m = t.model();
  const auto out = m.forward(t.world.train.images[0], t.context(0));
  EXPECT_TRUE(out.selected.indices.empty());
  EXPECT_FALSE(out.q_i.defined());
  EXPECT_TRUE((out.queries.q_repeat.value().array() == 0).all());
  EXPECT_FALSE(out.layers.back().verb_logits.defined());
}

TEST(Model, InstanceDecoderIsPermutationEquivariant) {
  const Tiny t;
  const DqenModel m = t.model();
  const auto fm = m.extract_features(t.world.train.images[1]);
  const auto enc = m.encode(fm);
  std::mt19937_64 rng(3);
  const ag::Matrix qh = random_matrix(rng, 4, 16), qo = random_matrix(rng, 4, 16);
  const std::vector<int> perm{2, 0, 3, 1};
  ag::Matrix ph(4, 16), po(4, 16);
  for (int i = 0; i < 4; ++i) {
    ph.row(i) = qh.row(perm[static_cast<std::size_t>(i)]);
    po.row(i) = qo.row(perm[static_cast<std::size_t>(i)]);
  }
  const auto [vh, vo] = m.instance_decode(enc, fm.pos, ag::constant(qh), ag::constant(qo));
  const auto [wh, wo] = m.instance_decode(enc, fm.pos, ag::constant(ph), ag::constant(po));
  for (int i = 0; i < 4; ++i) {
    const int src = perm[static_cast<std::size_t>(i)];
    EXPECT_LT((wh.back().value().row(i) - vh.back().value().row(src)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((wo.back().value().row(i) - vo.back().value().row(src)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Model, ZeroResidualBranchesAreIdentity) {
  nn::ParamStore store;
  nn::Rng rng(1);
  auto enc = nn::EncoderLayer::create(store, "e", 8, 2, 16, rng);
  auto dec = nn::DecoderLayer::create(store, "d", 8, 2, 16, rng);
  enc.zero_residual_branches();
  dec.zero_residual_branches();
  std::mt19937_64 r(2);
  const Var x = ag::constant(random_matrix(r, 5, 8));
  const Var pos = ag::constant(random_matrix(r, 5, 8));
  const Var q = ag::constant(random_matrix(r, 3, 8));
  EXPECT_EQ(enc(x, pos).value(), x.value());
  EXPECT_EQ(dec(q, q, x, pos).value(), q.value());
}

TEST(Model, InteractionQueryModes) {
  ag::Matrix h(2, 2), o(2, 2);
  h << 1, 2, 3, 4;
  o << 5, 6, 7, 8;
  const Var vh = ag::constant(h), vo = ag::constant(o);
  // Without a semantic feature: pair mean.
  const auto none = build_interaction_queries(vh, vo, Var(), InteractionQueryMode::kMeanOfThree);
  EXPECT_EQ(none.q_inter.value(), ((h + o) / 2).eval());
  EXPECT_TRUE((none.q_repeat.value().array() == 0).all());
  // A zero semantic feature still counts as a third term.
  const Var zero = ag::constant(ag::Matrix::Zero(1, 2));
  const auto z = build_interaction_queries(vh, vo, zero, InteractionQueryMode::kMeanOfThree);
  EXPECT_LT((z.q_inter.value() - (h + o) / 3).cwiseAbs().maxCoeff(), 1e-15);

  ag::Matrix qi(1, 2);
  qi << 3, -3;
  const auto m3 = build_interaction_queries(vh, vo, ag::constant(qi), InteractionQueryMode::kMeanOfThree);
  EXPECT_NEAR(m3.q_inter.value()(0, 0), (1 + 5 + 3) / 3.0, 1e-15);
  EXPECT_NEAR(m3.q_inter.value()(1, 1), (4 + 8 - 3) / 3.0, 1e-15);
  EXPECT_EQ(m3.q_repeat.value().row(1), qi.row(0));
  const auto m2 = build_interaction_queries(vh, vo, ag::constant(qi), InteractionQueryMode::kPairMeanPlusSemantic);
  EXPECT_NEAR(m2.q_inter.value()(0, 1), (2 + 6) / 2.0 - 3, 1e-15);
  EXPECT_THROW(build_interaction_queries(vh, ag::constant(ag::Matrix::Zero(3, 2)), zero,
                                         InteractionQueryMode::kMeanOfThree),
               ShapeError);

  EXPECT_EQ(apply_skip(vh, m3.q_repeat).value().row(0), (h.row(0) + qi.row(0)).eval());
}

TEST(Model, PositionEncodingAndPatches) {
  const ag::Matrix pe = sinusoidal_position_encoding(2, 3, 8);
  EXPECT_EQ(pe.rows(), 6);
  EXPECT_EQ(pe.cols(), 8);
  // Tokens in the same row share the row half; tokens in the same column share the column half.
  EXPECT_EQ(pe.row(0).head(4), pe.row(2).head(4));
  EXPECT_EQ(pe.row(1).tail(4), pe.row(4).tail(4));
  EXPECT_NE(pe.row(0).head(4), pe.row(3).head(4));
  EXPECT_LE(pe.cwiseAbs().maxCoeff(), 1.0);

  Image img;
  img.width = img.height = 4;
  img.pixels.assign(48, 0);
  img.pixels[(1 * 4 + 3) * 3 + 2] = 255;  // y=1, x=3, blue
  const ag::Matrix p = patchify(img, 2);
  ASSERT_EQ(p.rows(), 4);
  ASSERT_EQ(p.cols(), 12);
  EXPECT_DOUBLE_EQ(p(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(p(1, (1 * 2 + 1) * 3 + 2), 2.0);
}

TEST(Checkpoint, RoundTripPreservesWeightsAndOutputs) {
  const Tiny t;
  const DqenModel m = t.model();
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", m, {{"steps", 3}});
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.extra["steps"], 3);
  EXPECT_EQ(to_json(loaded.model->config()), to_json(m.config()));
  EXPECT_EQ(loaded.model->vocabulary().to_json(), m.vocabulary().to_json());
  const auto& a = m.params().params();
  const auto& b = loaded.model->params().params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].frozen, b[i].frozen);
    const ag::Matrix f32 = a[i].var.value().cast<float>().cast<double>();
    EXPECT_EQ(f32, b[i].var.value()) << a[i].name;
  }

  // A second save of the loaded model is byte-identical.
  save_checkpoint(dir / "n.ckpt", *loaded.model, {{"steps", 3}});
  std::ifstream x(dir / "m.ckpt", std::ios::binary), y(dir / "n.ckpt", std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(x), {}, std::istreambuf_iterator<char>(y)));
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsBadMagicAndVersion) {
  const Tiny t;
  const fs::path dir = scratch("ckpt_bad");
  std::ofstream(dir / "junk.ckpt") << "definitely not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), FormatError);

  save_checkpoint(dir / "v.ckpt", t.model());
  {
    std::fstream f(dir / "v.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char v[4] = {99, 0, 0, 0};
    f.write(v, 4);
  }
  EXPECT_THROW(load_checkpoint(dir / "v.ckpt"), FormatError);

  save_checkpoint(dir / "t.ckpt", t.model());
  fs::resize_file(dir / "t.ckpt", fs::file_size(dir / "t.ckpt") - 4);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST(Training, LearningRateSchedule) {
  TrainConfig c;
  c.lr = 1.0;
  c.steps = 90;
  c.lr_drop_fraction = 2.0 / 3.0;
  c.lr_drop_factor = 0.1;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 59), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 60), 0.1);
  c.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(c, 4), 0.5);
  EXPECT_DOUBLE_EQ(learning_rate(c, 10), 1.0);
}

TEST(Training, AdamWSkipsFrozenAndUntouchedParams) {
  nn::ParamStore store;
  const Var a = store.add("a", ag::Matrix::Constant(1, 2, 1.0));
  const Var b = store.add("b", ag::Matrix::Constant(1, 2, 1.0), true);
  const Var c = store.add("c", ag::Matrix::Constant(1, 2, 1.0));
  ag::backward(ag::sum_all(ag::add(a, b)));
  AdamW opt(0.0);
  opt.step(store, 0.1);
  // First Adam step moves by lr * sign(g).
  EXPECT_NEAR(a.value()(0, 0), 0.9, 1e-7);
  EXPECT_EQ(b.value(), ag::Matrix::Constant(1, 2, 1.0));
  EXPECT_EQ(c.value(), ag::Matrix::Constant(1, 2, 1.0));
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(Training, GradientClipping) {
  nn::ParamStore store;
  const Var a = store.add("a", ag::Matrix::Zero(1, 2));
  ag::Matrix seed(1, 2);
  seed << 3.0, 4.0;
  ag::backward(ag::sum_all(ag::mul(a, ag::constant(seed))));
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  // The scale is max_norm / (norm + 1e-12).
  EXPECT_NEAR(a.grad().norm(), 1.0, 1e-12);
  EXPECT_NEAR(a.grad()(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(clip_grad_norm(store, 0.0), 1.0, 1e-12);
}

TEST(Training, ShortRunIsDeterministic) {
  const Tiny t;
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  auto run = [&] {
    DqenModel m = t.model();
    const auto data = prepare_split(t.world.train, *t.provider, m);
    return train(m, t.world.train, data, tc).log;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3U);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::isfinite(a[i].total));
    EXPECT_EQ(a[i].total, b[i].total);
    EXPECT_EQ(a[i].step, static_cast<int>(i) + 1);
  }

  DqenModel m = t.model();
  const auto data = prepare_split(t.world.train, *t.provider, m);
  int calls = 0;
  const auto stopped = train(m, t.world.train, data, tc, nullptr, [&](const TrainLogRecord&) { return ++calls < 2; });
  EXPECT_EQ(stopped.log.size(), 2U);
  const auto dets = run_inference(m, t.world.train, data.contexts);
  ASSERT_EQ(dets.size(), t.world.train.annotations.size());
  EXPECT_EQ(dets[3].image_id, t.world.train.annotations[3].image_id);
}

TEST(Attention, ExportMatchesRecomputedWeights) {
  const Tiny t;
  const DqenModel m = t.model();
  const fs::path dir = scratch("attn");
  const auto ex = export_attention_maps(m, t.world.train.images[0], t.context(0), dir, 1);
  // Two decoders of 2 layers, instance maps for both streams: (2 + 2 + 2) layers x 2 heads.
  EXPECT_EQ(ex.images.size(), 12U);
  nlohmann::json v;
  std::ifstream(ex.values) >> v;
  EXPECT_EQ(v["grid"], nlohmann::json::array({4, 4}));
  EXPECT_EQ(v["query_index"], 1);

  ForwardOptions opts;
  opts.record_attention = true;
  const auto out = m.forward(t.world.train.images[0], t.context(0), opts);
  for (const auto& map : v["maps"]) {
    const std::string dec = map["decoder"];
    const auto& traces = dec == "interaction" ? out.interaction_cross : out.instance_cross;
    const int row = dec == "instance_object" ? 4 + 1 : 1;
    const auto& head = traces[map["layer"].get<std::size_t>()].heads[map["head"].get<std::size_t>()];
    const auto w = map["weights"].get<std::vector<double>>();
    ASSERT_EQ(w.size(), 16U);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(w[k], head(row, static_cast<ag::Index>(k)), 1e-12);
    const auto bytes = fs::file_size(dir / map["file"].get<std::string>());
    EXPECT_EQ(bytes, std::string("P5\n4 4\n255\n").size() + 16);
  }
  EXPECT_THROW(export_attention_maps(m, t.world.train.images[0], t.context(0), dir, 9), ConfigError);
  fs::remove_all(dir);
}

TEST(Attention, UniformAttentionRendersConstantImage) {
  const Tiny t;
  DqenModel m = t.model();
  for (const char* p : {"interaction_decoder.0.cross_attn.q", "interaction_decoder.0.cross_attn.k"}) {
    for (const char* s : {".weight", ".bias"}) {
      Var v = m.params().get(std::string(p) + s);
      v.mutable_value().setZero();
    }
  }
  const fs::path dir = scratch("attn_uniform");
  export_attention_maps(m, t.world.train.images[0], t.context(0), dir, 0);
  std::ifstream in(dir / "interaction_l0_h0.pgm", std::ios::binary);
  std::string header;
  for (int i = 0; i < 3; ++i) std::getline(in, header);
  std::vector<unsigned char> px((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(px.size(), 16U);
  for (unsigned char c : px) EXPECT_EQ(c, 255);
  fs::remove_all(dir);
}
