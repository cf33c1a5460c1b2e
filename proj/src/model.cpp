#include "dqen/model.hpp"

#include "dqen/errors.hpp"

#include <cmath>
#include <numbers>

namespace dqen {

ag::Matrix sinusoidal_position_encoding(int height, int width, int channels) {
  if (channels % 4 != 0) throw ShapeError("positional encoding needs channels divisible by 4");
  const int half = channels / 2;
  ag::Matrix pe(height * width, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const ag::Index row = y * width + x;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        // Positions are scaled to (0, 2 pi] so small grids still span a full period.
        const double py = (y + 1.0) / height * 2.0 * std::numbers::pi * freq;
        const double px = (x + 1.0) / width * 2.0 * std::numbers::pi * freq;
        pe(row, 2 * i) = std::sin(py);
        pe(row, 2 * i + 1) = std::cos(py);
        pe(row, half + 2 * i) = std::sin(px);
        pe(row, half + 2 * i + 1) = std::cos(px);
      }
    }
  }
  return pe;
}

ag::Matrix patchify(const Image& image, int stride) {
  if (stride <= 0 || image.width % stride != 0 || image.height % stride != 0) {
    throw ShapeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " is not divisible by patch stride " + std::to_string(stride));
  }
  const int gh = image.height / stride;
  const int gw = image.width / stride;
  const int c = image.channels;
  ag::Matrix p(gh * gw, stride * stride * c);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      const ag::Index row = py * gw + px;
      ag::Index col = 0;
      for (int dy = 0; dy < stride; ++dy) {
        for (int dx = 0; dx < stride; ++dx) {
          for (int ch = 0; ch < c; ++ch) {
            p(row, col++) = (image.at(py * stride + dy, px * stride + dx, ch) / 255.0 - 0.5) / 0.25;
          }
        }
      }
    }
  }
  return p;
}

QueryBundle build_interaction_queries(const Var& v_human_last, const Var& v_object_last, const Var& q_i,
                                      InteractionQueryMode mode) {
  if (v_human_last.rows() != v_object_last.rows() || v_human_last.cols() != v_object_last.cols()) {
    throw ShapeError("human and object streams differ in shape");
  }
  QueryBundle q;
  q.q_human = v_human_last;
  q.q_object = v_object_last;
  const ag::Index n = v_human_last.rows();
  const Var pair_sum = ag::add(v_human_last, v_object_last);
  if (!q_i.defined()) {
    q.q_repeat = ag::constant(ag::Matrix::Zero(n, v_human_last.cols()));
    q.q_inter = ag::scale(pair_sum, 0.5);
    return q;
  }
  if (q_i.rows() != 1 || q_i.cols() != v_human_last.cols()) throw ShapeError("q_i must be (1, C')");
  q.q_repeat = ag::repeat_rows(q_i, n);
  q.q_inter = mode == InteractionQueryMode::kMeanOfThree ? ag::scale(ag::add(pair_sum, q.q_repeat), 1.0 / 3.0)
                                                         : ag::add(ag::scale(pair_sum, 0.5), q.q_repeat);
  return q;
}

Var apply_skip(const Var& v_inter, const Var& q_repeat) { return ag::add(v_inter, q_repeat); }

DqenModel::DqenModel(ModelConfig cfg, HOIVocabulary vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (cfg_.num_hoi != vocab_.num_hoi() || cfg_.num_verbs != vocab_.num_verbs() ||
      cfg_.num_objects != vocab_.num_objects()) {
    throw ConfigError("model sizes do not match the vocabulary (" + std::to_string(vocab_.num_verbs()) + " verbs, " +
                      std::to_string(vocab_.num_objects()) + " objects, " + std::to_string(vocab_.num_hoi()) +
                      " compositions)");
  }
  nn::Rng rng(cfg_.seed);
  const int c = cfg_.channels;
  const int patch_dim = cfg_.patch_stride * cfg_.patch_stride * cfg_.image_channels;
  patch_embed_ = nn::Linear::create(store_, "backbone.patch", patch_dim, c, rng);
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    encoder_.push_back(
        nn::EncoderLayer::create(store_, "encoder." + std::to_string(i), c, cfg_.num_heads, cfg_.ffn_dim, rng));
  }
  const ag::Matrix q0 = nn::gaussian(rng, cfg_.num_queries, c, cfg_.query_init_std);
  q_human_ = store_.add("query.human", q0);
  q_object_ = store_.add("query.object", q0);
  oqe_classifier_ = nn::Linear::create(store_, "oqe.classifier", c, cfg_.num_objects + 1, rng);
  for (int i = 0; i < cfg_.instance_decoder_layers; ++i) {
    instance_decoder_.push_back(nn::DecoderLayer::create(store_, "instance_decoder." + std::to_string(i), c,
                                                         cfg_.num_heads, cfg_.ffn_dim, rng));
  }
  for (int i = 0; i < cfg_.interaction_decoder_layers; ++i) {
    interaction_decoder_.push_back(nn::DecoderLayer::create(store_, "interaction_decoder." + std::to_string(i), c,
                                                            cfg_.num_heads, cfg_.ffn_dim, rng));
  }
  isf_ = IsfModule::create(store_, "isf", vocab_, cfg_.word_dim, c, cfg_.k_candidates, cfg_.attention_weight_shape,
                           rng);
  heads_ = PredictionHeads::create(store_, "heads", cfg_, rng);
  kd_proj_ = nn::Linear::create(store_, "kd.proj", c, cfg_.embed_dim, rng);
}

void DqenModel::initialize_word_tables(const EmbeddingProvider* provider) {
  if (provider != nullptr && provider->dim() != cfg_.embed_dim) {
    throw ConfigError("provider dimension " + std::to_string(provider->dim()) + " differs from embed_dim " +
                      std::to_string(cfg_.embed_dim));
  }
  dqen::initialize_word_tables(isf_, store_, "isf", vocab_, provider, cfg_.word_init, cfg_.seed + 17);
}

FeatureMap DqenModel::extract_features(const Image& image) const {
  if (image.channels != cfg_.image_channels) {
    throw ShapeError("image has " + std::to_string(image.channels) + " channels, model expects " +
                     std::to_string(cfg_.image_channels));
  }
  FeatureMap fm;
  fm.height = grid_height(image);
  fm.width = grid_width(image);
  fm.tokens = patch_embed_(ag::constant(patchify(image, cfg_.patch_stride)));
  fm.pos = sinusoidal_position_encoding(fm.height, fm.width, cfg_.channels);
  return fm;
}

EncodedFeatures DqenModel::encode(const FeatureMap& fm) const {
  if (!fm.tokens.value().allFinite()) throw NumericError("non-finite values in the encoder input");
  if (fm.pos.rows() != fm.tokens.rows() || fm.pos.cols() != fm.tokens.cols()) {
    throw ShapeError("positional encoding does not match the token shape");
  }
  const Var pos = ag::constant(fm.pos);
  Var x = fm.tokens;
  for (const auto& layer : encoder_) x = layer(x, pos);
  return {x};
}

std::pair<std::vector<Var>, std::vector<Var>> DqenModel::instance_decode(const EncodedFeatures& enc,
                                                                         const ag::Matrix& memory_pos,
                                                                         const Var& q_human, const Var& q_object,
                                                                         std::vector<nn::AttentionTrace>* traces) const {
  if (q_human.rows() != q_object.rows() || q_human.cols() != q_object.cols()) {
    throw ShapeError("human and object query counts differ");
  }
  const ag::Index n = q_human.rows();
  const Var queries = ag::concat_rows({q_human, q_object});
  const Var mem_pos = ag::constant(memory_pos);
  Var t = queries;
  std::vector<Var> vh, vo;
  if (traces) traces->assign(instance_decoder_.size(), {});
  for (std::size_t l = 0; l < instance_decoder_.size(); ++l) {
    t = instance_decoder_[l](t, queries, enc.tokens, mem_pos, traces ? &(*traces)[l] : nullptr);
    vh.push_back(ag::slice_rows(t, 0, n));
    vo.push_back(ag::slice_rows(t, n, n));
  }
  return {vh, vo};
}

std::vector<Var> DqenModel::interaction_decode(const EncodedFeatures& enc, const ag::Matrix& memory_pos,
                                               const Var& q_inter, std::vector<nn::AttentionTrace>* traces) const {
  const Var mem_pos = ag::constant(memory_pos);
  Var t = q_inter;
  std::vector<Var> out;
  if (traces) traces->assign(interaction_decoder_.size(), {});
  for (std::size_t l = 0; l < interaction_decoder_.size(); ++l) {
    t = interaction_decoder_[l](t, q_inter, enc.tokens, mem_pos, traces ? &(*traces)[l] : nullptr);
    out.push_back(t);
  }
  return out;
}

Var DqenModel::kd_projection(const Var& v_inter_last) const { return kd_proj_(ag::mean_rows(v_inter_last)); }

ForwardOutputs DqenModel::forward(const Image& image, const SemanticContext& ctx, const ForwardOptions& options) const {
  ForwardOutputs out;
  out.features = extract_features(image);
  out.encoded = encode(out.features);

  out.token_scores = score_tokens(oqe_classifier_, out.encoded.tokens, cfg_.oqe_detach);
  Var q_object = q_object_;
  if (cfg_.use_oqe) {
    out.selected = select_top_n(out.token_scores, out.encoded.tokens, cfg_.num_queries, cfg_.oqe_selection,
                                cfg_.oqe_score_gate);
    q_object = enhance_object_queries(q_object_, out.selected);
  }

  auto* inst_traces = options.record_attention ? &out.instance_cross : nullptr;
  auto [vh, vo] = instance_decode(out.encoded, out.features.pos, q_human_, q_object, inst_traces);

  if (cfg_.use_iqe) {
    if (ctx.m_sim.size() != vocab_.num_hoi()) throw ShapeError("similarity vector does not match the vocabulary");
    out.candidates = select_candidates(ctx.m_sim, cfg_.k_candidates, options.candidate_mask);
    out.q_i = isf_forward(out.candidates.hoi_ids, isf_.tables, isf_.params, vocab_);
  }
  out.queries = build_interaction_queries(vh.back(), vo.back(), out.q_i, cfg_.interaction_query_mode);
  out.queries.q_human = q_human_;
  out.queries.q_object = q_object;

  auto* inter_traces = options.record_attention ? &out.interaction_cross : nullptr;
  const auto vi = interaction_decode(out.encoded, out.features.pos, out.queries.q_inter, inter_traces);
  out.decoder = {vh, vo, vi};

  const std::size_t layers = std::max(vh.size(), vi.size());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t li = std::min(l, vh.size() - 1);
    const std::size_t la = std::min(l, vi.size() - 1);
    const Var fused = apply_skip(vi[la], out.queries.q_repeat);
    out.layers.push_back(predict_layer(heads_, vh[li], vo[li], fused, cfg_.use_apu));
  }
  out.kd_embedding = kd_projection(vi.back());
  return out;
}

std::vector<TripletPrediction> DqenModel::triplet_predictions(const ForwardOutputs& out,
                                                               const SemanticContext& ctx) const {
  const LayerPredictions& last = out.layers.back();
  const ag::Matrix s_o = predict_object_scores(last.object_logits.value());
  const ag::Matrix s_inter = predict_interaction(last.inter_logits.value());
  const ag::Matrix s_verb = cfg_.use_apu ? predict_verbs(last.verb_logits.value())
                                         : ag::Matrix::Zero(s_inter.rows(), cfg_.num_verbs);
  Vector s_tf = Vector::Zero(cfg_.num_hoi);
  if (cfg_.use_training_free) s_tf = training_free_scores(ctx.m_sim, cfg_.training_free_r, cfg_.training_free_norm);
  const double alpha = cfg_.use_apu ? cfg_.alpha : 0.0;

  std::vector<TripletPrediction> preds;
  for (ag::Index q = 0; q < s_o.rows(); ++q) {
    TripletPrediction p;
    p.query_index = static_cast<int>(q);
    const auto hb = last.human_boxes.value().row(q);
    const auto ob = last.object_boxes.value().row(q);
    p.human_box = {hb(0), hb(1), hb(2), hb(3)};
    p.object_box = {ob(0), ob(1), ob(2), ob(3)};
    p.object_scores = s_o.row(q).transpose();
    p.interaction_scores = s_inter.row(q).transpose();
    p.verb_scores = s_verb.row(q).transpose();
    p.hoi_scores = combine_hoi(p.interaction_scores, p.verb_scores, alpha, vocab_);
    p.final_scores = final_scores(p.hoi_scores, p.object_scores, s_tf, vocab_, cfg_.score_combine);
    preds.push_back(std::move(p));
  }
  return preds;
}

ImageDetections DqenModel::detect(const Image& image, const SemanticContext& ctx, const std::string& image_id) const {
  ag::NoGradGuard no_grad;
  const ForwardOutputs out = forward(image, ctx);
  const auto preds = triplet_predictions(out, ctx);
  ImageDetections d;
  d.image_id = image_id;
  d.triplets = top_k_triplets(preds, cfg_.k_out, cfg_.nms_iou, vocab_);
  for (const auto& p : preds) {
    Eigen::Index best = 0;
    p.object_scores.maxCoeff(&best);
    d.objects.push_back({static_cast<int>(best), p.object_scores(best), p.object_box});
  }
  return d;
}

std::vector<nn::NamedParam> DqenModel::encoder_params() const {
  auto out = store_.with_prefix("backbone.");
  for (auto& p : store_.with_prefix("encoder.")) out.push_back(p);
  return out;
}

}  // namespace dqen
