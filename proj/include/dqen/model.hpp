#pragma once

// Single encoder, instance decoder and interaction decoder, with object query
// enhancement, interaction semantic fusion and the auxiliary verb head.

#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/heads.hpp"
#include "dqen/isf.hpp"
#include "dqen/nn.hpp"
#include "dqen/oqe.hpp"
#include "dqen/semantics.hpp"
#include "dqen/vocabulary.hpp"

#include <vector>

namespace dqen {

struct FeatureMap {
  Var tokens;      // (H W, C'), V_f
  ag::Matrix pos;  // (H W, C'), P_e
  int height = 0;
  int width = 0;
};

struct EncodedFeatures {
  Var tokens;  // (H W, C'), V_e
};

struct QueryBundle {
  Var q_human;   // Q_h
  Var q_object;  // Q^_o
  Var q_inter;   // Q_inter
  Var q_repeat;  // Q_r, zeros when interaction query enhancement is off
};

struct DecoderOutputs {
  std::vector<Var> v_human;  // per layer, (N_q, C')
  std::vector<Var> v_object;
  std::vector<Var> v_inter;
};

// Fixed 2-D sinusoidal encoding: the first half of the channels encodes the
// row, the second half the column.
ag::Matrix sinusoidal_position_encoding(int height, int width, int channels);

// Non-overlapping stride x stride patches, one row per patch in row-major
// order, each row HWC-flattened with pixels mapped to (x / 255 - 0.5) / 0.25.
ag::Matrix patchify(const Image& image, int stride);

// mean3: (V_h + V_o + Q_r) / 3; mean2_plus: (V_h + V_o) / 2 + Q_r. With q_i
// undefined the semantic term is dropped and Q_inter = (V_h + V_o) / 2.
QueryBundle build_interaction_queries(const Var& v_human_last, const Var& v_object_last, const Var& q_i,
                                      InteractionQueryMode mode);

// v_inter + q_repeat
Var apply_skip(const Var& v_inter, const Var& q_repeat);

struct ForwardOptions {
  const std::vector<bool>* candidate_mask = nullptr;
  bool record_attention = false;
};

struct ForwardOutputs {
  FeatureMap features;
  EncodedFeatures encoded;
  TokenObjectScores token_scores;
  SelectedFeatures selected;  // empty unless object query enhancement is on
  CandidateSet candidates;
  Var q_i;  // (1, C'), undefined unless interaction query enhancement is on
  QueryBundle queries;
  DecoderOutputs decoder;
  std::vector<LayerPredictions> layers;
  Var kd_embedding;  // (1, D)
  std::vector<nn::AttentionTrace> instance_cross;
  std::vector<nn::AttentionTrace> interaction_cross;
};

class DqenModel {
 public:
  DqenModel(ModelConfig cfg, HOIVocabulary vocab);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const HOIVocabulary& vocabulary() const { return vocab_; }
  [[nodiscard]] nn::ParamStore& params() { return store_; }
  [[nodiscard]] const nn::ParamStore& params() const { return store_; }

  void initialize_word_tables(const EmbeddingProvider* provider);

  [[nodiscard]] FeatureMap extract_features(const Image& image) const;
  [[nodiscard]] EncodedFeatures encode(const FeatureMap& fm) const;
  [[nodiscard]] std::pair<std::vector<Var>, std::vector<Var>> instance_decode(
      const EncodedFeatures& enc, const ag::Matrix& memory_pos, const Var& q_human, const Var& q_object,
      std::vector<nn::AttentionTrace>* traces = nullptr) const;
  [[nodiscard]] std::vector<Var> interaction_decode(const EncodedFeatures& enc, const ag::Matrix& memory_pos,
                                                    const Var& q_inter,
                                                    std::vector<nn::AttentionTrace>* traces = nullptr) const;
  [[nodiscard]] Var kd_projection(const Var& v_inter_last) const;

  [[nodiscard]] ForwardOutputs forward(const Image& image, const SemanticContext& ctx,
                                       const ForwardOptions& options = {}) const;

  // Final-layer scores per query using the similarity vector for s_tf.
  [[nodiscard]] std::vector<TripletPrediction> triplet_predictions(const ForwardOutputs& out,
                                                                   const SemanticContext& ctx) const;
  [[nodiscard]] ImageDetections detect(const Image& image, const SemanticContext& ctx,
                                       const std::string& image_id) const;

  // Encoder and patch-embedding parameters.
  [[nodiscard]] std::vector<nn::NamedParam> encoder_params() const;

  [[nodiscard]] int grid_height(const Image& image) const { return image.height / cfg_.patch_stride; }
  [[nodiscard]] int grid_width(const Image& image) const { return image.width / cfg_.patch_stride; }

 private:
  ModelConfig cfg_;
  HOIVocabulary vocab_;
  nn::ParamStore store_;
  nn::Linear patch_embed_;
  std::vector<nn::EncoderLayer> encoder_;
  Var q_human_;
  Var q_object_;
  nn::Linear oqe_classifier_;
  std::vector<nn::DecoderLayer> instance_decoder_;
  std::vector<nn::DecoderLayer> interaction_decoder_;
  IsfModule isf_;
  PredictionHeads heads_;
  nn::Linear kd_proj_;
};

}  // namespace dqen
