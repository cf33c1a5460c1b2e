#pragma once

// Run configuration. Every struct round-trips through JSON; unknown keys are
// rejected so a typo never silently falls back to a default.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dqen {

enum class InteractionQueryMode { kMeanOfThree, kPairMeanPlusSemantic };
enum class OqeSelection { kMaxLogit, kSoftmaxMax };
enum class AttentionWeightShape { kVector, kMatrix };
enum class WordInit { kOurs, kRandom, kClipFrozen };
enum class TrainingFreeNorm { kSoftmax, kMinMax };
enum class ScoreCombine { kAsPrinted, kProduct };
enum class ClassLoss { kFocal, kBce };
enum class ApInterpolation { kAllPoint, kElevenPoint };

struct ModelConfig {
  int num_queries = 64;
  int channels = 256;
  int encoder_layers = 6;
  int instance_decoder_layers = 3;
  int interaction_decoder_layers = 3;
  int num_heads = 8;
  int ffn_dim = 2048;
  int embed_dim = 512;
  int word_dim = 512;
  int num_objects = 80;
  int num_verbs = 117;
  int num_hoi = 600;
  int k_candidates = 16;
  int training_free_r = 10;
  int patch_stride = 8;
  int image_channels = 3;
  double alpha = 0.5;
  double lambda_box = 2.5;
  double lambda_giou = 1.0;
  double lambda_obj = 1.0;
  double lambda_inter = 1.0;
  double lambda_kd = 20.0;
  double nms_iou = 0.5;
  int k_out = 100;
  std::uint64_t seed = 0;

  bool use_oqe = true;
  bool use_iqe = true;
  bool use_apu = true;
  bool use_training_free = true;
  // Gradient truncation on the token classifier input.
  bool oqe_detach = true;
  // Selected features are scaled by the sigmoid of their selection score so
  // HOI losses reach the token classifier.
  bool oqe_score_gate = true;
  InteractionQueryMode interaction_query_mode = InteractionQueryMode::kMeanOfThree;
  OqeSelection oqe_selection = OqeSelection::kMaxLogit;
  AttentionWeightShape attention_weight_shape = AttentionWeightShape::kVector;
  WordInit word_init = WordInit::kOurs;
  TrainingFreeNorm training_free_norm = TrainingFreeNorm::kSoftmax;
  ScoreCombine score_combine = ScoreCombine::kAsPrinted;
  ClassLoss class_loss = ClassLoss::kFocal;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  bool aux_loss = true;
  bool per_layer_matching = false;
  double background_weight = 0.1;
  double query_init_std = 0.02;

  void validate() const;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  // Fraction of steps after which the learning rate drops by lr_drop_factor.
  double lr_drop_fraction = 2.0 / 3.0;
  double lr_drop_factor = 0.1;
  double grad_clip = 0.1;
  int warmup_steps = 0;
  int log_every = 10;
  std::uint64_t seed = 0;
  // Zero-shot restriction of training-time text labels; empty means all.
  std::vector<int> seen_hoi_ids;

  void validate() const;
};

struct SyntheticWorldConfig {
  int num_images = 200;
  int num_test_images = 0;
  int num_verbs = 6;
  int num_objects = 10;
  int compositions = 20;
  int max_pairs_per_image = 2;
  int image_size = 64;
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProviderConfig {
  std::string kind = "mock";
  int dim = 512;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalConfig {
  int rare_threshold = 10;
  double iou_threshold = 0.5;
  ApInterpolation ap_mode = ApInterpolation::kAllPoint;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticWorldConfig world;
  ProviderConfig provider;
  EvalConfig eval;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SyntheticWorldConfig& c);
nlohmann::json to_json(const ProviderConfig& c);
nlohmann::json to_json(const EvalConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Start from the defaults and overwrite the keys present in j.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
SyntheticWorldConfig world_config_from_json(const nlohmann::json& j);
ProviderConfig provider_config_from_json(const nlohmann::json& j);
EvalConfig eval_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

// Apply "section.key=value" overrides; value is parsed as JSON when possible
// and as a plain string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);
RunConfig resolve_run_config(const std::filesystem::path* config_path,
                             const std::vector<std::string>& overrides);

}  // namespace dqen
