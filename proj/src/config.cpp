#include "dqen/config.hpp"

#include "dqen/errors.hpp"

#include <fstream>
#include <set>

namespace dqen {

NLOHMANN_JSON_SERIALIZE_ENUM(InteractionQueryMode,
                             {{InteractionQueryMode::kMeanOfThree, "mean3"},
                              {InteractionQueryMode::kPairMeanPlusSemantic, "mean2_plus"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OqeSelection,
                             {{OqeSelection::kMaxLogit, "max_logit"}, {OqeSelection::kSoftmaxMax, "softmax_max"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AttentionWeightShape,
                             {{AttentionWeightShape::kVector, "vector"}, {AttentionWeightShape::kMatrix, "matrix"}})
NLOHMANN_JSON_SERIALIZE_ENUM(WordInit, {{WordInit::kOurs, "ours"},
                                        {WordInit::kRandom, "random"},
                                        {WordInit::kClipFrozen, "clip_frozen"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TrainingFreeNorm,
                             {{TrainingFreeNorm::kSoftmax, "softmax"}, {TrainingFreeNorm::kMinMax, "minmax"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ScoreCombine,
                             {{ScoreCombine::kAsPrinted, "as_printed"}, {ScoreCombine::kProduct, "product"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ClassLoss, {{ClassLoss::kFocal, "focal"}, {ClassLoss::kBce, "bce"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ApInterpolation,
                             {{ApInterpolation::kAllPoint, "all_point"}, {ApInterpolation::kElevenPoint, "eleven_point"}})

namespace {

using nlohmann::json;

// Serializer that writes every visited field.
struct Writer {
  json& out;
  template <typename T>
  void operator()(const char* key, const T& value) {
    out[key] = value;
  }
};

// Deserializer that reads the visited fields present in the input and
// remembers which keys it recognized.
struct Reader {
  const json& in;
  std::set<std::string>& known;
  const char* section;
  template <typename T>
  void operator()(const char* key, T& value) {
    known.insert(key);
    if (!in.contains(key)) return;
    try {
      T parsed = in.at(key).get<T>();
      if constexpr (std::is_enum_v<T>) {
        // nlohmann maps unknown strings to the first enumerator; reject them.
        if (json(parsed) != in.at(key)) {
          throw ConfigError(std::string(section) + "." + key + ": unknown value " + in.at(key).dump());
        }
      }
      value = parsed;
    } catch (const json::exception& e) {
      throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
  }
};

template <typename V>
void visit(ModelConfig& c, V&& v) {
  v("num_queries", c.num_queries);
  v("channels", c.channels);
  v("encoder_layers", c.encoder_layers);
  v("instance_decoder_layers", c.instance_decoder_layers);
  v("interaction_decoder_layers", c.interaction_decoder_layers);
  v("num_heads", c.num_heads);
  v("ffn_dim", c.ffn_dim);
  v("embed_dim", c.embed_dim);
  v("word_dim", c.word_dim);
  v("num_objects", c.num_objects);
  v("num_verbs", c.num_verbs);
  v("num_hoi", c.num_hoi);
  v("k_candidates", c.k_candidates);
  v("training_free_r", c.training_free_r);
  v("patch_stride", c.patch_stride);
  v("image_channels", c.image_channels);
  v("alpha", c.alpha);
  v("lambda_box", c.lambda_box);
  v("lambda_giou", c.lambda_giou);
  v("lambda_obj", c.lambda_obj);
  v("lambda_inter", c.lambda_inter);
  v("lambda_kd", c.lambda_kd);
  v("nms_iou", c.nms_iou);
  v("k_out", c.k_out);
  v("seed", c.seed);
  v("use_oqe", c.use_oqe);
  v("use_iqe", c.use_iqe);
  v("use_apu", c.use_apu);
  v("use_training_free", c.use_training_free);
  v("oqe_detach", c.oqe_detach);
  v("oqe_score_gate", c.oqe_score_gate);
  v("interaction_query_mode", c.interaction_query_mode);
  v("oqe_selection", c.oqe_selection);
  v("attention_weight_shape", c.attention_weight_shape);
  v("word_init", c.word_init);
  v("training_free_norm", c.training_free_norm);
  v("score_combine", c.score_combine);
  v("class_loss", c.class_loss);
  v("focal_alpha", c.focal_alpha);
  v("focal_gamma", c.focal_gamma);
  v("aux_loss", c.aux_loss);
  v("per_layer_matching", c.per_layer_matching);
  v("background_weight", c.background_weight);
  v("query_init_std", c.query_init_std);
}

template <typename V>
void visit(TrainConfig& c, V&& v) {
  v("steps", c.steps);
  v("batch_size", c.batch_size);
  v("lr", c.lr);
  v("weight_decay", c.weight_decay);
  v("lr_drop_fraction", c.lr_drop_fraction);
  v("lr_drop_factor", c.lr_drop_factor);
  v("grad_clip", c.grad_clip);
  v("warmup_steps", c.warmup_steps);
  v("log_every", c.log_every);
  v("seed", c.seed);
  v("seen_hoi_ids", c.seen_hoi_ids);
}

template <typename V>
void visit(SyntheticWorldConfig& c, V&& v) {
  v("num_images", c.num_images);
  v("num_test_images", c.num_test_images);
  v("num_verbs", c.num_verbs);
  v("num_objects", c.num_objects);
  v("compositions", c.compositions);
  v("max_pairs_per_image", c.max_pairs_per_image);
  v("image_size", c.image_size);
  v("noise", c.noise);
  v("seed", c.seed);
}

template <typename V>
void visit(ProviderConfig& c, V&& v) {
  v("kind", c.kind);
  v("dim", c.dim);
  v("noise", c.noise);
  v("seed", c.seed);
}

template <typename V>
void visit(EvalConfig& c, V&& v) {
  v("rare_threshold", c.rare_threshold);
  v("iou_threshold", c.iou_threshold);
  v("ap_mode", c.ap_mode);
}

template <typename C>
json write(const C& c) {
  json out = json::object();
  visit(const_cast<C&>(c), Writer{out});
  return out;
}

template <typename C>
C read(const json& j, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  C c;
  std::set<std::string> known;
  visit(c, Reader{j, known, section});
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(std::string("unknown config key: ") + section + "." + key);
  }
  return c;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void ModelConfig::validate() const {
  require(num_queries > 0 && channels > 0 && num_heads > 0 && ffn_dim > 0, "model sizes must be positive");
  require(encoder_layers >= 1 && instance_decoder_layers >= 1 && interaction_decoder_layers >= 1,
          "all layer counts must be at least 1");
  require(channels % num_heads == 0, "channels must be divisible by num_heads");
  require(channels % 4 == 0, "channels must be divisible by 4 for the 2-D positional encoding");
  require(embed_dim > 0 && word_dim > 0, "embedding widths must be positive");
  require(num_objects > 0 && num_verbs > 0 && num_hoi > 0, "vocabulary sizes must be positive");
  require(k_candidates >= 1 && k_candidates <= num_hoi, "k_candidates must be in [1, num_hoi]");
  require(training_free_r >= 1 && training_free_r <= num_hoi, "training_free_r must be in [1, num_hoi]");
  require(patch_stride >= 1 && image_channels >= 1, "patch_stride and image_channels must be positive");
  require(alpha >= 0.0, "alpha must be non-negative");
  require(lambda_box >= 0 && lambda_giou >= 0 && lambda_obj >= 0 && lambda_inter >= 0 && lambda_kd >= 0,
          "loss weights must be non-negative");
  require(nms_iou > 0.0 && nms_iou <= 1.0, "nms_iou must be in (0, 1]");
  require(k_out >= 1, "k_out must be positive");
  require(focal_gamma >= 0.0, "focal_gamma must be non-negative");
  require(background_weight > 0.0, "background_weight must be positive");
}

void TrainConfig::validate() const {
  require(steps >= 0 && batch_size >= 1, "steps >= 0 and batch_size >= 1 required");
  require(lr > 0.0 && weight_decay >= 0.0, "lr must be positive and weight_decay non-negative");
  require(lr_drop_fraction >= 0.0 && lr_drop_fraction <= 1.0, "lr_drop_fraction must be in [0, 1]");
  require(grad_clip >= 0.0, "grad_clip must be non-negative");
  require(log_every >= 1, "log_every must be positive");
}

void SyntheticWorldConfig::validate() const {
  require(num_images >= 0 && num_test_images >= 0, "image counts must be non-negative");
  require(num_verbs >= 1 && num_objects >= 1, "world needs verbs and objects");
  require(compositions >= 1 && compositions <= num_verbs * num_objects,
          "compositions must be in [1, num_verbs * num_objects]");
  require(max_pairs_per_image >= 1, "max_pairs_per_image must be positive");
  require(image_size >= 16, "image_size must be at least 16");
  require(noise >= 0.0, "noise must be non-negative");
}

void ProviderConfig::validate() const {
  require(kind == "mock" || kind == "cache", "provider.kind must be 'mock' or 'cache'");
  require(dim >= 1, "provider.dim must be positive");
  require(noise >= 0.0, "provider.noise must be non-negative");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  world.validate();
  provider.validate();
  require(model.embed_dim == provider.dim, "model.embed_dim must equal provider.dim");
}

json to_json(const ModelConfig& c) { return write(c); }
json to_json(const TrainConfig& c) { return write(c); }
json to_json(const SyntheticWorldConfig& c) { return write(c); }
json to_json(const ProviderConfig& c) { return write(c); }
json to_json(const EvalConfig& c) { return write(c); }

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"world", to_json(c.world)},
          {"provider", to_json(c.provider)},
          {"eval", to_json(c.eval)}};
}

ModelConfig model_config_from_json(const json& j) { return read<ModelConfig>(j, "model"); }
TrainConfig train_config_from_json(const json& j) { return read<TrainConfig>(j, "train"); }
SyntheticWorldConfig world_config_from_json(const json& j) { return read<SyntheticWorldConfig>(j, "world"); }
ProviderConfig provider_config_from_json(const json& j) { return read<ProviderConfig>(j, "provider"); }
EvalConfig eval_config_from_json(const json& j) { return read<EvalConfig>(j, "eval"); }

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  static const std::set<std::string> sections = {"model", "train", "world", "provider", "eval"};
  for (const auto& [key, _] : j.items()) {
    if (!sections.contains(key)) throw ConfigError("unknown config section: " + key);
  }
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("world")) c.world = world_config_from_json(j.at("world"));
  if (j.contains("provider")) c.provider = provider_config_from_json(j.at("provider"));
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return run_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("override key needs a section: " + path);
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  doc[section][key] = value;
}

RunConfig resolve_run_config(const std::filesystem::path* config_path,
                             const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (config_path != nullptr) {
    std::ifstream in(*config_path);
    if (!in) throw ConfigError("cannot read config " + config_path->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("invalid JSON in " + config_path->string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace dqen
