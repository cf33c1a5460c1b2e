#include "dqen/heads.hpp"

#include "dqen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dqen {

PredictionHeads PredictionHeads::create(nn::ParamStore& store, const std::string& name, const ModelConfig& cfg,
                                        nn::Rng& rng, double prior_probability) {
  const int c = cfg.channels;
  PredictionHeads h;
  h.human_box = nn::Mlp::create(store, name + ".human_box", {c, c, c, 4}, rng);
  h.object_box = nn::Mlp::create(store, name + ".object_box", {c, c, c, 4}, rng);
  h.object_cls = nn::Linear::create(store, name + ".object_cls", c, cfg.num_objects + 1, rng);
  h.inter_cls = nn::Linear::create(store, name + ".inter_cls", c, cfg.num_hoi, rng);
  h.verb_cls = nn::Linear::create(store, name + ".verb_cls", c, cfg.num_verbs, rng);
  const double prior = -std::log((1.0 - prior_probability) / prior_probability);
  h.inter_cls.bias.mutable_value().setConstant(prior);
  h.verb_cls.bias.mutable_value().setConstant(prior);
  return h;
}

std::pair<Var, Var> predict_boxes(const PredictionHeads& heads, const Var& v_human, const Var& v_object) {
  return {ag::sigmoid(heads.human_box(v_human)), ag::sigmoid(heads.object_box(v_object))};
}

ag::Matrix predict_object_scores(const ag::Matrix& object_logits) {
  ag::Matrix p(object_logits.rows(), object_logits.cols() - 1);
  for (ag::Index i = 0; i < object_logits.rows(); ++i) {
    const double mx = object_logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (object_logits.row(i).array() - mx).exp();
    p.row(i) = e.head(p.cols()) / e.sum();
  }
  return p;
}

ag::Matrix predict_interaction(const ag::Matrix& inter_logits) {
  return inter_logits.unaryExpr([](double x) { return ag::sigmoid_scalar(x); });
}

ag::Matrix predict_verbs(const ag::Matrix& verb_logits) { return predict_interaction(verb_logits); }

LayerPredictions predict_layer(const PredictionHeads& heads, const Var& v_human, const Var& v_object,
                               const Var& fused, bool with_verbs) {
  LayerPredictions p;
  std::tie(p.human_boxes, p.object_boxes) = predict_boxes(heads, v_human, v_object);
  p.object_logits = heads.object_cls(v_object);
  p.inter_logits = heads.inter_cls(fused);
  if (with_verbs) p.verb_logits = heads.verb_cls(fused);
  return p;
}

Vector combine_hoi(const Vector& s_inter, const Vector& s_verb, double alpha, const HOIVocabulary& vocab) {
  if (alpha < 0) throw ConfigError("alpha must be non-negative");
  if (s_inter.size() != vocab.num_hoi()) throw ShapeError("interaction scores do not match the vocabulary");
  if (s_verb.size() != vocab.num_verbs()) throw ShapeError("verb scores do not match the vocabulary");
  Vector out = s_inter;
  for (const auto& c : vocab.compositions()) out(c.hoi_id) += alpha * s_verb(c.verb_id);
  return out;
}

Vector final_scores(const Vector& s_hoi, const Vector& s_o, const Vector& s_tf, const HOIVocabulary& vocab,
                    ScoreCombine mode) {
  if (s_hoi.size() != vocab.num_hoi() || s_tf.size() != vocab.num_hoi()) {
    throw ShapeError("HOI score vectors do not match the vocabulary");
  }
  if (s_o.size() != vocab.num_objects()) throw ShapeError("object scores do not match the vocabulary");
  Vector out(vocab.num_hoi());
  for (const auto& c : vocab.compositions()) {
    const double so = s_o(c.object_id);
    out(c.hoi_id) = mode == ScoreCombine::kAsPrinted ? s_hoi(c.hoi_id) + so * so + s_tf(c.hoi_id)
                                                     : s_hoi(c.hoi_id) * so + s_tf(c.hoi_id);
  }
  return out;
}

std::vector<FlatTriplet> triplet_nms(std::vector<FlatTriplet> triplets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("NMS threshold must lie in (0, 1]");
  std::stable_sort(triplets.begin(), triplets.end(),
                   [](const FlatTriplet& a, const FlatTriplet& b) { return a.score > b.score; });
  std::vector<FlatTriplet> kept;
  for (const auto& t : triplets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const FlatTriplet& k) {
      return k.hoi_id == t.hoi_id && iou(k.human_box, t.human_box) > iou_threshold &&
             iou(k.object_box, t.object_box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(t);
  }
  return kept;
}

std::vector<FlatTriplet> top_k_triplets(const std::vector<TripletPrediction>& predictions, int k_out,
                                        double iou_threshold, const HOIVocabulary& vocab) {
  if (k_out <= 0) throw ConfigError("k_out must be positive");
  std::vector<FlatTriplet> all;
  all.reserve(predictions.size() * static_cast<std::size_t>(vocab.num_hoi()));
  for (const auto& p : predictions) {
    for (const auto& c : vocab.compositions()) {
      all.push_back({c.hoi_id, c.verb_id, c.object_id, p.final_scores(c.hoi_id), p.human_box, p.object_box,
                     p.query_index});
    }
  }
  const auto k = std::min(all.size(), static_cast<std::size_t>(k_out));
  std::stable_sort(all.begin(), all.end(), [](const FlatTriplet& a, const FlatTriplet& b) { return a.score > b.score; });
  all.resize(k);
  return triplet_nms(std::move(all), iou_threshold);
}

namespace {

nlohmann::json box_json(const Box& b) { return {b.cx, b.cy, b.w, b.h}; }

Box box_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

nlohmann::json to_json(const ImageDetections& d) {
  nlohmann::json j;
  j["image_id"] = d.image_id;
  j["triplets"] = nlohmann::json::array();
  for (const auto& t : d.triplets) {
    j["triplets"].push_back({{"hoi_id", t.hoi_id},
                             {"verb_id", t.verb_id},
                             {"object_id", t.object_id},
                             {"score", t.score},
                             {"h_box", box_json(t.human_box)},
                             {"o_box", box_json(t.object_box)}});
  }
  j["objects"] = nlohmann::json::array();
  for (const auto& o : d.objects) {
    j["objects"].push_back({{"object_id", o.object_id}, {"score", o.score}, {"box", box_json(o.box)}});
  }
  return j;
}

ImageDetections image_detections_from_json(const nlohmann::json& j) {
  ImageDetections d;
  try {
    d.image_id = j.at("image_id").get<std::string>();
    for (const auto& t : j.at("triplets")) {
      FlatTriplet f;
      f.hoi_id = t.at("hoi_id").get<int>();
      f.verb_id = t.at("verb_id").get<int>();
      f.object_id = t.at("object_id").get<int>();
      f.score = t.at("score").get<double>();
      f.human_box = box_from(t.at("h_box"));
      f.object_box = box_from(t.at("o_box"));
      d.triplets.push_back(f);
    }
    if (j.contains("objects")) {
      for (const auto& o : j.at("objects")) {
        d.objects.push_back({o.at("object_id").get<int>(), o.at("score").get<double>(), box_from(o.at("box"))});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed detection record: ") + e.what());
  }
  return d;
}

void save_detections(const std::filesystem::path& path, const std::vector<ImageDetections>& dets) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& d : dets) out << to_json(d).dump() << '\n';
}

std::vector<ImageDetections> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<ImageDetections> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(image_detections_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dqen
