#pragma once

// Prediction heads, score combination, triplet NMS and the detection file
// format.

#include "dqen/box.hpp"
#include "dqen/config.hpp"
#include "dqen/nn.hpp"
#include "dqen/vocabulary.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dqen {

using ag::Var;
using Vector = Eigen::VectorXd;

struct PredictionHeads {
  nn::Mlp human_box;     // C' -> C' -> C' -> 4, sigmoid
  nn::Mlp object_box;
  nn::Linear object_cls;  // C' -> num_objects + 1
  nn::Linear inter_cls;   // C' -> N_hoi
  nn::Linear verb_cls;    // C' -> num_verbs

  // Interaction and verb biases start at the focal prior -log((1 - p) / p).
  static PredictionHeads create(nn::ParamStore& store, const std::string& name, const ModelConfig& cfg,
                                nn::Rng& rng, double prior_probability = 0.01);
};

// Raw head outputs for one decoder layer of one image.
struct LayerPredictions {
  Var human_boxes;    // (N_q, 4) cxcywh in [0,1]
  Var object_boxes;   // (N_q, 4)
  Var object_logits;  // (N_q, num_objects + 1)
  Var inter_logits;   // (N_q, N_hoi)
  Var verb_logits;    // (N_q, num_verbs); undefined when the verb head is off
};

std::pair<Var, Var> predict_boxes(const PredictionHeads& heads, const Var& v_human, const Var& v_object);
// Foreground slice of the softmax with background, (N_q, num_objects).
ag::Matrix predict_object_scores(const ag::Matrix& object_logits);
ag::Matrix predict_interaction(const ag::Matrix& inter_logits);
ag::Matrix predict_verbs(const ag::Matrix& verb_logits);

LayerPredictions predict_layer(const PredictionHeads& heads, const Var& v_human, const Var& v_object,
                               const Var& fused, bool with_verbs);

// S_hoi[n] = S_inter[n] + alpha * S_verb[verb_of(n)]
Vector combine_hoi(const Vector& s_inter, const Vector& s_verb, double alpha, const HOIVocabulary& vocab);

// As printed: S[n] = S_hoi[n] + S_o[m] * S_o[m] + s_tf[n] with m = object_of(n).
// kProduct: S[n] = S_hoi[n] * S_o[m] + s_tf[n].
Vector final_scores(const Vector& s_hoi, const Vector& s_o, const Vector& s_tf, const HOIVocabulary& vocab,
                    ScoreCombine mode = ScoreCombine::kAsPrinted);

struct TripletPrediction {
  Box human_box;
  Box object_box;
  Vector object_scores;
  Vector interaction_scores;
  Vector verb_scores;
  Vector hoi_scores;
  Vector final_scores;
  int query_index = 0;
};

struct FlatTriplet {
  int hoi_id = 0;
  int verb_id = 0;
  int object_id = 0;
  double score = 0.0;
  Box human_box;
  Box object_box;
  int query_index = 0;
};

// Greedy by descending score (ties keep input order). A candidate is dropped
// when a kept triplet has the same hoi_id and both box IoUs exceed tau.
std::vector<FlatTriplet> triplet_nms(std::vector<FlatTriplet> triplets, double iou_threshold);

// Flattens the (query x hoi) grid of final scores, keeps the k_out highest
// and applies triplet NMS.
std::vector<FlatTriplet> top_k_triplets(const std::vector<TripletPrediction>& predictions, int k_out,
                                        double iou_threshold, const HOIVocabulary& vocab);

struct ObjectDetection {
  int object_id = 0;
  double score = 0.0;
  Box box;
};

struct ImageDetections {
  std::string image_id;
  std::vector<FlatTriplet> triplets;
  std::vector<ObjectDetection> objects;
};

nlohmann::json to_json(const ImageDetections& d);
ImageDetections image_detections_from_json(const nlohmann::json& j);
void save_detections(const std::filesystem::path& path, const std::vector<ImageDetections>& dets);
std::vector<ImageDetections> load_detections(const std::filesystem::path& path);

}  // namespace dqen
