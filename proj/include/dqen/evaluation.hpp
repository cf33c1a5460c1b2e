#pragma once

// HOI detection mAP with the Default and Known-Object settings and the
// Rare / Non-Rare split, plus an object-detection mAP probe.

#include "dqen/box.hpp"
#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/heads.hpp"
#include "dqen/vocabulary.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace dqen {

enum class EvalSetting { kDefault, kKnownObject };

struct EvalResult {
  EvalSetting setting = EvalSetting::kDefault;
  double map_full = 0.0;
  double map_rare = 0.0;     // NaN when no rare category has test ground truth
  double map_nonrare = 0.0;  // NaN when no non-rare category has test ground truth
  std::vector<double> per_category_ap;  // NaN for categories without test ground truth
  std::vector<int> test_counts;
  std::vector<bool> rare;
  int categories_evaluated = 0;
};

struct PairBoxes {
  Box human;
  Box object;
};

struct ScoredPair {
  double score = 0.0;
  Box human;
  Box object;
};

// Predictions of one category in one image against that category's ground
// truth. Returns TP flags in descending score order (ties keep input order).
// Each prediction takes the unmatched ground truth with the highest
// min(IoU_h, IoU_o) and is a TP when that value exceeds the threshold.
std::vector<bool> match_predictions(const std::vector<ScoredPair>& preds, const std::vector<PairBoxes>& gts,
                                    double iou_threshold = 0.5);

// flags in descending score order.
double average_precision(const std::vector<bool>& flags, int num_positives,
                         ApInterpolation mode = ApInterpolation::kAllPoint);
// Sorts by score (stable) first.
double average_precision(const std::vector<bool>& flags, const std::vector<double>& scores, int num_positives,
                         ApInterpolation mode = ApInterpolation::kAllPoint);

// Rare categories are those with fewer than rare_threshold training
// instances. Detections are matched to annotations by image_id.
EvalResult evaluate(const std::vector<Annotation>& test, const std::vector<ImageDetections>& detections,
                    const HOIVocabulary& vocab, const std::vector<int>& train_counts, EvalSetting setting,
                    const EvalConfig& cfg = {});

// Class-wise AP of the object detections (IoU > threshold), averaged over
// classes present in the ground truth. Identical boxes of one class in an
// image count once.
double evaluate_object_detection(const std::vector<Annotation>& test, const std::vector<ImageDetections>& detections,
                                 int num_objects, const EvalConfig& cfg = {});

nlohmann::json to_json(const EvalResult& r, const HOIVocabulary& vocab);

}  // namespace dqen
