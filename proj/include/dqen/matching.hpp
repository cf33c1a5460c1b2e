#pragma once

// Set-prediction training objective: Hungarian assignment of ground truth to
// queries and the weighted box, classification, token and distillation losses.

#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/heads.hpp"
#include "dqen/model.hpp"

#include <utility>
#include <vector>

namespace dqen {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), sorted by row
  double cost = 0.0;
};

// Minimum-cost injective assignment of min(n, m) pairs for an n x m matrix.
Assignment hungarian(const ag::Matrix& cost);

struct ImageTargets {
  std::vector<GroundTruthInstance> instances;
  ag::Matrix human_boxes;    // (G, 4)
  ag::Matrix object_boxes;   // (G, 4)
  std::vector<int> object_classes;
  ag::Matrix hoi_targets;    // (G, N_hoi) multi-hot
  ag::Matrix verb_targets;   // (G, num_verbs) multi-hot
  std::vector<int> token_targets;
  Vector v_c;                // provider image embedding
};

ImageTargets make_image_targets(const Annotation& ann, const HOIVocabulary& vocab, int grid_h, int grid_w,
                                const Vector& v_c);

// (N_q, G) matching cost.
ag::Matrix build_cost_matrix(const LayerPredictions& pred, const ImageTargets& gt, const ModelConfig& cfg);

// Box terms for matched pairs, summed over pairs and both streams (not yet
// normalized): sum |b - b_gt|_1 and sum (1 - GIoU).
std::pair<Var, Var> loss_boxes(const LayerPredictions& pred, const ImageTargets& gt, const Assignment& a);

// Object cross-entropy (weighted mean over queries, background weight for
// unmatched queries) and the summed focal interaction plus verb loss.
std::pair<Var, Var> loss_classification(const LayerPredictions& pred, const ImageTargets& gt, const Assignment& a,
                                        const ModelConfig& cfg);

Var loss_oqe_ce(const Var& token_logits, const std::vector<int>& token_targets);

// Mean absolute difference between the projected pooled interaction features
// and the provider image embedding.
Var loss_kd(const Var& kd_embedding, const Vector& v_c);

struct LossBreakdown {
  Var total;
  Var l_b, l_u, l_c_o, l_c_a, l_ce, l_kd;  // unweighted, summed over loss layers where applicable
  std::vector<Assignment> assignments;     // final-layer assignment per image
};

// Box and focal terms are normalized by the batch's ground-truth count; the
// remaining terms are means over images. Every decoder layer contributes the
// cost term when aux_loss is set.
LossBreakdown total_loss(const std::vector<ForwardOutputs>& outputs, const std::vector<ImageTargets>& targets,
                         const ModelConfig& cfg);

}  // namespace dqen
