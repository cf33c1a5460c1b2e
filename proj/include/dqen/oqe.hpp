#pragma once

// Object query enhancement: a token-level object classifier picks the N most
// object-like encoder tokens, whose features are added to the object queries.

#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/nn.hpp"

#include <vector>

namespace dqen {

using ag::Var;

struct TokenObjectScores {
  Var logits;                  // (tokens, num_objects + 1), background last
  bool detached_input = true;  // classifier read a gradient-stopped copy of V_e
};

struct SelectedFeatures {
  std::vector<int> indices;    // ordered by decreasing selection score
  std::vector<double> scores;  // selection score of each index
  Var features;                // (N, C'), V_a
};

TokenObjectScores score_tokens(const nn::Linear& classifier, const Var& enc_tokens, bool detach = true);

// Per-token score over the foreground classes only.
std::vector<double> selection_scores(const ag::Matrix& logits, OqeSelection mode);

// Top-n tokens, ties to the lower index. Features come from the non-detached
// tokens. With gate set, row k is scaled by a differentiable confidence of the
// selected token (sigmoid of its best foreground logit, or its best
// foreground probability in softmax mode), which is the path by which HOI
// losses train the classifier.
SelectedFeatures select_top_n(const TokenObjectScores& scores, const Var& enc_tokens, int n,
                              OqeSelection mode = OqeSelection::kMaxLogit, bool gate = true);

// Q_o + V_a, row k of V_a paired with query k.
Var enhance_object_queries(const Var& q_object, const SelectedFeatures& selected);

// Class of the smallest ground-truth object box containing each token center
// (row-major over a grid_h x grid_w grid), num_objects for background.
std::vector<int> oqe_classifier_targets(const std::vector<GroundTruthInstance>& instances, int grid_h,
                                        int grid_w, int num_objects);

}  // namespace dqen
