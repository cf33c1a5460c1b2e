#include "dqen/oqe.hpp"

#include "dqen/errors.hpp"
#include "dqen/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dqen {

TokenObjectScores score_tokens(const nn::Linear& classifier, const Var& enc_tokens, bool detach) {
  TokenObjectScores s;
  s.detached_input = detach;
  s.logits = classifier(detach ? ag::detach(enc_tokens) : enc_tokens);
  return s;
}

namespace {

int best_foreground(const ag::Matrix& logits, ag::Index row) {
  const ag::Index fg = logits.cols() - 1;
  ag::Index best = 0;
  for (ag::Index c = 1; c < fg; ++c) {
    if (logits(row, c) > logits(row, best)) best = c;
  }
  return static_cast<int>(best);
}

}  // namespace

std::vector<double> selection_scores(const ag::Matrix& logits, OqeSelection mode) {
  if (logits.cols() < 2) throw ShapeError("token logits need at least one foreground class");
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (ag::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits(i, best_foreground(logits, i));
    if (mode == OqeSelection::kMaxLogit) {
      out[static_cast<std::size_t>(i)] = top;
    } else {
      const double mx = logits.row(i).maxCoeff();
      const double z = (logits.row(i).array() - mx).exp().sum();
      out[static_cast<std::size_t>(i)] = std::exp(top - mx) / z;
    }
  }
  return out;
}

SelectedFeatures select_top_n(const TokenObjectScores& scores, const Var& enc_tokens, int n, OqeSelection mode,
                              bool gate) {
  const ag::Matrix& logits = scores.logits.value();
  if (logits.rows() != enc_tokens.rows()) throw ShapeError("token logits and features disagree on token count");
  if (n <= 0 || n > enc_tokens.rows()) {
    throw ShapeError("cannot select " + std::to_string(n) + " of " + std::to_string(enc_tokens.rows()) + " tokens");
  }
  const std::vector<double> s = selection_scores(logits, mode);
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });
  order.resize(static_cast<std::size_t>(n));

  SelectedFeatures out;
  out.indices = order;
  for (int i : order) out.scores.push_back(s[static_cast<std::size_t>(i)]);
  Var feats = ag::gather_rows(enc_tokens, out.indices);
  if (gate) {
    const Var picked_logits = ag::gather_rows(scores.logits, out.indices);
    std::vector<int> cls;
    for (int i : out.indices) cls.push_back(best_foreground(logits, i));
    const Var confidence = mode == OqeSelection::kMaxLogit ? ag::sigmoid(ag::pick(picked_logits, cls))
                                                           : ag::pick(ag::softmax_rows(picked_logits), cls);
    feats = ag::mul_col(feats, confidence);
  }
  out.features = feats;
  return out;
}

Var enhance_object_queries(const Var& q_object, const SelectedFeatures& selected) {
  if (q_object.rows() != selected.features.rows() || q_object.cols() != selected.features.cols()) {
    throw ShapeError("selected features do not match the object query shape");
  }
  return ag::add(q_object, selected.features);
}

std::vector<int> oqe_classifier_targets(const std::vector<GroundTruthInstance>& instances, int grid_h, int grid_w,
                                        int num_objects) {
  if (grid_h <= 0 || grid_w <= 0) throw ShapeError("token grid must be non-empty");
  std::vector<const GroundTruthInstance*> boxes;
  for (const auto& inst : instances) {
    if (!(inst.object_box.w > 0.0 && inst.object_box.h > 0.0)) {
      log_warning("skipping zero-area object box in token targets");
      continue;
    }
    boxes.push_back(&inst);
  }
  std::vector<int> targets(static_cast<std::size_t>(grid_h * grid_w), num_objects);
  for (int r = 0; r < grid_h; ++r) {
    const double y = (r + 0.5) / grid_h;
    for (int c = 0; c < grid_w; ++c) {
      const double x = (c + 0.5) / grid_w;
      double best_area = std::numeric_limits<double>::infinity();
      for (const auto* inst : boxes) {
        const Box& b = inst->object_box;
        if (x < b.x0() || x > b.x1() || y < b.y0() || y > b.y1()) continue;
        if (b.area() < best_area) {
          best_area = b.area();
          targets[static_cast<std::size_t>(r * grid_w + c)] = inst->object_class;
        }
      }
    }
  }
  return targets;
}

}  // namespace dqen
