#include "dqen/matching.hpp"

#include "dqen/errors.hpp"
#include "dqen/oqe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dqen {

using ag::Index;

namespace {

// Row-to-column assignment for rows <= cols using the shortest augmenting path
// method with vertex potentials; a[r] is the column of row r.
std::vector<int> solve_rows_le_cols(const ag::Matrix& c) {
  const int n = static_cast<int>(c.rows());
  const int m = static_cast<int>(c.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = c(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> a(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) a[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return a;
}

Var boxes_to_corners(const Var& b) {
  const Var cx = ag::col(b, 0), cy = ag::col(b, 1), w = ag::col(b, 2), h = ag::col(b, 3);
  return ag::concat_cols({ag::sub(cx, ag::scale(w, 0.5)), ag::sub(cy, ag::scale(h, 0.5)),
                          ag::add(cx, ag::scale(w, 0.5)), ag::add(cy, ag::scale(h, 0.5))});
}

// (M, 1) GIoU between matching rows of a and b, both (M, 4) cxcywh.
Var giou_rows(const Var& a, const Var& b) {
  constexpr double eps = 1e-9;
  const Var ca = boxes_to_corners(a), cb = boxes_to_corners(b);
  const auto c = [](const Var& v, Index i) { return ag::col(v, i); };
  const Var area_a = ag::mul(ag::col(a, 2), ag::col(a, 3));
  const Var area_b = ag::mul(ag::col(b, 2), ag::col(b, 3));
  const Var iw = ag::clamp_min(ag::sub(ag::minimum(c(ca, 2), c(cb, 2)), ag::maximum(c(ca, 0), c(cb, 0))), 0.0);
  const Var ih = ag::clamp_min(ag::sub(ag::minimum(c(ca, 3), c(cb, 3)), ag::maximum(c(ca, 1), c(cb, 1))), 0.0);
  const Var inter = ag::mul(iw, ih);
  const Var uni = ag::add_scalar(ag::sub(ag::add(area_a, area_b), inter), eps);
  const Var ew = ag::sub(ag::maximum(c(ca, 2), c(cb, 2)), ag::minimum(c(ca, 0), c(cb, 0)));
  const Var eh = ag::sub(ag::maximum(c(ca, 3), c(cb, 3)), ag::minimum(c(ca, 1), c(cb, 1)));
  const Var enclose = ag::add_scalar(ag::mul(ew, eh), eps);
  return ag::sub(ag::div(inter, uni), ag::div(ag::sub(enclose, uni), enclose));
}

double focal_pos(double p, double alpha, double gamma) {
  return (alpha < 0 ? 1.0 : alpha) * std::pow(1.0 - p, gamma) * -std::log(std::max(p, 1e-12));
}

double focal_neg(double p, double alpha, double gamma) {
  return (alpha < 0 ? 1.0 : 1.0 - alpha) * std::pow(p, gamma) * -std::log(std::max(1.0 - p, 1e-12));
}

}  // namespace

Assignment hungarian(const ag::Matrix& cost) {
  if (!cost.allFinite()) throw NumericError("assignment cost matrix has non-finite entries");
  Assignment out;
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  if (cost.rows() <= cost.cols()) {
    const auto a = solve_rows_le_cols(cost);
    for (int r = 0; r < static_cast<int>(a.size()); ++r) out.pairs.emplace_back(r, a[static_cast<std::size_t>(r)]);
  } else {
    const ag::Matrix t = cost.transpose();
    const auto a = solve_rows_le_cols(t);
    for (int c = 0; c < static_cast<int>(a.size()); ++c) out.pairs.emplace_back(a[static_cast<std::size_t>(c)], c);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [r, c] : out.pairs) out.cost += cost(r, c);
  return out;
}

ImageTargets make_image_targets(const Annotation& ann, const HOIVocabulary& vocab, int grid_h, int grid_w,
                                const Vector& v_c) {
  ImageTargets t;
  t.instances = ann.instances;
  const auto g = static_cast<Index>(ann.instances.size());
  t.human_boxes.resize(g, 4);
  t.object_boxes.resize(g, 4);
  t.hoi_targets = ag::Matrix::Zero(g, vocab.num_hoi());
  t.verb_targets = ag::Matrix::Zero(g, vocab.num_verbs());
  for (Index i = 0; i < g; ++i) {
    const auto& inst = ann.instances[static_cast<std::size_t>(i)];
    const auto hb = inst.human_box.as_array();
    const auto ob = inst.object_box.as_array();
    for (int k = 0; k < 4; ++k) {
      t.human_boxes(i, k) = hb[static_cast<std::size_t>(k)];
      t.object_boxes(i, k) = ob[static_cast<std::size_t>(k)];
    }
    t.object_classes.push_back(inst.object_class);
    for (int id : instance_hoi_ids(inst, vocab)) t.hoi_targets(i, id) = 1.0;
    for (int v : inst.verb_ids) t.verb_targets(i, v) = 1.0;
  }
  t.token_targets = oqe_classifier_targets(ann.instances, grid_h, grid_w, vocab.num_objects());
  t.v_c = v_c;
  return t;
}

ag::Matrix build_cost_matrix(const LayerPredictions& pred, const ImageTargets& gt, const ModelConfig& cfg) {
  const ag::Matrix& hb = pred.human_boxes.value();
  const ag::Matrix& ob = pred.object_boxes.value();
  const ag::Matrix s_o = predict_object_scores(pred.object_logits.value());
  const ag::Matrix s_a = predict_interaction(pred.inter_logits.value());
  const Index nq = hb.rows();
  const Index g = gt.human_boxes.rows();
  ag::Matrix cost(nq, g);
  for (Index j = 0; j < g; ++j) {
    const Box gh = Box::from_array({gt.human_boxes(j, 0), gt.human_boxes(j, 1), gt.human_boxes(j, 2), gt.human_boxes(j, 3)});
    const Box go = Box::from_array({gt.object_boxes(j, 0), gt.object_boxes(j, 1), gt.object_boxes(j, 2), gt.object_boxes(j, 3)});
    const double npos = std::max(1.0, gt.hoi_targets.row(j).sum());
    for (Index q = 0; q < nq; ++q) {
      const Box ph{hb(q, 0), hb(q, 1), hb(q, 2), hb(q, 3)};
      const Box po{ob(q, 0), ob(q, 1), ob(q, 2), ob(q, 3)};
      const double l1 = (hb.row(q) - gt.human_boxes.row(j)).cwiseAbs().sum() +
                        (ob.row(q) - gt.object_boxes.row(j)).cwiseAbs().sum();
      const double g_cost = (1.0 - giou(ph, gh)) + (1.0 - giou(po, go));
      const double obj_cost = -s_o(q, gt.object_classes[static_cast<std::size_t>(j)]);
      double inter_cost = 0.0;
      for (Index n = 0; n < gt.hoi_targets.cols(); ++n) {
        if (gt.hoi_targets(j, n) > 0.5) {
          inter_cost += focal_pos(s_a(q, n), cfg.focal_alpha, cfg.focal_gamma) -
                        focal_neg(s_a(q, n), cfg.focal_alpha, cfg.focal_gamma);
        }
      }
      cost(q, j) = cfg.lambda_box * l1 + cfg.lambda_giou * g_cost + cfg.lambda_obj * obj_cost +
                   cfg.lambda_inter * inter_cost / npos;
    }
  }
  return cost;
}

std::pair<Var, Var> loss_boxes(const LayerPredictions& pred, const ImageTargets& gt, const Assignment& a) {
  if (a.pairs.empty()) return {ag::constant(ag::Matrix::Zero(1, 1)), ag::constant(ag::Matrix::Zero(1, 1))};
  std::vector<int> q, j;
  for (const auto& [qi, gi] : a.pairs) {
    q.push_back(qi);
    j.push_back(gi);
  }
  ag::Matrix th(static_cast<Index>(j.size()), 4), to(static_cast<Index>(j.size()), 4);
  for (std::size_t k = 0; k < j.size(); ++k) {
    th.row(static_cast<Index>(k)) = gt.human_boxes.row(j[k]);
    to.row(static_cast<Index>(k)) = gt.object_boxes.row(j[k]);
  }
  const Var ph = ag::gather_rows(pred.human_boxes, q);
  const Var po = ag::gather_rows(pred.object_boxes, q);
  const Var cth = ag::constant(th), cto = ag::constant(to);
  const Var l1 = ag::add(ag::sum_all(ag::abs(ag::sub(ph, cth))), ag::sum_all(ag::abs(ag::sub(po, cto))));
  const auto n = static_cast<double>(q.size());
  const Var gsum = ag::add(ag::sum_all(giou_rows(ph, cth)), ag::sum_all(giou_rows(po, cto)));
  const Var lu = ag::add_scalar(ag::scale(gsum, -1.0), 2.0 * n);
  return {l1, lu};
}

std::pair<Var, Var> loss_classification(const LayerPredictions& pred, const ImageTargets& gt, const Assignment& a,
                                        const ModelConfig& cfg) {
  const Index nq = pred.object_logits.rows();
  std::vector<int> cls(static_cast<std::size_t>(nq), cfg.num_objects);
  std::vector<double> w(static_cast<std::size_t>(nq), cfg.background_weight);
  ag::Matrix hoi_t = ag::Matrix::Zero(nq, cfg.num_hoi);
  ag::Matrix verb_t = ag::Matrix::Zero(nq, cfg.num_verbs);
  for (const auto& [q, j] : a.pairs) {
    cls[static_cast<std::size_t>(q)] = gt.object_classes[static_cast<std::size_t>(j)];
    w[static_cast<std::size_t>(q)] = 1.0;
    hoi_t.row(q) = gt.hoi_targets.row(j);
    verb_t.row(q) = gt.verb_targets.row(j);
  }
  const Var ce = ag::cross_entropy(pred.object_logits, cls, w);
  const bool focal = cfg.class_loss == ClassLoss::kFocal;
  const double alpha = focal ? cfg.focal_alpha : -1.0;
  const double gamma = focal ? cfg.focal_gamma : 0.0;
  Var la = ag::focal_loss_sum(pred.inter_logits, hoi_t, alpha, gamma);
  if (pred.verb_logits.defined()) la = ag::add(la, ag::focal_loss_sum(pred.verb_logits, verb_t, alpha, gamma));
  return {ce, la};
}

Var loss_oqe_ce(const Var& token_logits, const std::vector<int>& token_targets) {
  if (static_cast<Index>(token_targets.size()) != token_logits.rows()) {
    throw ShapeError("token targets do not match the token count");
  }
  return ag::cross_entropy(token_logits, token_targets);
}

Var loss_kd(const Var& kd_embedding, const Vector& v_c) {
  if (kd_embedding.cols() != v_c.size() || kd_embedding.rows() != 1) {
    throw ShapeError("distillation embedding does not match the provider dimension");
  }
  const Var target = ag::constant(v_c.transpose());
  return ag::mean_all(ag::abs(ag::sub(kd_embedding, target)));
}

LossBreakdown total_loss(const std::vector<ForwardOutputs>& outputs, const std::vector<ImageTargets>& targets,
                         const ModelConfig& cfg) {
  if (outputs.size() != targets.size() || outputs.empty()) throw ShapeError("outputs and targets must pair up");
  const Var zero = ag::constant(ag::Matrix::Zero(1, 1));
  double gt_count = 0.0;
  for (const auto& t : targets) gt_count += static_cast<double>(t.instances.size());
  const double norm = 1.0 / std::max(1.0, gt_count);
  const double per_image = 1.0 / static_cast<double>(outputs.size());

  LossBreakdown lb;
  Var l_b = zero, l_u = zero, l_co = zero, l_ca = zero, l_ce = zero, l_kd = zero;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = outputs[i];
    const auto& gt = targets[i];
    const std::size_t n_layers = out.layers.size();
    const Assignment final_assign = hungarian(build_cost_matrix(out.layers.back(), gt, cfg));
    lb.assignments.push_back(final_assign);
    const std::size_t first = cfg.aux_loss ? 0 : n_layers - 1;
    for (std::size_t l = first; l < n_layers; ++l) {
      const Assignment a = (l + 1 == n_layers || !cfg.per_layer_matching)
                               ? final_assign
                               : hungarian(build_cost_matrix(out.layers[l], gt, cfg));
      const auto [b1, bu] = loss_boxes(out.layers[l], gt, a);
      const auto [co, ca] = loss_classification(out.layers[l], gt, a, cfg);
      l_b = ag::add(l_b, ag::scale(b1, norm));
      l_u = ag::add(l_u, ag::scale(bu, norm));
      l_co = ag::add(l_co, ag::scale(co, per_image));
      l_ca = ag::add(l_ca, ag::scale(ca, norm));
    }
    if (cfg.use_oqe) l_ce = ag::add(l_ce, ag::scale(loss_oqe_ce(out.token_scores.logits, gt.token_targets), per_image));
    if (cfg.lambda_kd > 0) l_kd = ag::add(l_kd, ag::scale(loss_kd(out.kd_embedding, gt.v_c), per_image));
  }
  lb.l_b = l_b;
  lb.l_u = l_u;
  lb.l_c_o = l_co;
  lb.l_c_a = l_ca;
  lb.l_ce = l_ce;
  lb.l_kd = l_kd;
  const Var cost = ag::add(ag::add(ag::scale(l_b, cfg.lambda_box), ag::scale(l_u, cfg.lambda_giou)),
                           ag::add(ag::scale(l_co, cfg.lambda_obj), ag::scale(l_ca, cfg.lambda_inter)));
  lb.total = ag::add(ag::add(cost, l_ce), ag::scale(l_kd, cfg.lambda_kd));
  return lb;
}

}  // namespace dqen
