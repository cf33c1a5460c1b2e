#include "invariants.hpp"

#include "dqen/dataset.hpp"
#include "dqen/evaluation.hpp"
#include "dqen/heads.hpp"
#include "dqen/isf.hpp"
#include "dqen/matching.hpp"
#include "dqen/model.hpp"
#include "dqen/semantics.hpp"
#include "dqen/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <iomanip>
#include <sstream>

namespace dqen::tools {

namespace {

using Clock = std::chrono::steady_clock;
using Rng = std::mt19937_64;

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Central differences carry round-off of roughly eps * |L| / h, so the
// denominator is floored at 1e-6 * max(1, |L|) for near-zero gradients.
double rel_error(double analytic, double numeric, double loss_value) {
  const double floor = 1e-6 * std::max(1.0, std::abs(loss_value));
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Plain corner-based IoU, independent of the library's box code.
double corner_iou(const Box& a, const Box& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Box random_box(Rng& rng) {
  const double w = uniform(rng, 0.1, 0.5);
  const double h = uniform(rng, 0.1, 0.5);
  return {uniform(rng, w / 2, 1 - w / 2), uniform(rng, h / 2, 1 - h / 2), w, h};
}

Box jitter(const Box& b, Rng& rng, double amount) {
  Box o = b;
  o.cx = std::clamp(b.cx + uniform(rng, -amount, amount) * b.w, 0.01, 0.99);
  o.cy = std::clamp(b.cy + uniform(rng, -amount, amount) * b.h, 0.01, 0.99);
  o.w = std::max(0.02, b.w * (1 + uniform(rng, -amount, amount)));
  o.h = std::max(0.02, b.h * (1 + uniform(rng, -amount, amount)));
  return o;
}

// Central differences for every entry of every parameter, compared with the
// gradient from one backward pass. Returns the maximum relative error.
double check_all_entries(const std::function<Var()>& loss, const std::vector<Var>& params, double h) {
  for (Var p : params) p.zero_grad();
  const Var l0 = loss();
  const double base = l0.item();
  ag::backward(l0);
  std::vector<ag::Matrix> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  ag::NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var p = params[pi];
    for (ag::Index i = 0; i < p.value().size(); ++i) {
      const double orig = p.value().data()[i];
      p.mutable_value().data()[i] = orig + h;
      const double up = loss().item();
      p.mutable_value().data()[i] = orig - h;
      const double down = loss().item();
      p.mutable_value().data()[i] = orig;
      worst = std::max(worst, rel_error(analytic[pi].data()[i], (up - down) / (2 * h), base));
    }
  }
  return worst;
}

}  // namespace

SuiteResult isf_gradient_suite(int seeds, int k, int word_dim, int out_dim, double h, double tolerance) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "isf_gradient";
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(1000 + static_cast<std::uint64_t>(s));
    const HOIVocabulary vocab = HOIVocabulary::synthetic(3, 3, std::max(k, 6), static_cast<std::uint64_t>(s));
    nn::ParamStore store;
    IsfModule isf = IsfModule::create(store, "isf", vocab, word_dim, out_dim, k, AttentionWeightShape::kVector, rng);
    initialize_word_tables(isf, store, "isf", vocab, nullptr, WordInit::kRandom, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> noise(0.0, 0.5);
    std::vector<Var> params;
    for (const auto& p : store.params()) {
      Var v = p.var;
      for (ag::Index i = 0; i < v.value().size(); ++i) v.mutable_value().data()[i] = noise(rng);
      params.push_back(v);
    }
    std::vector<int> ids(static_cast<std::size_t>(vocab.num_hoi()));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(k));
    ag::Matrix weights(1, out_dim);
    for (ag::Index i = 0; i < weights.size(); ++i) weights.data()[i] = noise(rng);
    const Var w = ag::constant(weights);
    const auto loss = [&] { return ag::sum_all(ag::mul(isf_forward(ids, isf.tables, isf.params, vocab), w)); };
    worst = std::max(worst, check_all_entries(loss, params, h));
  }
  r.seconds = elapsed(start);
  r.passed = worst < tolerance;
  r.metrics = {{"max_rel_error", worst}, {"seeds", seeds}};
  r.detail = "max rel error " + fmt(worst) + " over " + std::to_string(seeds) + " seeds (tol " + fmt(tolerance) + ")";
  return r;
}

SuiteResult hungarian_suite(int trials, int max_dim, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "hungarian";
  Rng rng(seed);
  int agree = 0;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int n = uniform_int(rng, 1, max_dim);
    const int m = uniform_int(rng, 1, max_dim);
    ag::Matrix c(n, m);
    // Mix of continuous costs and small integers so ties occur.
    const bool integer = t % 3 == 0;
    for (ag::Index i = 0; i < c.size(); ++i) {
      c.data()[i] = integer ? static_cast<double>(uniform_int(rng, 0, 4)) : uniform(rng, -5.0, 5.0);
    }
    // Exhaustive: permute the longer side, pair the first min(n, m) entries.
    const bool rows_short = n <= m;
    const int lo = std::min(n, m), hi = std::max(n, m);
    std::vector<int> perm(static_cast<std::size_t>(hi));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < lo; ++i) s += rows_short ? c(i, perm[static_cast<std::size_t>(i)]) : c(perm[static_cast<std::size_t>(i)], i);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const Assignment a = hungarian(c);
    double s = 0.0;
    std::set<int> rows, cols;
    for (const auto& [i, j] : a.pairs) {
      s += c(i, j);
      rows.insert(i);
      cols.insert(j);
    }
    const bool valid = static_cast<int>(a.pairs.size()) == lo && static_cast<int>(rows.size()) == lo &&
                       static_cast<int>(cols.size()) == lo && std::abs(s - a.cost) < 1e-9;
    const double gap = std::abs(s - best);
    worst = std::max(worst, gap);
    if (valid && gap < 1e-9) ++agree;
  }
  r.seconds = elapsed(start);
  r.passed = agree == trials;
  r.metrics = {{"agree", agree}, {"trials", trials}, {"max_gap", worst}};
  r.detail = std::to_string(agree) + "/" + std::to_string(trials) + " match the exhaustive minimum";
  return r;
}

namespace {

ModelConfig tiny_model(const HOIVocabulary& vocab, int queries, std::uint64_t seed) {
  ModelConfig mc = fit_model_to_vocabulary(ModelConfig{}, vocab);
  mc.num_queries = queries;
  mc.channels = 8;
  mc.num_heads = 2;
  mc.ffn_dim = 16;
  mc.encoder_layers = 1;
  mc.instance_decoder_layers = 2;
  mc.interaction_decoder_layers = 2;
  mc.embed_dim = 8;
  mc.word_dim = 8;
  mc.k_candidates = std::min(3, vocab.num_hoi());
  mc.training_free_r = std::min(2, vocab.num_hoi());
  mc.seed = seed;
  return mc;
}

SyntheticWorld tiny_world(int images, int verbs, int objects, int compositions, std::uint64_t seed) {
  SyntheticWorldConfig wc;
  wc.num_images = images;
  wc.num_verbs = verbs;
  wc.num_objects = objects;
  wc.compositions = compositions;
  wc.image_size = 32;
  wc.seed = seed;
  return generate_synthetic_world(wc);
}

double grad_norm(const std::vector<nn::NamedParam>& params) {
  double s = 0.0;
  for (const auto& p : params) s += p.var.grad().squaredNorm();
  return std::sqrt(s);
}

}  // namespace

SuiteResult stop_gradient_suite(int batches) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "stop_gradient";
  int ok = 0;
  double max_ce = 0.0, min_total = std::numeric_limits<double>::infinity();
  for (int b = 0; b < batches; ++b) {
    const auto seed = static_cast<std::uint64_t>(b);
    const SyntheticWorld world = tiny_world(2, 3, 3, 5, seed);
    DqenModel model(tiny_model(world.vocabulary, 4, seed), world.vocabulary);
    const auto provider = mock_provider(world.vocabulary, seed, 8, 0.1);
    model.initialize_word_tables(provider.get());
    const PreparedSplit data = prepare_split(world.train, *provider, model);
    std::vector<ForwardOutputs> outs;
    for (std::size_t i = 0; i < world.train.images.size(); ++i) {
      outs.push_back(model.forward(world.train.images[i], data.contexts[i]));
    }
    std::vector<Var> ce_terms;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      ce_terms.push_back(loss_oqe_ce(outs[i].token_scores.logits, data.targets[i].token_targets));
    }
    model.params().zero_grad();
    ag::backward(ag::sum_all(ag::concat_rows(ce_terms)));
    const double ce_norm = grad_norm(model.encoder_params());
    const double cls_norm = model.params().get("oqe.classifier.weight").grad().norm();

    outs.clear();
    for (std::size_t i = 0; i < world.train.images.size(); ++i) {
      outs.push_back(model.forward(world.train.images[i], data.contexts[i]));
    }
    model.params().zero_grad();
    ag::backward(total_loss(outs, data.targets, model.config()).total);
    const double total_norm = grad_norm(model.encoder_params());
    max_ce = std::max(max_ce, ce_norm);
    min_total = std::min(min_total, total_norm);
    if (ce_norm == 0.0 && cls_norm > 0.0 && total_norm > 0.0) ++ok;
  }
  r.seconds = elapsed(start);
  r.passed = ok == batches;
  r.metrics = {{"max_ce_encoder_norm", max_ce}, {"min_total_encoder_norm", min_total}, {"ok", ok}};
  r.detail = std::to_string(ok) + "/" + std::to_string(batches) + " batches; max |dL_ce/dtheta_enc| " + fmt(max_ce) +
             ", min |dL_total/dtheta_enc| " + fmt(min_total);
  return r;
}

SuiteResult coverage_suite(const std::vector<std::uint64_t>& seeds, int k, double bound, double provider_noise) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "coverage";
  bool all_ok = true;
  nlohmann::json curves = nlohmann::json::object();
  std::ostringstream detail;
  for (const auto seed : seeds) {
    SyntheticWorldConfig wc;
    wc.num_images = 200;
    wc.seed = seed;
    const SyntheticWorld world = generate_synthetic_world(wc);
    const auto provider = mock_provider(world.vocabulary, seed, 512, provider_noise);
    std::vector<double> curve;
    bool monotone = true;
    for (int kk = 1; kk <= world.vocabulary.num_hoi(); ++kk) {
      curve.push_back(candidate_coverage(world.train.annotations, nullptr, *provider, world.vocabulary, kk));
      if (curve.size() > 1 && curve.back() < curve[curve.size() - 2]) monotone = false;
    }
    const double at_k = curve.at(static_cast<std::size_t>(k - 1));
    const bool ok = monotone && at_k >= bound && std::abs(curve.back() - 1.0) < 1e-12;
    all_ok = all_ok && ok;
    curves[std::to_string(seed)] = curve;
    detail << "seed " << seed << ": cov@" << k << "=" << fmt(at_k) << (monotone ? " monotone" : " NOT monotone") << "; ";
  }
  r.seconds = elapsed(start);
  r.passed = all_ok;
  r.metrics = {{"curves", curves}};
  r.detail = detail.str();
  return r;
}

SuiteResult scoring_suite(int instances, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "scoring";
  Rng rng(seed);
  int ok_combine = 0, ok_final = 0, ok_tf = 0, ok_nms = 0, ok_argmax = 0;
  for (int t = 0; t < instances; ++t) {
    const int nv = uniform_int(rng, 2, 6);
    const int no = uniform_int(rng, 2, 6);
    const int nc = uniform_int(rng, 1, nv * no);
    const HOIVocabulary vocab = HOIVocabulary::synthetic(nv, no, nc, seed * 1000 + static_cast<std::uint64_t>(t));
    Vector s_inter(nc), s_verb(nv), s_o(no), m_sim(nc);
    for (int i = 0; i < nc; ++i) s_inter(i) = uniform(rng, 0, 1);
    for (int i = 0; i < nv; ++i) s_verb(i) = uniform(rng, 0, 1);
    for (int i = 0; i < no; ++i) s_o(i) = uniform(rng, 0, 1);
    for (int i = 0; i < nc; ++i) m_sim(i) = t % 4 == 0 ? std::round(uniform(rng, -1, 1) * 4) / 4 : uniform(rng, -1, 1);
    const double alpha = uniform(rng, 0, 2);

    // S_hoi: loop over categories through the verb lookup.
    const Vector s_hoi = combine_hoi(s_inter, s_verb, alpha, vocab);
    double err = 0.0;
    for (int n = 0; n < nc; ++n) err = std::max(err, std::abs(s_hoi(n) - (s_inter(n) + alpha * s_verb(vocab.verb_of(n)))));
    ok_combine += err < 1e-12 ? 1 : 0;

    // Training-free: explicit softmax, then R repeated max picks.
    const int rr = uniform_int(rng, 1, nc);
    const Vector tf = training_free_scores(m_sim, rr);
    double z = 0.0;
    for (int n = 0; n < nc; ++n) z += std::exp(m_sim(n));
    std::vector<bool> taken(static_cast<std::size_t>(nc), false);
    Vector tf_oracle = Vector::Zero(nc);
    for (int pick = 0; pick < rr; ++pick) {
      int best = -1;
      for (int n = 0; n < nc; ++n) {
        if (!taken[static_cast<std::size_t>(n)] && (best < 0 || m_sim(n) > m_sim(best))) best = n;
      }
      taken[static_cast<std::size_t>(best)] = true;
      tf_oracle(best) = std::exp(m_sim(best)) / z;
    }
    ok_tf += (tf - tf_oracle).cwiseAbs().maxCoeff() < 1e-12 ? 1 : 0;

    // Final scores as printed.
    const Vector fin = final_scores(s_hoi, s_o, tf, vocab);
    err = 0.0;
    for (int n = 0; n < nc; ++n) {
      const double so = s_o(vocab.object_of(n));
      err = std::max(err, std::abs(fin(n) - (s_hoi(n) + so * so + tf(n))));
    }
    ok_final += err < 1e-12 ? 1 : 0;

    // alpha = 0 keeps the interaction argmax.
    Eigen::Index a0 = 0, a1 = 0;
    combine_hoi(s_inter, s_verb, 0.0, vocab).maxCoeff(&a0);
    s_inter.maxCoeff(&a1);
    ok_argmax += a0 == a1 ? 1 : 0;

    // Triplet NMS against a quadratic greedy oracle.
    const int count = uniform_int(rng, 1, 30);
    const int hoi_kinds = uniform_int(rng, 1, 3);
    std::vector<FlatTriplet> trips;
    const Box anchor_h = random_box(rng), anchor_o = random_box(rng);
    for (int i = 0; i < count; ++i) {
      FlatTriplet f;
      f.hoi_id = uniform_int(rng, 0, hoi_kinds - 1);
      f.score = t % 5 == 0 ? std::round(uniform(rng, 0, 1) * 5) / 5 : uniform(rng, 0, 1);
      f.human_box = uniform(rng, 0, 1) < 0.6 ? jitter(anchor_h, rng, 0.3) : random_box(rng);
      f.object_box = uniform(rng, 0, 1) < 0.6 ? jitter(anchor_o, rng, 0.3) : random_box(rng);
      f.query_index = i;
      trips.push_back(f);
    }
    const double tau = uniform(rng, 0.2, 0.8);
    const auto kept = triplet_nms(trips, tau);
    std::vector<int> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 1; i < idx.size(); ++i) {  // insertion sort: stable, descending
      for (std::size_t j = i; j > 0 && trips[static_cast<std::size_t>(idx[j])].score >
                                           trips[static_cast<std::size_t>(idx[j - 1])].score;
           --j) {
        std::swap(idx[j], idx[j - 1]);
      }
    }
    std::vector<int> oracle;
    for (int i : idx) {
      const auto& c = trips[static_cast<std::size_t>(i)];
      bool suppressed = false;
      for (int k : oracle) {
        const auto& o = trips[static_cast<std::size_t>(k)];
        if (o.hoi_id == c.hoi_id && corner_iou(o.human_box, c.human_box) > tau &&
            corner_iou(o.object_box, c.object_box) > tau) {
          suppressed = true;
        }
      }
      if (!suppressed) oracle.push_back(i);
    }
    bool same = kept.size() == oracle.size();
    for (std::size_t i = 0; same && i < kept.size(); ++i) same = kept[i].query_index == oracle[i];
    ok_nms += same ? 1 : 0;
  }
  r.seconds = elapsed(start);
  r.passed = ok_combine == instances && ok_final == instances && ok_tf == instances && ok_nms == instances &&
             ok_argmax == instances;
  r.metrics = {{"combine_hoi", ok_combine}, {"final_scores", ok_final}, {"training_free", ok_tf},
               {"nms", ok_nms},             {"alpha0_argmax", ok_argmax}, {"instances", instances}};
  r.detail = "combine " + std::to_string(ok_combine) + ", final " + std::to_string(ok_final) + ", training-free " +
             std::to_string(ok_tf) + ", nms " + std::to_string(ok_nms) + ", alpha=0 argmax " +
             std::to_string(ok_argmax) + " of " + std::to_string(instances);
  return r;
}

SuiteResult loss_gradient_suite(int samples, double h, double tolerance, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "loss_gradient";
  const SyntheticWorld world = tiny_world(2, 2, 2, 3, seed + 11);
  ModelConfig mc = tiny_model(world.vocabulary, 4, seed);
  mc.k_candidates = 2;
  // The token classifier's truncated input is a deliberate mismatch between
  // the analytic gradient and finite differences; check the untruncated graph.
  mc.oqe_detach = false;
  DqenModel model(mc, world.vocabulary);
  const auto provider = mock_provider(world.vocabulary, seed, mc.embed_dim, 0.1);
  model.initialize_word_tables(provider.get());
  const PreparedSplit data = prepare_split(world.train, *provider, model);
  const auto loss = [&] {
    std::vector<ForwardOutputs> outs;
    for (std::size_t i = 0; i < world.train.images.size(); ++i) {
      outs.push_back(model.forward(world.train.images[i], data.contexts[i]));
    }
    return total_loss(outs, data.targets, model.config()).total;
  };
  model.params().zero_grad();
  const Var l0 = loss();
  const double base = l0.item();
  ag::backward(l0);
  struct Entry {
    Var var;
    ag::Index index;
    double analytic;
  };
  std::vector<Entry> entries;
  Rng rng(seed);
  const auto& params = model.params().params();
  while (static_cast<int>(entries.size()) < samples) {
    const auto& p = params[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(params.size()) - 1))];
    const auto i = static_cast<ag::Index>(uniform_int(rng, 0, static_cast<int>(p.var.value().size()) - 1));
    entries.push_back({p.var, i, p.var.grad().data()[i]});
  }
  model.params().zero_grad();
  double worst = 0.0;
  ag::NoGradGuard guard;
  for (auto& e : entries) {
    const double orig = e.var.value().data()[e.index];
    e.var.mutable_value().data()[e.index] = orig + h;
    const double up = loss().item();
    e.var.mutable_value().data()[e.index] = orig - h;
    const double down = loss().item();
    e.var.mutable_value().data()[e.index] = orig;
    worst = std::max(worst, rel_error(e.analytic, (up - down) / (2 * h), base));
  }
  r.seconds = elapsed(start);
  r.passed = worst < tolerance;
  r.metrics = {{"max_rel_error", worst}, {"samples", samples}};
  r.detail = "max rel error " + fmt(worst) + " over " + std::to_string(samples) + " parameters (tol " + fmt(tolerance) + ")";
  return r;
}

namespace {

struct CraftedDet {
  int hoi = 0;
  double score = 0.0;
  Box h, o;
};

struct CraftedGt {
  int hoi = 0;
  Box h, o;
};

// Greedy matching of score-sorted detections to the unmatched ground truth
// with the highest min IoU; a TP needs that overlap to exceed thr.
int true_positives(std::vector<const CraftedDet*> dets, const std::vector<const CraftedGt*>& gts, double thr) {
  std::sort(dets.begin(), dets.end(), [](const CraftedDet* a, const CraftedDet* b) { return a->score > b->score; });
  std::vector<bool> used(gts.size(), false);
  int tp = 0;
  for (const auto* d : dets) {
    int best = -1;
    double best_ov = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double ov = std::min(corner_iou(d->h, gts[g]->h), corner_iou(d->o, gts[g]->o));
      if (ov > best_ov) {
        best_ov = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_ov > thr) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
  }
  return tp;
}

// Sweeps every score threshold, rematching from scratch each time, and
// integrates the monotone precision envelope over recall.
double sweep_ap(const std::vector<std::vector<CraftedDet>>& dets, const std::vector<std::vector<CraftedGt>>& gts,
                int hoi, const std::vector<bool>& image_included, double thr) {
  int npos = 0;
  std::vector<double> scores;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const auto& g : gts[i]) npos += g.hoi == hoi ? 1 : 0;
    if (!image_included[i]) continue;
    for (const auto& d : dets[i]) {
      if (d.hoi == hoi) scores.push_back(d.score);
    }
  }
  if (npos == 0) return std::numeric_limits<double>::quiet_NaN();
  std::sort(scores.begin(), scores.end(), std::greater<>());
  std::vector<double> rec{0.0}, prec{1.0};
  for (const double t : scores) {
    int tp = 0, n = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (!image_included[i]) continue;
      std::vector<const CraftedDet*> sel;
      for (const auto& d : dets[i]) {
        if (d.hoi == hoi && d.score >= t) sel.push_back(&d);
      }
      std::vector<const CraftedGt*> g;
      for (const auto& x : gts[i]) {
        if (x.hoi == hoi) g.push_back(&x);
      }
      n += static_cast<int>(sel.size());
      tp += true_positives(sel, g, thr);
    }
    rec.push_back(static_cast<double>(tp) / npos);
    prec.push_back(static_cast<double>(tp) / n);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    double envelope = 0.0;
    for (std::size_t j = i; j < prec.size(); ++j) envelope = std::max(envelope, prec[j]);
    ap += (rec[i] - rec[i - 1]) * envelope;
  }
  return ap;
}

}  // namespace

SuiteResult evaluator_suite(int images, double tolerance, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "evaluator";
  Rng rng(seed + 77);
  const HOIVocabulary vocab = HOIVocabulary::synthetic(3, 3, 6, seed);
  std::vector<std::vector<CraftedGt>> gts(static_cast<std::size_t>(images));
  std::vector<std::vector<CraftedDet>> dets(static_cast<std::size_t>(images));
  std::vector<Annotation> anns;
  std::vector<ImageDetections> lib_dets;
  std::set<double> used_scores;
  const auto fresh_score = [&] {
    double s = 0.0;
    do {
      s = uniform(rng, 0.0, 1.0);
    } while (!used_scores.insert(s).second);
    return s;
  };
  for (int i = 0; i < images; ++i) {
    Annotation ann;
    ann.image_id = "img" + std::to_string(i);
    ann.width = ann.height = 64;
    const int n_inst = uniform_int(rng, 1, 3);
    for (int k = 0; k < n_inst; ++k) {
      const int hoi = uniform_int(rng, 0, vocab.num_hoi() - 1);
      GroundTruthInstance inst{random_box(rng), random_box(rng), vocab.object_of(hoi), {vocab.verb_of(hoi)}};
      ann.instances.push_back(inst);
      gts[static_cast<std::size_t>(i)].push_back({hoi, inst.human_box, inst.object_box});
    }
    auto& d = dets[static_cast<std::size_t>(i)];
    for (const auto& g : gts[static_cast<std::size_t>(i)]) {
      const int copies = uniform_int(rng, 0, 3);  // 0 leaves a miss, >1 adds duplicates
      for (int c = 0; c < copies; ++c) d.push_back({g.hoi, fresh_score(), jitter(g.h, rng, 0.25), jitter(g.o, rng, 0.25)});
    }
    const int noise = uniform_int(rng, 0, 3);  // false positives, some for classes absent from the image
    for (int c = 0; c < noise; ++c) {
      d.push_back({uniform_int(rng, 0, vocab.num_hoi() - 1), fresh_score(), random_box(rng), random_box(rng)});
    }
    ImageDetections lib;
    lib.image_id = ann.image_id;
    for (const auto& x : d) lib.triplets.push_back({x.hoi, vocab.verb_of(x.hoi), vocab.object_of(x.hoi), x.score, x.h, x.o, 0});
    anns.push_back(ann);
    lib_dets.push_back(lib);
  }
  const std::vector<int> train_counts(static_cast<std::size_t>(vocab.num_hoi()), 20);
  const EvalResult def = evaluate(anns, lib_dets, vocab, train_counts, EvalSetting::kDefault);
  const EvalResult ko = evaluate(anns, lib_dets, vocab, train_counts, EvalSetting::kKnownObject);

  double worst = 0.0, oracle_sum = 0.0;
  int evaluated = 0;
  bool ko_ok = true;
  std::vector<bool> all(static_cast<std::size_t>(images), true);
  for (int hoi = 0; hoi < vocab.num_hoi(); ++hoi) {
    const double ap = sweep_ap(dets, gts, hoi, all, 0.5);
    if (std::isnan(ap)) continue;
    ++evaluated;
    oracle_sum += ap;
    worst = std::max(worst, std::abs(ap - def.per_category_ap[static_cast<std::size_t>(hoi)]));
    std::vector<bool> with_object(static_cast<std::size_t>(images), false);
    for (int i = 0; i < images; ++i) {
      for (const auto& inst : anns[static_cast<std::size_t>(i)].instances) {
        if (inst.object_class == vocab.object_of(hoi)) with_object[static_cast<std::size_t>(i)] = true;
      }
    }
    const double ap_ko = sweep_ap(dets, gts, hoi, with_object, 0.5);
    worst = std::max(worst, std::abs(ap_ko - ko.per_category_ap[static_cast<std::size_t>(hoi)]));
    if (ko.per_category_ap[static_cast<std::size_t>(hoi)] < def.per_category_ap[static_cast<std::size_t>(hoi)] - 1e-12) {
      ko_ok = false;
    }
  }
  const double oracle_map = evaluated > 0 ? oracle_sum / evaluated : 0.0;
  worst = std::max(worst, std::abs(oracle_map - def.map_full));
  r.seconds = elapsed(start);
  r.passed = worst <= tolerance && ko_ok && evaluated > 0;
  r.metrics = {{"map_default", def.map_full}, {"map_oracle", oracle_map}, {"map_known_object", ko.map_full},
               {"max_abs_diff", worst}, {"categories", evaluated}};
  r.detail = "mAP " + fmt(def.map_full) + " vs oracle " + fmt(oracle_map) + ", max |diff| " + fmt(worst) +
             (ko_ok ? "; Known-Object >= Default per category" : "; Known-Object below Default");
  return r;
}

}  // namespace dqen::tools
