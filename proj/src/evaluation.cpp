#include "dqen/evaluation.hpp"

#include "dqen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace dqen {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct PooledDetection {
  double score;
  int image;
  Box human;
  Box object;
};

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sorted pooled detections against per-image ground truth, greedy one-to-one.
std::vector<bool> match_pooled(std::vector<PooledDetection>& dets, std::vector<std::vector<PairBoxes>>& gts,
                               double thr, bool use_objects_only) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const PooledDetection& a, const PooledDetection& b) { return a.score > b.score; });
  std::vector<std::vector<char>> used(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
  std::vector<bool> flags;
  flags.reserve(dets.size());
  for (const auto& d : dets) {
    const auto& g = gts[static_cast<std::size_t>(d.image)];
    auto& u = used[static_cast<std::size_t>(d.image)];
    double best = -1.0;
    int best_j = -1;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (u[j]) continue;
      const double ov = use_objects_only ? iou(d.object, g[j].object)
                                         : std::min(iou(d.human, g[j].human), iou(d.object, g[j].object));
      if (ov > best) {
        best = ov;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best > thr) {
      u[static_cast<std::size_t>(best_j)] = 1;
      flags.push_back(true);
    } else {
      flags.push_back(false);
    }
  }
  return flags;
}

}  // namespace

std::vector<bool> match_predictions(const std::vector<ScoredPair>& preds, const std::vector<PairBoxes>& gts,
                                    double iou_threshold) {
  std::vector<PooledDetection> dets;
  for (const auto& p : preds) dets.push_back({p.score, 0, p.human, p.object});
  std::vector<std::vector<PairBoxes>> g{gts};
  return match_pooled(dets, g, iou_threshold, false);
}

double average_precision(const std::vector<bool>& flags, int num_positives, ApInterpolation mode) {
  if (num_positives <= 0) throw ConfigError("average precision needs at least one positive");
  const std::size_t n = flags.size();
  std::vector<double> prec(n), rec(n);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (flags[i] ? tp : fp) += 1.0;
    rec[i] = tp / num_positives;
    prec[i] = tp / (tp + fp);
  }
  if (mode == ApInterpolation::kElevenPoint) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (rec[i] >= r) p = std::max(p, prec[i]);
      }
      ap += p / 11.0;
    }
    return ap;
  }
  // Precision envelope, then sum of rectangle areas at each recall step.
  std::vector<double> mpre(n + 2, 0.0), mrec(n + 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    mpre[i + 1] = prec[i];
    mrec[i + 1] = rec[i];
  }
  mrec[n + 1] = 1.0;
  for (std::size_t i = n + 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < n + 2; ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

double average_precision(const std::vector<bool>& flags, const std::vector<double>& scores, int num_positives,
                         ApInterpolation mode) {
  if (flags.size() != scores.size()) throw ShapeError("flags and scores differ in length");
  std::vector<std::size_t> order(flags.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> sorted;
  for (auto i : order) sorted.push_back(flags[i]);
  return average_precision(sorted, num_positives, mode);
}

EvalResult evaluate(const std::vector<Annotation>& test, const std::vector<ImageDetections>& detections,
                    const HOIVocabulary& vocab, const std::vector<int>& train_counts, EvalSetting setting,
                    const EvalConfig& cfg) {
  const int nh = vocab.num_hoi();
  if (static_cast<int>(train_counts.size()) != nh) throw ShapeError("training counts do not match the vocabulary");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!index.emplace(test[i].image_id, i).second) throw FormatError("duplicate image id " + test[i].image_id);
  }
  // gts[n][image] and the per-image object-class presence.
  std::vector<std::vector<std::vector<PairBoxes>>> gts(static_cast<std::size_t>(nh),
                                                       std::vector<std::vector<PairBoxes>>(test.size()));
  std::vector<std::vector<char>> has_object(test.size(), std::vector<char>(static_cast<std::size_t>(vocab.num_objects()), 0));
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (const auto& inst : test[i].instances) {
      has_object[i][static_cast<std::size_t>(inst.object_class)] = 1;
      for (int id : instance_hoi_ids(inst, vocab)) {
        gts[static_cast<std::size_t>(id)][i].push_back({inst.human_box, inst.object_box});
      }
    }
  }
  std::vector<std::vector<PooledDetection>> dets(static_cast<std::size_t>(nh));
  for (const auto& d : detections) {
    const auto it = index.find(d.image_id);
    if (it == index.end()) continue;
    for (const auto& t : d.triplets) {
      if (t.hoi_id < 0 || t.hoi_id >= nh) throw FormatError("detection with unknown hoi id " + std::to_string(t.hoi_id));
      dets[static_cast<std::size_t>(t.hoi_id)].push_back({t.score, static_cast<int>(it->second), t.human_box, t.object_box});
    }
  }

  EvalResult r;
  r.setting = setting;
  r.per_category_ap.assign(static_cast<std::size_t>(nh), kNaN);
  r.test_counts.assign(static_cast<std::size_t>(nh), 0);
  r.rare.assign(static_cast<std::size_t>(nh), false);
  std::vector<double> all, rare, nonrare;
  for (int n = 0; n < nh; ++n) {
    const auto sn = static_cast<std::size_t>(n);
    r.rare[sn] = train_counts[sn] < cfg.rare_threshold;
    int positives = 0;
    for (const auto& g : gts[sn]) positives += static_cast<int>(g.size());
    r.test_counts[sn] = positives;
    if (positives == 0) continue;
    std::vector<PooledDetection> pool;
    const int obj = vocab.object_of(n);
    for (const auto& d : dets[sn]) {
      if (setting == EvalSetting::kKnownObject && !has_object[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(obj)]) {
        continue;
      }
      pool.push_back(d);
    }
    const auto flags = match_pooled(pool, gts[sn], cfg.iou_threshold, false);
    const double ap = average_precision(flags, positives, cfg.ap_mode);
    r.per_category_ap[sn] = ap;
    all.push_back(ap);
    (r.rare[sn] ? rare : nonrare).push_back(ap);
  }
  r.categories_evaluated = static_cast<int>(all.size());
  r.map_full = all.empty() ? 0.0 : mean_or_nan(all);
  r.map_rare = mean_or_nan(rare);
  r.map_nonrare = mean_or_nan(nonrare);
  return r;
}

double evaluate_object_detection(const std::vector<Annotation>& test, const std::vector<ImageDetections>& detections,
                                 int num_objects, const EvalConfig& cfg) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < test.size(); ++i) index.emplace(test[i].image_id, i);
  std::vector<std::vector<std::vector<PairBoxes>>> gts(static_cast<std::size_t>(num_objects),
                                                       std::vector<std::vector<PairBoxes>>(test.size()));
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (const auto& inst : test[i].instances) {
      auto& g = gts[static_cast<std::size_t>(inst.object_class)][i];
      const bool seen = std::any_of(g.begin(), g.end(), [&](const PairBoxes& p) { return p.object == inst.object_box; });
      if (!seen) g.push_back({Box{}, inst.object_box});
    }
  }
  std::vector<std::vector<PooledDetection>> dets(static_cast<std::size_t>(num_objects));
  for (const auto& d : detections) {
    const auto it = index.find(d.image_id);
    if (it == index.end()) continue;
    for (const auto& o : d.objects) {
      if (o.object_id < 0 || o.object_id >= num_objects) throw FormatError("object detection with unknown class");
      dets[static_cast<std::size_t>(o.object_id)].push_back({o.score, static_cast<int>(it->second), Box{}, o.box});
    }
  }
  std::vector<double> aps;
  for (int c = 0; c < num_objects; ++c) {
    const auto sc = static_cast<std::size_t>(c);
    int positives = 0;
    for (const auto& g : gts[sc]) positives += static_cast<int>(g.size());
    if (positives == 0) continue;
    const auto flags = match_pooled(dets[sc], gts[sc], cfg.iou_threshold, true);
    aps.push_back(average_precision(flags, positives, cfg.ap_mode));
  }
  return aps.empty() ? 0.0 : mean_or_nan(aps);
}

nlohmann::json to_json(const EvalResult& r, const HOIVocabulary& vocab) {
  const auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j;
  j["setting"] = r.setting == EvalSetting::kDefault ? "default" : "known_object";
  j["map_full"] = r.map_full;
  j["map_rare"] = num(r.map_rare);
  j["map_nonrare"] = num(r.map_nonrare);
  j["categories_evaluated"] = r.categories_evaluated;
  j["per_category"] = nlohmann::json::array();
  for (int n = 0; n < vocab.num_hoi(); ++n) {
    const auto sn = static_cast<std::size_t>(n);
    j["per_category"].push_back({{"hoi_id", n},
                                 {"label", vocab.text_label(n)},
                                 {"ap", num(r.per_category_ap[sn])},
                                 {"test_instances", r.test_counts[sn]},
                                 {"rare", r.rare[sn]}});
  }
  return j;
}

}  // namespace dqen
