#pragma once

// Optimizer, training loop, batched inference and the component ablation.

#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/evaluation.hpp"
#include "dqen/matching.hpp"
#include "dqen/model.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <iosfwd>
#include <vector>

namespace dqen {

class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Skips frozen parameters and parameters that received no gradient.
  void step(nn::ParamStore& store, double lr);
  [[nodiscard]] int steps_taken() const { return t_; }

 private:
  double wd_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<ag::Matrix> m_, v_;
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(nn::ParamStore& store, double max_norm);

// Linear warmup, then a step drop by lr_drop_factor after lr_drop_fraction of
// the steps.
double learning_rate(const TrainConfig& cfg, int step);

struct PreparedSplit {
  std::vector<SemanticContext> contexts;
  std::vector<ImageTargets> targets;
};

PreparedSplit prepare_split(const Split& split, const EmbeddingProvider& provider, const DqenModel& model);

struct TrainLogRecord {
  int step = 0;
  double total = 0, l_b = 0, l_u = 0, l_c_o = 0, l_c_a = 0, l_ce = 0, l_kd = 0, lr = 0;
};

nlohmann::json to_json(const TrainLogRecord& r);

struct TrainResult {
  std::vector<TrainLogRecord> log;  // every step
  double seconds = 0.0;
};

// Called after every optimizer step; returning false stops training.
using StepCallback = std::function<bool(const TrainLogRecord&)>;

TrainResult train(DqenModel& model, const Split& split, const PreparedSplit& data, const TrainConfig& cfg,
                  std::ostream* jsonl_log = nullptr, const StepCallback& callback = {});

std::vector<ImageDetections> run_inference(const DqenModel& model, const Split& split,
                                           const std::vector<SemanticContext>& contexts);

struct AblationRow {
  bool apu = false;
  bool oqe = false;
  bool iqe = false;
  double full = 0.0;
  double rare = 0.0;
  double nonrare = 0.0;
  int steps = 0;
  double seconds = 0.0;
};

// The eight APU / OQE / IQE combinations in the order: none, APU, OQE, IQE,
// APU+OQE, APU+IQE, OQE+IQE, all. Each trains a fresh model from the base
// config on world.train and evaluates the Default setting on world.test (or
// world.train when there is no test split).
std::vector<AblationRow> run_ablation(const RunConfig& base, const SyntheticWorld& world,
                                      const EmbeddingProvider& provider, std::ostream* progress = nullptr);

std::string format_ablation_table(const std::vector<AblationRow>& rows);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

// Model config sized to the vocabulary with every other field from base.
ModelConfig fit_model_to_vocabulary(ModelConfig base, const HOIVocabulary& vocab);

}  // namespace dqen
