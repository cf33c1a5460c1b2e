#include "dqen/training.hpp"

#include "dqen/errors.hpp"
#include "dqen/log.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace dqen {

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(nn::ParamStore& store, double lr) {
  const auto& params = store.params();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.frozen || !p.var.has_grad()) continue;
    Var v = p.var;
    const ag::Matrix& g = v.node()->grad;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    ag::Matrix& w = v.mutable_value();
    w *= 1.0 - lr * wd_;
    w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double clip_grad_norm(nn::ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params()) {
    if (!p.frozen && p.var.has_grad()) sq += p.var.node()->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& p : store.params()) {
      if (!p.frozen && p.var.has_grad()) p.var.node()->grad *= s;
    }
  }
  return norm;
}

double learning_rate(const TrainConfig& cfg, int step) {
  double lr = cfg.lr;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) lr *= static_cast<double>(step + 1) / cfg.warmup_steps;
  if (step >= static_cast<int>(std::floor(cfg.lr_drop_fraction * cfg.steps))) lr *= cfg.lr_drop_factor;
  return lr;
}

PreparedSplit prepare_split(const Split& split, const EmbeddingProvider& provider, const DqenModel& model) {
  const auto& vocab = model.vocabulary();
  if (provider.dim() != model.config().embed_dim) {
    throw ConfigError("provider dimension " + std::to_string(provider.dim()) + " differs from embed_dim " +
                      std::to_string(model.config().embed_dim));
  }
  if (split.images.size() != split.annotations.size()) throw ConfigError("split images are not loaded");
  const ag::Matrix t_c = provider.text_embed(vocab.text_labels());
  PreparedSplit out;
  for (std::size_t i = 0; i < split.annotations.size(); ++i) {
    const auto& ann = split.annotations[i];
    const auto& img = split.images[i];
    out.contexts.push_back(semantic_context(provider, make_image_ref(ann, &img, vocab), t_c));
    out.targets.push_back(
        make_image_targets(ann, vocab, model.grid_height(img), model.grid_width(img), out.contexts.back().v_c));
  }
  return out;
}

nlohmann::json to_json(const TrainLogRecord& r) {
  return {{"step", r.step}, {"total", r.total}, {"l_b", r.l_b},   {"l_u", r.l_u}, {"l_c_o", r.l_c_o},
          {"l_c_a", r.l_c_a}, {"l_ce", r.l_ce}, {"l_kd", r.l_kd}, {"lr", r.lr}};
}

TrainResult train(DqenModel& model, const Split& split, const PreparedSplit& data, const TrainConfig& cfg,
                  std::ostream* jsonl_log, const StepCallback& callback) {
  cfg.validate();
  const std::size_t n = split.annotations.size();
  if (n == 0 || data.contexts.size() != n || split.images.size() != n) {
    throw ConfigError("training split is empty or not prepared");
  }
  const auto& mcfg = model.config();
  std::vector<bool> mask;
  ForwardOptions options;
  if (!cfg.seen_hoi_ids.empty()) {
    mask.assign(static_cast<std::size_t>(model.vocabulary().num_hoi()), false);
    for (int id : cfg.seen_hoi_ids) {
      if (id < 0 || id >= model.vocabulary().num_hoi()) throw ConfigError("seen_hoi_ids has an unknown id");
      mask[static_cast<std::size_t>(id)] = true;
    }
    if (std::count(mask.begin(), mask.end(), true) < mcfg.k_candidates) {
      throw ConfigError("fewer seen categories than k_candidates");
    }
    options.candidate_mask = &mask;
  }

  AdamW opt(cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const auto batch = static_cast<std::size_t>(std::min<int>(cfg.batch_size, static_cast<int>(n)));

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<ForwardOutputs> outs;
    std::vector<ImageTargets> tgts;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      outs.push_back(model.forward(split.images[i], data.contexts[i], options));
      tgts.push_back(data.targets[i]);
    }
    const LossBreakdown loss = total_loss(outs, tgts, mcfg);
    if (!std::isfinite(loss.total.item())) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    model.params().zero_grad();
    ag::backward(loss.total);
    clip_grad_norm(model.params(), cfg.grad_clip);
    const double lr = learning_rate(cfg, step);
    opt.step(model.params(), lr);

    TrainLogRecord rec{step + 1,         loss.total.item(), loss.l_b.item(),  loss.l_u.item(), loss.l_c_o.item(),
                       loss.l_c_a.item(), loss.l_ce.item(),  loss.l_kd.item(), lr};
    result.log.push_back(rec);
    if (jsonl_log && (cfg.log_every <= 1 || rec.step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      *jsonl_log << to_json(rec).dump() << '\n';
    }
    if (callback && !callback(rec)) break;
  }
  model.params().zero_grad();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<ImageDetections> run_inference(const DqenModel& model, const Split& split,
                                           const std::vector<SemanticContext>& contexts) {
  if (contexts.size() != split.annotations.size() || split.images.size() != split.annotations.size()) {
    throw ConfigError("inference split is not prepared");
  }
  std::vector<ImageDetections> out;
  out.reserve(split.annotations.size());
  for (std::size_t i = 0; i < split.annotations.size(); ++i) {
    out.push_back(model.detect(split.images[i], contexts[i], split.annotations[i].image_id));
  }
  return out;
}

ModelConfig fit_model_to_vocabulary(ModelConfig base, const HOIVocabulary& vocab) {
  base.num_verbs = vocab.num_verbs();
  base.num_objects = vocab.num_objects();
  base.num_hoi = vocab.num_hoi();
  return base;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const SyntheticWorld& world,
                                      const EmbeddingProvider& provider, std::ostream* progress) {
  static constexpr std::array<std::array<bool, 3>, 8> kRows = {{{false, false, false},
                                                                {true, false, false},
                                                                {false, true, false},
                                                                {false, false, true},
                                                                {true, true, false},
                                                                {true, false, true},
                                                                {false, true, true},
                                                                {true, true, true}}};
  const Split& eval_split = world.test.annotations.empty() ? world.train : world.test;
  const auto train_counts = count_hoi_instances(world.train.annotations, world.vocabulary);
  std::vector<AblationRow> rows;
  for (const auto& [apu, oqe, iqe] : kRows) {
    ModelConfig mc = fit_model_to_vocabulary(base.model, world.vocabulary);
    mc.use_apu = apu;
    mc.use_oqe = oqe;
    mc.use_iqe = iqe;
    DqenModel model(mc, world.vocabulary);
    model.initialize_word_tables(&provider);
    const PreparedSplit train_data = prepare_split(world.train, provider, model);
    const TrainResult tr = train(model, world.train, train_data, base.train);
    const PreparedSplit eval_data = prepare_split(eval_split, provider, model);
    const auto dets = run_inference(model, eval_split, eval_data.contexts);
    const EvalResult er = evaluate(eval_split.annotations, dets, world.vocabulary, train_counts,
                                   EvalSetting::kDefault, base.eval);
    rows.push_back({apu, oqe, iqe, er.map_full, er.map_rare, er.map_nonrare, base.train.steps, tr.seconds});
    if (progress) {
      *progress << "ablation APU=" << apu << " OQE=" << oqe << " IQE=" << iqe << " full=" << er.map_full << " ("
                << tr.seconds << " s)\n";
    }
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  const auto mark = [](bool b) { return b ? "x" : "-"; };
  const auto pct = [](double v) {
    if (std::isnan(v)) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
  };
  std::ostringstream os;
  os << "| APU | OQE | IQE | Full | Rare | Non-Rare |\n";
  os << "|-----|-----|-----|------|------|----------|\n";
  for (const auto& r : rows) {
    os << "| " << mark(r.apu) << " | " << mark(r.oqe) << " | " << mark(r.iqe) << " | " << pct(r.full) << " | "
       << pct(r.rare) << " | " << pct(r.nonrare) << " |\n";
  }
  return os.str();
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  const auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"apu", r.apu},
                 {"oqe", r.oqe},
                 {"iqe", r.iqe},
                 {"full", num(r.full)},
                 {"rare", num(r.rare)},
                 {"nonrare", num(r.nonrare)},
                 {"steps", r.steps},
                 {"seconds", r.seconds}});
  }
  return j;
}

}  // namespace dqen
