// dqen: command-line driver for data generation, embedding caching,
// training, inference, evaluation and the diagnostic tools.

#include "dqen/attention.hpp"
#include "dqen/checkpoint.hpp"
#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/embedding_cache.hpp"
#include "dqen/errors.hpp"
#include "dqen/evaluation.hpp"
#include "dqen/log.hpp"
#include "dqen/semantics.hpp"
#include "dqen/training.hpp"

#include "selftest.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.overrides, "override, e.g. --set train.steps=100")->take_all();
  cmd->add_option("--seed", opts.seed, "seed for every random stream of this command");
}

dqen::RunConfig resolve(const CommonOptions& opts) {
  const fs::path path(opts.config);
  dqen::RunConfig cfg = dqen::resolve_run_config(opts.config.empty() ? nullptr : &path, opts.overrides);
  if (opts.seed) {
    cfg.world.seed = *opts.seed;
    cfg.model.seed = *opts.seed;
    cfg.train.seed = *opts.seed;
  }
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw dqen::FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dqen::FormatError("cannot read " + path.string());
  return json::parse(in);
}

// Every command that produces an output directory records what it ran with.
void write_snapshot(const fs::path& dir, const std::string& command, const dqen::RunConfig& cfg,
                    std::uint64_t seed, json extra = json::object()) {
  extra["command"] = command;
  extra["seed"] = seed;
  extra["config"] = dqen::to_json(cfg);
  write_json(dir / "resolved_config.json", extra);
}

dqen::HOIVocabulary load_vocabulary(const fs::path& data) { return dqen::HOIVocabulary::load(data / "vocabulary.json"); }

dqen::Split load_named_split(const fs::path& data, const std::string& name, bool images = true) {
  if (!fs::exists(data / name / "annotations.json")) {
    throw dqen::FormatError("split '" + name + "' not found under " + data.string());
  }
  return dqen::load_split(data / name, images);
}

std::unique_ptr<dqen::EmbeddingProvider> make_provider(const std::string& cache_dir, const dqen::RunConfig& cfg,
                                                       const dqen::HOIVocabulary& vocab) {
  if (!cache_dir.empty()) {
    return std::make_unique<dqen::CachedEmbeddingProvider>(dqen::load_embedding_cache(cache_dir, cfg.model.embed_dim));
  }
  if (cfg.provider.kind != "mock") {
    throw dqen::ConfigError("provider kind '" + cfg.provider.kind + "' needs a prebuilt --cache directory");
  }
  return dqen::mock_provider(vocab, cfg.provider.seed, cfg.provider.dim, cfg.provider.noise);
}

std::vector<int> parse_k_range(const std::string& spec) {
  std::vector<int> ks;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dots = part.find("..");
    try {
      if (dots == std::string::npos) {
        ks.push_back(std::stoi(part));
      } else {
        const int lo = std::stoi(part.substr(0, dots));
        const int hi = std::stoi(part.substr(dots + 2));
        for (int k = lo; k <= hi; ++k) ks.push_back(k);
      }
    } catch (const std::logic_error&) {
      throw dqen::ConfigError("bad K list '" + spec + "'; use e.g. 1..32 or 1,2,4,8");
    }
  }
  if (ks.empty()) throw dqen::ConfigError("empty K list");
  return ks;
}

std::string coverage_svg(const std::vector<int>& ks, const std::vector<double>& cov) {
  const double w = 480, h = 320, left = 50, bottom = 40, top = 20, right = 20;
  const int kmax = *std::max_element(ks.begin(), ks.end());
  const auto px = [&](int k) { return left + (w - left - right) * (kmax > 1 ? (k - 1.0) / (kmax - 1.0) : 0.5); };
  const auto py = [&](double c) { return top + (h - top - bottom) * (1.0 - c); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << w - right << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  for (double c = 0.0; c <= 1.0001; c += 0.25) {
    os << "<text x=\"" << left - 8 << "\" y=\"" << py(c) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << c
       << "</text>\n";
  }
  os << "<text x=\"" << (w + left) / 2 << "\" y=\"" << h - 8 << "\" font-size=\"12\" text-anchor=\"middle\">K</text>\n";
  os << "<text x=\"14\" y=\"" << (h - bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 "
     << (h - bottom) / 2 << ")\" text-anchor=\"middle\">coverage</text>\n";
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < ks.size(); ++i) os << px(ks[i]) << ',' << py(cov[i]) << ' ';
  os << "\"/>\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    os << "<circle cx=\"" << px(ks[i]) << "\" cy=\"" << py(cov[i]) << "\" r=\"2.5\" fill=\"steelblue\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

// --- commands ------------------------------------------------------------

int cmd_gen(const CommonOptions& opts, const std::string& out) {
  const dqen::RunConfig cfg = resolve(opts);
  const dqen::SyntheticWorld world = dqen::generate_synthetic_world(cfg.world);
  const fs::path dir(out);
  fs::create_directories(dir);
  world.vocabulary.save(dir / "vocabulary.json");
  dqen::save_split(dir / "train", world.train, "vocabulary.json");
  if (!world.test.annotations.empty()) dqen::save_split(dir / "test", world.test, "vocabulary.json");
  write_snapshot(dir, "gen", cfg, cfg.world.seed);
  std::cout << "wrote " << world.train.annotations.size() << " train and " << world.test.annotations.size()
            << " test images, " << world.vocabulary.num_hoi() << " HOI categories to " << dir.string() << '\n';
  return 0;
}

int cmd_cache(const CommonOptions& opts, const std::string& data, const std::string& out, bool overwrite) {
  const dqen::RunConfig cfg = resolve(opts);
  const auto vocab = load_vocabulary(data);
  const auto provider = make_provider("", cfg, vocab);
  std::vector<dqen::Split> splits;
  for (const char* name : {"train", "test"}) {
    if (fs::exists(fs::path(data) / name / "annotations.json")) splits.push_back(load_named_split(data, name));
  }
  std::vector<const dqen::Split*> ptrs;
  for (const auto& s : splits) ptrs.push_back(&s);
  const json manifest = dqen::embedding_cache_build(ptrs, *provider, vocab, out, overwrite);
  std::cout << "cache " << out << ": provider " << manifest.at("provider_id").get<std::string>() << ", D="
            << manifest.at("dim").get<int>() << '\n';
  return 0;
}

int cmd_train(const CommonOptions& opts, const std::string& data, const std::string& cache, const std::string& out) {
  dqen::RunConfig cfg = resolve(opts);
  const auto vocab = load_vocabulary(data);
  cfg.model = dqen::fit_model_to_vocabulary(cfg.model, vocab);
  const auto provider = make_provider(cache, cfg, vocab);
  const dqen::Split split = load_named_split(data, "train");

  dqen::DqenModel model(cfg.model, vocab);
  model.initialize_word_tables(provider.get());
  const dqen::PreparedSplit prepared = dqen::prepare_split(split, *provider, model);

  const fs::path dir(out);
  fs::create_directories(dir);
  write_snapshot(dir, "train", cfg, cfg.train.seed, {{"provider_id", provider->provider_id()}});
  std::ofstream log(dir / "train_log.jsonl");
  const dqen::TrainResult result = dqen::train(model, split, prepared, cfg.train, &log, [&](const dqen::TrainLogRecord& r) {
    if (cfg.train.log_every > 0 && r.step % cfg.train.log_every == 0) {
      std::cout << "step " << r.step << " loss " << r.total << '\n';
    }
    return true;
  });
  const json extra{{"steps", result.log.size()},
                   {"final_loss", result.log.empty() ? 0.0 : result.log.back().total},
                   {"provider_id", provider->provider_id()}};
  dqen::save_checkpoint(dir / "model.ckpt", model, extra);
  std::cout << "trained " << result.log.size() << " steps in " << std::fixed << std::setprecision(1) << result.seconds
            << " s; checkpoint " << (dir / "model.ckpt").string() << '\n';
  return 0;
}

// Ground-truth boxes as scored detections; a sanity input for the evaluator.
std::vector<dqen::ImageDetections> oracle_detections(const dqen::Split& split, const dqen::HOIVocabulary& vocab) {
  std::vector<dqen::ImageDetections> out;
  for (const auto& ann : split.annotations) {
    dqen::ImageDetections d;
    d.image_id = ann.image_id;
    for (std::size_t q = 0; q < ann.instances.size(); ++q) {
      const auto& inst = ann.instances[q];
      for (int hoi : dqen::instance_hoi_ids(inst, vocab)) {
        d.triplets.push_back({hoi, vocab.verb_of(hoi), inst.object_class, 1.0, inst.human_box, inst.object_box,
                              static_cast<int>(q)});
      }
      d.objects.push_back({inst.object_class, 1.0, inst.object_box});
    }
    out.push_back(std::move(d));
  }
  return out;
}

int cmd_infer(const CommonOptions& opts, const std::string& data, const std::string& split_name,
              const std::string& checkpoint, const std::string& cache, const std::string& out, bool from_gt) {
  dqen::RunConfig cfg = resolve(opts);
  const fs::path out_path(out);
  if (from_gt) {
    const auto vocab = load_vocabulary(data);
    dqen::save_detections(out_path, oracle_detections(load_named_split(data, split_name, false), vocab));
    std::cout << "wrote ground-truth detections to " << out << '\n';
    return 0;
  }
  if (checkpoint.empty()) throw dqen::ConfigError("infer needs --checkpoint (or --from-ground-truth)");
  dqen::LoadedCheckpoint ck = dqen::load_checkpoint(checkpoint);
  const auto& vocab = ck.model->vocabulary();
  cfg.model = ck.model->config();
  const auto provider = make_provider(cache, cfg, vocab);
  const dqen::Split split = load_named_split(data, split_name);
  const dqen::PreparedSplit prepared = dqen::prepare_split(split, *provider, *ck.model);
  const auto dets = dqen::run_inference(*ck.model, split, prepared.contexts);
  dqen::save_detections(out_path, dets);
  if (out_path.has_parent_path()) {
    write_snapshot(out_path.parent_path(), "infer", cfg, cfg.model.seed,
                   {{"checkpoint", checkpoint}, {"split", split_name}});
  }
  std::cout << "wrote detections for " << dets.size() << " images to " << out << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& opts, const std::string& data, const std::string& split_name,
             const std::string& detections, const std::string& out) {
  const dqen::RunConfig cfg = resolve(opts);
  const auto vocab = load_vocabulary(data);
  const dqen::Split split = load_named_split(data, split_name, false);
  const dqen::Split train = fs::exists(fs::path(data) / "train" / "annotations.json")
                                ? load_named_split(data, "train", false)
                                : split;
  const auto counts = dqen::count_hoi_instances(train.annotations, vocab);
  const auto dets = dqen::load_detections(detections);

  json report;
  for (const auto setting : {dqen::EvalSetting::kDefault, dqen::EvalSetting::kKnownObject}) {
    const dqen::EvalResult r = dqen::evaluate(split.annotations, dets, vocab, counts, setting, cfg.eval);
    const std::string name = setting == dqen::EvalSetting::kDefault ? "default" : "known_object";
    report[name] = dqen::to_json(r, vocab);
    std::cout << std::left << std::setw(13) << name << " mAP full " << fmt_metric(r.map_full) << "  rare "
              << fmt_metric(r.map_rare) << "  non-rare " << fmt_metric(r.map_nonrare) << '\n';
  }
  report["object_map"] = dqen::evaluate_object_detection(split.annotations, dets, vocab.num_objects(), cfg.eval);
  report["split"] = split_name;
  report["detections"] = detections;
  if (!out.empty()) {
    write_json(out, report);
    const fs::path parent = fs::path(out).parent_path();
    write_snapshot(parent.empty() ? fs::path(".") : parent, "eval", cfg, cfg.train.seed, {{"split", split_name}});
  }
  return 0;
}

int cmd_coverage(const CommonOptions& opts, const std::string& data, const std::string& split_name,
                 const std::string& cache, const std::string& k_spec, const std::string& out) {
  const dqen::RunConfig cfg = resolve(opts);
  const auto vocab = load_vocabulary(data);
  const auto provider = make_provider(cache, cfg, vocab);
  const dqen::Split split = load_named_split(data, split_name, false);
  std::vector<int> ks;
  for (int k : parse_k_range(k_spec)) {
    if (k < 1) throw dqen::ConfigError("K must be at least 1");
    ks.push_back(k);
  }
  std::vector<double> cov;
  for (int k : ks) cov.push_back(dqen::candidate_coverage(split.annotations, nullptr, *provider, vocab, k));

  const fs::path dir(out);
  fs::create_directories(dir);
  std::ofstream csv(dir / "coverage.csv");
  csv << "K,coverage\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ks.size(); ++i) csv << ks[i] << ',' << cov[i] << '\n';
  std::ofstream(dir / "coverage.svg") << coverage_svg(ks, cov);
  write_snapshot(dir, "coverage", cfg, cfg.provider.seed, {{"split", split_name}, {"k", ks}});
  for (std::size_t i = 0; i < ks.size(); ++i) std::cout << "K=" << ks[i] << " coverage " << fmt_metric(cov[i]) << '\n';
  return 0;
}

int cmd_ablate(const CommonOptions& opts, const std::string& data, const std::string& cache, const std::string& out) {
  dqen::RunConfig cfg = resolve(opts);
  dqen::SyntheticWorld world;
  world.vocabulary = load_vocabulary(data);
  world.train = load_named_split(data, "train");
  if (fs::exists(fs::path(data) / "test" / "annotations.json")) world.test = load_named_split(data, "test");
  cfg.model = dqen::fit_model_to_vocabulary(cfg.model, world.vocabulary);
  const auto provider = make_provider(cache, cfg, world.vocabulary);
  const auto rows = dqen::run_ablation(cfg, world, *provider, &std::cout);
  const fs::path dir(out);
  fs::create_directories(dir);
  const std::string table = dqen::format_ablation_table(rows);
  std::ofstream(dir / "ablation.md") << table;
  write_json(dir / "ablation.json", dqen::to_json(rows));
  write_snapshot(dir, "ablate", cfg, cfg.train.seed);
  std::cout << table;
  return 0;
}

int cmd_attention(const CommonOptions& opts, const std::string& data, const std::string& split_name,
                  const std::string& checkpoint, const std::string& cache, const std::string& image_id, int query,
                  const std::string& out) {
  dqen::RunConfig cfg = resolve(opts);
  dqen::LoadedCheckpoint ck = dqen::load_checkpoint(checkpoint);
  cfg.model = ck.model->config();
  const auto& vocab = ck.model->vocabulary();
  const auto provider = make_provider(cache, cfg, vocab);
  const dqen::Split split = load_named_split(data, split_name);
  std::size_t idx = 0;
  if (!image_id.empty()) {
    while (idx < split.annotations.size() && split.annotations[idx].image_id != image_id) ++idx;
    if (idx == split.annotations.size()) throw dqen::ConfigError("image '" + image_id + "' not in split");
  }
  const auto& ann = split.annotations.at(idx);
  const dqen::Image& img = split.images.at(idx);
  const dqen::ImageRef ref = dqen::make_image_ref(ann, &img, vocab);
  const dqen::SemanticContext ctx = dqen::semantic_context(*provider, ref, provider->text_embed(vocab.text_labels()));
  const dqen::AttentionExport ex = dqen::export_attention_maps(*ck.model, img, ctx, out, query);
  write_snapshot(out, "attention", cfg, cfg.model.seed, {{"image_id", ann.image_id}, {"checkpoint", checkpoint}});
  std::cout << "wrote " << ex.images.size() << " attention maps for " << ann.image_id << " to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DQEN human-object interaction detector"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string data, out, cache, checkpoint, split = "test", detections, k_spec = "1..32", image_id;
  bool overwrite = false, from_gt = false;
  int query = -1;
  std::string selftest_filter;

  auto* gen = app.add_subcommand("gen", "generate a synthetic HOI world");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();

  auto* cache_cmd = app.add_subcommand("cache", "embed labels and images into an embedding cache");
  add_common(cache_cmd, common);
  cache_cmd->add_option("--data", data, "dataset directory")->required();
  cache_cmd->add_option("--out", out, "cache directory")->required();
  cache_cmd->add_flag("--overwrite", overwrite, "replace a cache written by another provider");

  auto* train = app.add_subcommand("train", "train a model on the train split");
  add_common(train, common);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--cache", cache, "embedding cache (default: live mock provider)");
  train->add_option("--out", out, "run directory")->required();

  auto* infer = app.add_subcommand("infer", "write detections for a split");
  add_common(infer, common);
  infer->add_option("--data", data, "dataset directory")->required();
  infer->add_option("--split", split, "split name")->capture_default_str();
  infer->add_option("--checkpoint", checkpoint, "model checkpoint");
  infer->add_option("--cache", cache, "embedding cache");
  infer->add_option("--out", out, "detections JSONL")->required();
  infer->add_flag("--from-ground-truth", from_gt, "emit the annotations as detections");

  auto* eval = app.add_subcommand("eval", "score detections against a split");
  add_common(eval, common);
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--split", split, "split name")->capture_default_str();
  eval->add_option("--detections", detections, "detections JSONL")->required();
  eval->add_option("--out", out, "report JSON");

  auto* coverage = app.add_subcommand("coverage", "candidate coverage as a function of K");
  add_common(coverage, common);
  coverage->add_option("--data", data, "dataset directory")->required();
  coverage->add_option("--split", split, "split name")->capture_default_str();
  coverage->add_option("--cache", cache, "embedding cache");
  coverage->add_option("--k", k_spec, "K values, e.g. 1..32 or 1,4,8")->capture_default_str();
  coverage->add_option("--out", out, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train and score the eight APU/OQE/IQE combinations");
  add_common(ablate, common);
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--cache", cache, "embedding cache");
  ablate->add_option("--out", out, "output directory")->required();

  auto* attention = app.add_subcommand("attention", "export decoder cross-attention maps");
  add_common(attention, common);
  attention->add_option("--data", data, "dataset directory")->required();
  attention->add_option("--split", split, "split name")->capture_default_str();
  attention->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  attention->add_option("--cache", cache, "embedding cache");
  attention->add_option("--image-id", image_id, "image to render (default: first of the split)");
  attention->add_option("--query", query, "query index (default: highest-scoring)");
  attention->add_option("--out", out, "output directory")->required();

  auto* selftest = app.add_subcommand("selftest", "run the built-in invariant suites");
  selftest->add_option("--filter", selftest_filter, "only suites whose name contains this");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(common, out);
    if (*cache_cmd) return cmd_cache(common, data, out, overwrite);
    if (*train) return cmd_train(common, data, cache, out);
    if (*infer) return cmd_infer(common, data, split, checkpoint, cache, out, from_gt);
    if (*eval) return cmd_eval(common, data, split, detections, out);
    if (*coverage) return cmd_coverage(common, data, split, cache, k_spec, out);
    if (*ablate) return cmd_ablate(common, data, cache, out);
    if (*attention) return cmd_attention(common, data, split, checkpoint, cache, image_id, query, out);
    if (*selftest) return dqen::tools::run_selftest(std::cout, selftest_filter);
  } catch (const dqen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
