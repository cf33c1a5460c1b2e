#include "dqen/box.hpp"
#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/errors.hpp"
#include "dqen/evaluation.hpp"
#include "dqen/matching.hpp"
#include "dqen/semantics.hpp"
#include "dqen/training.hpp"
#include "dqen/vocabulary.hpp"
#include "selftest.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;

namespace {

dqen::Box to_box(const std::array<double, 4>& a) { return dqen::Box::from_array(a); }

// Trains on a freshly generated synthetic world and reports train/test mAP.
py::dict run_synthetic(const std::string& config_json) {
  const dqen::RunConfig cfg = dqen::run_config_from_json(nlohmann::json::parse(config_json));
  cfg.validate();
  const dqen::SyntheticWorld world = dqen::generate_synthetic_world(cfg.world);
  const dqen::ModelConfig mc = dqen::fit_model_to_vocabulary(cfg.model, world.vocabulary);
  const auto provider = dqen::mock_provider(world.vocabulary, cfg.provider.seed, cfg.provider.dim, cfg.provider.noise);
  dqen::DqenModel model(mc, world.vocabulary);
  model.initialize_word_tables(provider.get());
  const auto train_data = dqen::prepare_split(world.train, *provider, model);
  const dqen::TrainResult tr = [&] {
    py::gil_scoped_release release;
    return dqen::train(model, world.train, train_data, cfg.train);
  }();
  const auto counts = dqen::count_hoi_instances(world.train.annotations, world.vocabulary);
  auto score = [&](const dqen::Split& split) {
    const auto data = dqen::prepare_split(split, *provider, model);
    const auto dets = dqen::run_inference(model, split, data.contexts);
    return dqen::evaluate(split.annotations, dets, world.vocabulary, counts, dqen::EvalSetting::kDefault, cfg.eval)
        .map_full;
  };
  py::dict out;
  out["steps"] = tr.log.size();
  out["final_loss"] = tr.log.empty() ? 0.0 : tr.log.back().total;
  out["train_map"] = score(world.train);
  if (!world.test.annotations.empty()) out["test_map"] = score(world.test);
  return out;
}

}  // namespace

PYBIND11_MODULE(_dqen, m) {
  m.doc() = "DQEN core: geometry, assignment, retrieval scoring, evaluation and a synthetic training run";

  py::register_exception<dqen::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<dqen::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<dqen::FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<dqen::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("iou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) { return dqen::iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"), "IoU of two (cx, cy, w, h) boxes");
  m.def("giou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) { return dqen::giou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));

  m.def(
      "hungarian",
      [](const Eigen::MatrixXd& cost) {
        const dqen::Assignment a = dqen::hungarian(dqen::ag::Matrix(cost));
        return py::make_tuple(a.pairs, a.cost);
      },
      py::arg("cost"), "minimum-cost assignment: ([(row, col), ...], total cost)");

  m.def(
      "select_candidates",
      [](const Eigen::VectorXd& m_sim, int k) {
        const auto c = dqen::select_candidates(m_sim, k);
        return py::make_tuple(c.hoi_ids, c.similarities);
      },
      py::arg("m_sim"), py::arg("k"));
  m.def(
      "training_free_scores",
      [](const Eigen::VectorXd& m_sim, int r, const std::string& norm) {
        if (norm != "softmax" && norm != "minmax") throw dqen::ConfigError("norm must be 'softmax' or 'minmax'");
        return Eigen::VectorXd(dqen::training_free_scores(
            m_sim, r, norm == "softmax" ? dqen::TrainingFreeNorm::kSoftmax : dqen::TrainingFreeNorm::kMinMax));
      },
      py::arg("m_sim"), py::arg("r"), py::arg("norm") = "softmax");

  m.def(
      "average_precision",
      [](const std::vector<bool>& flags, int num_positives) { return dqen::average_precision(flags, num_positives); },
      py::arg("flags"), py::arg("num_positives"), "all-point VOC AP of TP flags in descending score order");

  m.def(
      "text_label", [](const std::string& gerund, const std::string& object) { return dqen::render_text_label(gerund, object); },
      py::arg("gerund"), py::arg("object"));

  m.def(
      "default_config", [] { return dqen::to_json(dqen::RunConfig{}).dump(); }, "default run configuration as JSON");
  m.def(
      "resolve_config",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        nlohmann::json doc = nlohmann::json::parse(config_json);
        for (const auto& o : overrides) dqen::apply_override(doc, o);
        const dqen::RunConfig cfg = dqen::run_config_from_json(doc);
        cfg.validate();
        return dqen::to_json(cfg).dump();
      },
      py::arg("config_json"), py::arg("overrides") = std::vector<std::string>{});

  m.def("run_synthetic", &run_synthetic, py::arg("config_json"));

  m.def(
      "selftest",
      [](const std::string& filter) {
        std::ostringstream os;
        const int rc = dqen::tools::run_selftest(os, filter);
        return py::make_tuple(rc == 0, os.str());
      },
      py::arg("filter") = "");
}
