#include "dqen/attention.hpp"

#include "dqen/errors.hpp"

#include <cmath>
#include <fstream>

namespace dqen {

namespace {

std::vector<std::uint8_t> render(const Eigen::RowVectorXd& row) {
  const double mx = row.maxCoeff();
  std::vector<std::uint8_t> px(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    px[static_cast<std::size_t>(i)] = mx > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * row(i) / mx)) : 0;
  }
  return px;
}

}  // namespace

AttentionExport export_attention_maps(const DqenModel& model, const Image& image, const SemanticContext& ctx,
                                      const std::filesystem::path& dir, int query_index) {
  ag::NoGradGuard no_grad;
  ForwardOptions opts;
  opts.record_attention = true;
  const ForwardOutputs out = model.forward(image, ctx, opts);
  const int nq = model.config().num_queries;
  if (query_index < 0) {
    const auto preds = model.triplet_predictions(out, ctx);
    double best = -1e300;
    for (const auto& p : preds) {
      const double s = p.final_scores.maxCoeff();
      if (s > best) {
        best = s;
        query_index = p.query_index;
      }
    }
  }
  if (query_index >= nq) throw ConfigError("query index out of range");
  std::filesystem::create_directories(dir);
  const int h = out.features.height;
  const int w = out.features.width;

  AttentionExport result;
  nlohmann::json values;
  values["grid"] = {h, w};
  values["query_index"] = query_index;
  values["maps"] = nlohmann::json::array();
  const auto dump = [&](const std::string& decoder, const std::vector<nn::AttentionTrace>& traces, int row) {
    for (std::size_t l = 0; l < traces.size(); ++l) {
      for (std::size_t head = 0; head < traces[l].heads.size(); ++head) {
        const Eigen::RowVectorXd a = traces[l].heads[head].row(row);
        const auto name = decoder + "_l" + std::to_string(l) + "_h" + std::to_string(head) + ".pgm";
        write_pgm(dir / name, w, h, render(a));
        result.images.push_back(dir / name);
        values["maps"].push_back({{"file", name},
                                  {"decoder", decoder},
                                  {"layer", l},
                                  {"head", head},
                                  {"weights", std::vector<double>(a.data(), a.data() + a.size())}});
      }
    }
  };
  dump("instance_human", out.instance_cross, query_index);
  dump("instance_object", out.instance_cross, nq + query_index);
  dump("interaction", out.interaction_cross, query_index);
  result.values = dir / "attention.json";
  std::ofstream f(result.values);
  f << values.dump(1) << '\n';
  return result;
}

}  // namespace dqen
