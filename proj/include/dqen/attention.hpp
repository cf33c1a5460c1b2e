#pragma once

// Decoder cross-attention export as grayscale token-grid images.

#include "dqen/model.hpp"

#include <filesystem>

namespace dqen {

struct AttentionExport {
  std::vector<std::filesystem::path> images;
  std::filesystem::path values;  // JSON with the raw weights that were rendered
};

// For the given query (or the query with the highest final score when
// query_index < 0) writes one PGM per decoder, layer and head. Each map is
// the query's attention row reshaped to the token grid and scaled so its
// maximum is 255.
AttentionExport export_attention_maps(const DqenModel& model, const Image& image, const SemanticContext& ctx,
                                      const std::filesystem::path& dir, int query_index = -1);

}  // namespace dqen
