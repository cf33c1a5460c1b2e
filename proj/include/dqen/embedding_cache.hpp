#pragma once

// Write-once store of provider outputs: manifest.json plus raw float32
// little-endian row-major payloads (text.f32: labels x D, image.f32: images x D).

#include "dqen/semantics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace dqen {

struct EmbeddingCache {
  std::string provider_id;
  int dim = 0;
  std::vector<std::string> labels;
  std::vector<std::string> image_ids;
  ag::Matrix text;   // (labels, D)
  ag::Matrix image;  // (images, D)

  [[nodiscard]] Vector image_embedding(const std::string& image_id) const;
  [[nodiscard]] ag::Matrix text_embed(const std::vector<std::string>& wanted) const;  // (D, N)
  [[nodiscard]] bool has_image(const std::string& image_id) const;

  void build_index();

 private:
  std::unordered_map<std::string, std::size_t> label_index_;
  std::unordered_map<std::string, std::size_t> image_index_;
};

// Embeds every HOI text label, every word prompt and every image of the given
// splits. If a cache from the same provider already exists at `dir` it is left
// untouched and its manifest returned; a different provider is an error
// unless overwrite is set.
nlohmann::json embedding_cache_build(const std::vector<const Split*>& splits, const EmbeddingProvider& provider,
                                     const HOIVocabulary& vocab, const std::filesystem::path& dir,
                                     bool overwrite = false);

// expected_dim <= 0 skips the dimension check.
EmbeddingCache load_embedding_cache(const std::filesystem::path& dir, int expected_dim = 0);

// Provider backed by a loaded cache; unknown labels or images are errors.
class CachedEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit CachedEmbeddingProvider(EmbeddingCache cache) : cache_(std::move(cache)) {}
  [[nodiscard]] std::string provider_id() const override { return cache_.provider_id; }
  [[nodiscard]] int dim() const override { return cache_.dim; }
  [[nodiscard]] Vector image_embed(const ImageRef& image) const override {
    return cache_.image_embedding(image.image_id);
  }
  [[nodiscard]] ag::Matrix text_embed(const std::vector<std::string>& labels) const override {
    return cache_.text_embed(labels);
  }

 private:
  EmbeddingCache cache_;
};

// Little-endian float32 helpers shared with the checkpoint format.
void write_f32(std::ostream& out, const double* data, std::size_t n);
void read_f32(std::istream& in, double* data, std::size_t n);

}  // namespace dqen
