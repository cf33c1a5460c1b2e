#pragma once

// Image-text retrieval side of the network: embedding providers, the
// similarity vector, Top-K candidate selection, the training-free score and
// candidate coverage.

#include "dqen/autograd.hpp"
#include "dqen/config.hpp"
#include "dqen/dataset.hpp"
#include "dqen/vocabulary.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

namespace dqen {

using Vector = Eigen::VectorXd;

// What a provider may know about an image. The mock provider reads the
// ground-truth ids; a real encoder would read the pixels.
struct ImageRef {
  std::string image_id;
  const Image* image = nullptr;
  std::vector<int> gt_hoi_ids;
};

ImageRef make_image_ref(const Annotation& ann, const Image* image, const HOIVocabulary& vocab);

// Frozen image/text encoder pair. Outputs are L2-normalized and deterministic
// for a given provider_id and input; implementations must allow concurrent
// const calls.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  [[nodiscard]] virtual std::string provider_id() const = 0;
  [[nodiscard]] virtual int dim() const = 0;
  [[nodiscard]] virtual Vector image_embed(const ImageRef& image) const = 0;
  // (D, N) with one column per label.
  [[nodiscard]] virtual ag::Matrix text_embed(const std::vector<std::string>& labels) const = 0;
};

// Deterministic stand-in for CLIP. Text vectors are pseudo-random unit
// vectors keyed by (seed, label). The image vector is the normalized mean of
// the image's ground-truth label vectors plus a random direction scaled by
// `noise`, so ground-truth labels rank high in the similarity vector.
class MockEmbeddingProvider final : public EmbeddingProvider {
 public:
  MockEmbeddingProvider(const HOIVocabulary& vocab, std::uint64_t seed, int dim, double noise);

  [[nodiscard]] std::string provider_id() const override;
  [[nodiscard]] int dim() const override { return dim_; }
  [[nodiscard]] Vector image_embed(const ImageRef& image) const override;
  [[nodiscard]] ag::Matrix text_embed(const std::vector<std::string>& labels) const override;

  [[nodiscard]] Vector text_vector(const std::string& label) const;

 private:
  std::vector<std::string> hoi_labels_;
  std::uint64_t seed_;
  int dim_;
  double noise_;
};

std::unique_ptr<EmbeddingProvider> mock_provider(const HOIVocabulary& vocab, std::uint64_t seed,
                                                 int dim = 512, double noise = 0.1);

struct CandidateSet {
  std::vector<int> hoi_ids;
  std::vector<double> similarities;  // descending
  std::vector<std::string> texts;
};

// m_sim = T_c^T v_c for t_c of shape (D, N).
Vector compute_similarity(const Vector& v_c, const ag::Matrix& t_c);

// K highest-similarity eligible categories, descending, ties to the lower id.
// When mask is non-null only entries with mask[id] == true are eligible.
CandidateSet select_candidates(const Vector& m_sim, int k, const std::vector<bool>* mask = nullptr,
                               const HOIVocabulary* vocab = nullptr);

// Similarity normalized over all categories; entries outside the R highest are
// zeroed.
Vector training_free_scores(const Vector& m_sim, int r, TrainingFreeNorm norm = TrainingFreeNorm::kSoftmax);

// Fraction of ground-truth (instance, hoi) labels that appear in their
// image's Top-K candidates.
double candidate_coverage(const std::vector<Annotation>& annotations, const std::vector<Image>* images,
                          const EmbeddingProvider& provider, const HOIVocabulary& vocab, int k);

// "a photo of a <word>" for every verb name then every object name; the
// provider embeddings of these prompts seed the word-embedding tables.
std::vector<std::string> word_prompt_labels(const HOIVocabulary& vocab);

// Precomputed per-image similarity vectors and image embeddings.
struct SemanticContext {
  Vector v_c;    // (D)
  Vector m_sim;  // (N_hoi)
};

// t_c holds the HOI text embeddings, (D, N_hoi).
SemanticContext semantic_context(const EmbeddingProvider& provider, const ImageRef& image, const ag::Matrix& t_c);

}  // namespace dqen
