#include "dqen/semantics.hpp"

#include "dqen/errors.hpp"
#include "dqen/hash.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dqen {

namespace {

Vector unit_gaussian(std::uint64_t key, int dim) {
  std::mt19937_64 rng(key);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v / v.norm();
}

}  // namespace

ImageRef make_image_ref(const Annotation& ann, const Image* image, const HOIVocabulary& vocab) {
  return {ann.image_id, image, annotation_hoi_ids(ann, vocab)};
}

MockEmbeddingProvider::MockEmbeddingProvider(const HOIVocabulary& vocab, std::uint64_t seed, int dim,
                                             double noise)
    : hoi_labels_(vocab.text_labels()), seed_(seed), dim_(dim), noise_(noise) {
  if (dim <= 0) throw ConfigError("provider dimension must be positive");
  if (noise < 0) throw ConfigError("provider noise must be non-negative");
}

std::string MockEmbeddingProvider::provider_id() const {
  std::ostringstream os;
  os << "mock-v1:seed=" << seed_ << ":dim=" << dim_ << ":noise=" << noise_;
  return os.str();
}

Vector MockEmbeddingProvider::text_vector(const std::string& label) const {
  return unit_gaussian(mix64(fnv1a64(label) ^ mix64(seed_)), dim_);
}

ag::Matrix MockEmbeddingProvider::text_embed(const std::vector<std::string>& labels) const {
  ag::Matrix t(dim_, static_cast<ag::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) t.col(static_cast<ag::Index>(i)) = text_vector(labels[i]);
  return t;
}

Vector MockEmbeddingProvider::image_embed(const ImageRef& image) const {
  const Vector direction = unit_gaussian(mix64(fnv1a64(image.image_id, 0x51ed270b27c8f3a1ULL) ^ seed_), dim_);
  if (image.gt_hoi_ids.empty()) {
    return direction;
  }
  const std::set<int> unique(image.gt_hoi_ids.begin(), image.gt_hoi_ids.end());
  Vector mean = Vector::Zero(dim_);
  for (int id : unique) {
    if (id < 0 || id >= static_cast<int>(hoi_labels_.size())) throw ConfigError("hoi id out of range");
    mean += text_vector(hoi_labels_[static_cast<std::size_t>(id)]);
  }
  mean /= mean.norm();
  Vector v = mean + noise_ * direction;
  return v / v.norm();
}

std::unique_ptr<EmbeddingProvider> mock_provider(const HOIVocabulary& vocab, std::uint64_t seed, int dim,
                                                 double noise) {
  return std::make_unique<MockEmbeddingProvider>(vocab, seed, dim, noise);
}

std::vector<std::string> word_prompt_labels(const HOIVocabulary& vocab) {
  std::vector<std::string> out;
  for (const auto& v : vocab.verbs()) out.push_back("a photo of a " + v.name);
  for (const auto& o : vocab.objects()) out.push_back("a photo of a " + o.name);
  return out;
}

Vector compute_similarity(const Vector& v_c, const ag::Matrix& t_c) {
  if (t_c.rows() != v_c.size()) {
    throw ShapeError("compute_similarity: image embedding has " + std::to_string(v_c.size()) +
                     " dims, text embeddings have " + std::to_string(t_c.rows()));
  }
  return t_c.transpose() * v_c;
}

CandidateSet select_candidates(const Vector& m_sim, int k, const std::vector<bool>* mask,
                               const HOIVocabulary* vocab) {
  if (mask != nullptr && static_cast<Eigen::Index>(mask->size()) != m_sim.size()) {
    throw ShapeError("select_candidates: mask length does not match similarity length");
  }
  std::vector<int> eligible;
  for (int i = 0; i < m_sim.size(); ++i) {
    if (mask == nullptr || (*mask)[static_cast<std::size_t>(i)]) eligible.push_back(i);
  }
  if (k < 1 || k > static_cast<int>(eligible.size())) {
    throw ConfigError("select_candidates: K=" + std::to_string(k) + " but " + std::to_string(eligible.size()) +
                      " categories are eligible");
  }
  std::partial_sort(eligible.begin(), eligible.begin() + k, eligible.end(), [&](int a, int b) {
    return m_sim(a) > m_sim(b) || (m_sim(a) == m_sim(b) && a < b);
  });
  CandidateSet out;
  for (int i = 0; i < k; ++i) {
    const int id = eligible[static_cast<std::size_t>(i)];
    out.hoi_ids.push_back(id);
    out.similarities.push_back(m_sim(id));
    if (vocab != nullptr) out.texts.push_back(vocab->text_label(id));
  }
  return out;
}

Vector training_free_scores(const Vector& m_sim, int r, TrainingFreeNorm norm) {
  const int n = static_cast<int>(m_sim.size());
  if (r < 1 || r > n) throw ConfigError("training_free_scores: R must be in [1, N_hoi]");
  Vector normalized(n);
  if (norm == TrainingFreeNorm::kSoftmax) {
    const double m = m_sim.maxCoeff();
    normalized = (m_sim.array() - m).exp();
    normalized /= normalized.sum();
  } else {
    const double lo = m_sim.minCoeff();
    const double hi = m_sim.maxCoeff();
    normalized = hi > lo ? Vector((m_sim.array() - lo) / (hi - lo)) : Vector::Ones(n);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + r, order.end(), [&](int a, int b) {
    return m_sim(a) > m_sim(b) || (m_sim(a) == m_sim(b) && a < b);
  });
  Vector out = Vector::Zero(n);
  for (int i = 0; i < r; ++i) {
    const int id = order[static_cast<std::size_t>(i)];
    out(id) = normalized(id);
  }
  return out;
}

SemanticContext semantic_context(const EmbeddingProvider& provider, const ImageRef& image, const ag::Matrix& t_c) {
  SemanticContext ctx;
  ctx.v_c = provider.image_embed(image);
  ctx.m_sim = compute_similarity(ctx.v_c, t_c);
  return ctx;
}

double candidate_coverage(const std::vector<Annotation>& annotations, const std::vector<Image>* images,
                          const EmbeddingProvider& provider, const HOIVocabulary& vocab, int k) {
  if (annotations.empty()) throw ConfigError("candidate_coverage: empty dataset");
  if (k < 1) throw ConfigError("candidate_coverage: K must be at least 1");
  const ag::Matrix t_c = provider.text_embed(vocab.text_labels());
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const Image* img = images != nullptr && i < images->size() ? &(*images)[i] : nullptr;
    const ImageRef ref = make_image_ref(annotations[i], img, vocab);
    if (ref.gt_hoi_ids.empty()) continue;
    const Vector m_sim = compute_similarity(provider.image_embed(ref), t_c);
    const CandidateSet cands = select_candidates(m_sim, std::min(k, vocab.num_hoi()));
    const std::set<int> top(cands.hoi_ids.begin(), cands.hoi_ids.end());
    for (int id : ref.gt_hoi_ids) {
      hits += top.contains(id) ? 1U : 0U;
      ++total;
    }
  }
  if (total == 0) throw ConfigError("candidate_coverage: dataset has no ground-truth HOI labels");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace dqen
