#include "dqen/isf.hpp"

#include "dqen/errors.hpp"

#include <cmath>

namespace dqen {

IsfModule IsfModule::create(nn::ParamStore& store, const std::string& name, const HOIVocabulary& vocab,
                            int word_dim, int out_dim, int k, AttentionWeightShape shape, nn::Rng& rng) {
  IsfModule m;
  const double s = 1.0 / std::sqrt(static_cast<double>(word_dim));
  m.tables.verb_table = store.add(name + ".verb_table", nn::gaussian(rng, vocab.num_verbs(), word_dim, s));
  m.tables.object_table = store.add(name + ".object_table", nn::gaussian(rng, vocab.num_objects(), word_dim, s));
  m.tables.hoi_table = store.add(name + ".hoi_table", nn::gaussian(rng, vocab.num_hoi(), word_dim, s));
  m.params.mlp_vo = nn::Mlp::create(store, name + ".mlp_vo", {2 * word_dim, word_dim, word_dim}, rng);
  m.params.mlp_hoi = nn::Mlp::create(store, name + ".mlp_hoi", {word_dim, word_dim, word_dim}, rng);
  const int wa_rows = shape == AttentionWeightShape::kVector ? 1 : k;
  m.params.w_a = store.add(name + ".w_a", ag::Matrix::Ones(wa_rows, word_dim));
  m.params.mlp_out = nn::Mlp::create(store, name + ".mlp_out", {word_dim, word_dim, out_dim}, rng);
  return m;
}

void initialize_word_tables(IsfModule& isf, nn::ParamStore& store, const std::string& name,
                            const HOIVocabulary& vocab, const EmbeddingProvider* provider, WordInit mode,
                            std::uint64_t seed) {
  const ag::Index ck = isf.tables.verb_table.cols();
  if (mode == WordInit::kRandom) {
    nn::Rng rng(seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(ck));
    isf.tables.verb_table.mutable_value() = nn::gaussian(rng, vocab.num_verbs(), ck, s);
    isf.tables.object_table.mutable_value() = nn::gaussian(rng, vocab.num_objects(), ck, s);
    isf.tables.hoi_table.mutable_value() = nn::gaussian(rng, vocab.num_hoi(), ck, s);
    return;
  }
  if (provider == nullptr) throw ConfigError("word-table initialization from text needs an embedding provider");
  const int d = provider->dim();
  ag::Matrix proj;
  if (d == ck) {
    proj = ag::Matrix::Identity(d, ck);
  } else {
    nn::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    proj = nn::gaussian(rng, d, ck, 1.0 / std::sqrt(static_cast<double>(ck)));
  }
  const auto words = word_prompt_labels(vocab);
  const ag::Matrix w = provider->text_embed(words).transpose() * proj;  // (V + O, C_k)
  isf.tables.verb_table.mutable_value() = w.topRows(vocab.num_verbs());
  isf.tables.object_table.mutable_value() = w.bottomRows(vocab.num_objects());
  isf.tables.hoi_table.mutable_value() = provider->text_embed(vocab.text_labels()).transpose() * proj;
  if (mode == WordInit::kClipFrozen) {
    for (const char* t : {".verb_table", ".object_table", ".hoi_table"}) store.set_frozen(name + t, true);
  }
}

CandidateEmbeddings embed_candidates(const std::vector<int>& hoi_ids, const WordEmbeddingTables& tables,
                                     const HOIVocabulary& vocab) {
  if (hoi_ids.empty()) throw ShapeError("no HOI candidates to embed");
  std::vector<int> verbs, objects;
  for (int id : hoi_ids) {
    if (id < 0 || id >= vocab.num_hoi()) throw ConfigError("unknown hoi id " + std::to_string(id));
    verbs.push_back(vocab.verb_of(id));
    objects.push_back(vocab.object_of(id));
  }
  return {ag::gather_rows(tables.verb_table, verbs), ag::gather_rows(tables.object_table, objects),
          ag::gather_rows(tables.hoi_table, hoi_ids)};
}

Var fuse_vo(const Var& t_verb, const Var& t_obj, const IsfParams& params) {
  return params.mlp_vo(ag::concat_cols({t_verb, t_obj}));
}

Var project_hoi(const Var& t_hoi, const IsfParams& params) { return params.mlp_hoi(t_hoi); }

Var correlation(const Var& t_vo, const Var& t_hoi_hat, const Var& w_a) {
  Var weighted;
  if (w_a.rows() == 1) {
    weighted = ag::mul_row(t_vo, w_a);
  } else if (w_a.rows() == t_vo.rows()) {
    weighted = ag::mul(t_vo, w_a);
  } else {
    throw ShapeError("attention weight has " + std::to_string(w_a.rows()) + " rows for " +
                     std::to_string(t_vo.rows()) + " candidates");
  }
  return ag::matmul_nt(weighted, t_hoi_hat);
}

Var reweight(const Var& c, const Var& t_vo) { return ag::matmul(ag::softmax_rows(c), t_vo); }

Var fuse_final(const Var& t_vo_hat, const Var& t_hoi_hat) { return ag::mul(t_vo_hat, t_hoi_hat); }

Var aggregate(const Var& f, const IsfParams& params) { return params.mlp_out(ag::sum_rows(f)); }

Var isf_forward(const std::vector<int>& hoi_ids, const WordEmbeddingTables& tables, const IsfParams& params,
                const HOIVocabulary& vocab, IsfTrace* trace) {
  const auto e = embed_candidates(hoi_ids, tables, vocab);
  const Var t_vo = fuse_vo(e.t_verb, e.t_obj, params);
  const Var t_hoi_hat = project_hoi(e.t_hoi, params);
  const Var c = correlation(t_vo, t_hoi_hat, params.w_a);
  const Var t_vo_hat = reweight(c, t_vo);
  const Var f = fuse_final(t_vo_hat, t_hoi_hat);
  if (trace) *trace = {t_vo, t_hoi_hat, c, t_vo_hat, f};
  return aggregate(f, params);
}

}  // namespace dqen
