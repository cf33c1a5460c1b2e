#pragma once

// Interaction semantic fusion: the K retrieved HOI candidates are embedded as
// verb, object and whole-triplet words and fused into one feature Q_i.

#include "dqen/config.hpp"
#include "dqen/nn.hpp"
#include "dqen/semantics.hpp"
#include "dqen/vocabulary.hpp"

#include <vector>

namespace dqen {

using ag::Var;

struct WordEmbeddingTables {
  Var verb_table;    // (num_verbs, C_k)
  Var object_table;  // (num_objects, C_k)
  Var hoi_table;     // (N_hoi, C_k)
};

struct IsfParams {
  nn::Mlp mlp_vo;   // 2 C_k -> C_k
  nn::Mlp mlp_hoi;  // C_k -> C_k
  Var w_a;          // (1, C_k) broadcast over rows, or (K, C_k)
  nn::Mlp mlp_out;  // C_k -> C'
};

struct IsfModule {
  WordEmbeddingTables tables;
  IsfParams params;

  static IsfModule create(nn::ParamStore& store, const std::string& name, const HOIVocabulary& vocab, int word_dim,
                          int out_dim, int k, AttentionWeightShape shape, nn::Rng& rng);
};

// Fills the tables. kOurs and kClipFrozen start from provider embeddings of
// the word prompts and HOI text labels, projected to C_k by a fixed seeded
// Gaussian map (identity when D == C_k); kClipFrozen also freezes them.
// kRandom draws N(0, 1/C_k) entries. provider may be null only for kRandom.
void initialize_word_tables(IsfModule& isf, nn::ParamStore& store, const std::string& name,
                            const HOIVocabulary& vocab, const EmbeddingProvider* provider, WordInit mode,
                            std::uint64_t seed);

struct CandidateEmbeddings {
  Var t_verb;  // (K, C_k)
  Var t_obj;
  Var t_hoi;
};

CandidateEmbeddings embed_candidates(const std::vector<int>& hoi_ids, const WordEmbeddingTables& tables,
                                     const HOIVocabulary& vocab);

Var fuse_vo(const Var& t_verb, const Var& t_obj, const IsfParams& params);
Var project_hoi(const Var& t_hoi, const IsfParams& params);
// (w_a * t_vo) t_hoi_hat^T, (K, K)
Var correlation(const Var& t_vo, const Var& t_hoi_hat, const Var& w_a);
// softmax over the last axis of C, times t_vo
Var reweight(const Var& c, const Var& t_vo);
Var fuse_final(const Var& t_vo_hat, const Var& t_hoi_hat);
// MLP of the row sum, (1, C')
Var aggregate(const Var& f, const IsfParams& params);

struct IsfTrace {
  Var t_vo, t_hoi_hat, correlation, t_vo_hat, fused;
};

Var isf_forward(const std::vector<int>& hoi_ids, const WordEmbeddingTables& tables, const IsfParams& params,
                const HOIVocabulary& vocab, IsfTrace* trace = nullptr);

}  // namespace dqen
