#include "dqen/dataset.hpp"
#include "dqen/embedding_cache.hpp"
#include "dqen/errors.hpp"
#include "dqen/semantics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

using namespace dqen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dqen_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SyntheticWorldConfig small_world(std::uint64_t seed = 4) {
  SyntheticWorldConfig w;
  w.num_images = 16;
  w.num_test_images = 4;
  w.num_verbs = 4;
  w.num_objects = 5;
  w.compositions = 9;
  w.image_size = 48;
  w.seed = seed;
  return w;
}

}  // namespace

TEST(Dataset, GenerationIsDeterministic) {
  const auto a = generate_synthetic_world(small_world());
  const auto b = generate_synthetic_world(small_world());
  EXPECT_EQ(a.train.annotations, b.train.annotations);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.test.annotations, b.test.annotations);
  EXPECT_EQ(a.vocabulary.to_json(), b.vocabulary.to_json());
  const auto c = generate_synthetic_world(small_world(5));
  EXPECT_NE(a.train.annotations, c.train.annotations);
}

TEST(Dataset, GlyphsMatchBoxesAndVerbGeometry) {
  auto cfg = small_world();
  cfg.noise = 0.0;
  cfg.max_pairs_per_image = 1;
  const auto world = generate_synthetic_world(cfg);
  const int size = cfg.image_size;
  for (std::size_t i = 0; i < world.train.images.size(); ++i) {
    const Image& img = world.train.images[i];
    const auto& ann = world.train.annotations[i];
    ASSERT_EQ(ann.instances.size(), 1U);
    const auto& inst = ann.instances[0];
    const auto oc = object_color(inst.object_class, cfg.num_objects);
    const auto pc = person_color();
    int ox0 = size, oy0 = size, ox1 = -1, oy1 = -1, person_px = 0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool is_obj = img.at(y, x, 0) == oc[0] && img.at(y, x, 1) == oc[1] && img.at(y, x, 2) == oc[2];
        const bool is_person = img.at(y, x, 0) == pc[0] && img.at(y, x, 1) == pc[1] && img.at(y, x, 2) == pc[2];
        if (is_obj) {
          ox0 = std::min(ox0, x);
          oy0 = std::min(oy0, y);
          ox1 = std::max(ox1, x + 1);
          oy1 = std::max(oy1, y + 1);
        }
        if (is_person) {
          ++person_px;
          const double cx = (x + 0.5) / size, cy = (y + 0.5) / size;
          EXPECT_TRUE(cx > inst.human_box.x0() && cx < inst.human_box.x1() && cy > inst.human_box.y0() &&
                      cy < inst.human_box.y1());
        }
      }
    }
    // Objects are drawn last, so their pixel extent is exactly the box.
    EXPECT_NEAR(ox0 / double(size), inst.object_box.x0(), 1e-12);
    EXPECT_NEAR(oy1 / double(size), inst.object_box.y1(), 1e-12);
    EXPECT_NEAR(ox1 / double(size), inst.object_box.x1(), 1e-12);
    EXPECT_NEAR(oy0 / double(size), inst.object_box.y0(), 1e-12);
    EXPECT_GT(person_px, 0);

    const int verb = inst.verb_ids[0];
    const double dx = inst.object_box.cx - inst.human_box.cx;
    const double dy = inst.object_box.cy - inst.human_box.cy;
    if (verb == 0) {
      EXPECT_GT(iou(inst.human_box, inst.object_box), 0.0);
    } else {
      const double theta = 2.0 * std::numbers::pi * (verb - 1) / (cfg.num_verbs - 1);
      const double norm = std::hypot(dx, dy);
      EXPECT_GT((dx * std::cos(theta) + dy * std::sin(theta)) / norm, 0.7) << ann.image_id;
    }
  }
}

TEST(Dataset, AnnotationsRoundTripIncludingEmptyImages) {
  const auto world = generate_synthetic_world(small_world());
  auto anns = world.train.annotations;
  Annotation empty;
  empty.image_id = "blank";
  empty.width = empty.height = 48;
  anns.push_back(empty);
  const fs::path dir = scratch("annotations");
  save_annotations(dir / "a.json", anns, "vocabulary.json");
  const auto back = load_annotations(dir / "a.json");
  EXPECT_EQ(back.vocabulary_ref, "vocabulary.json");
  ASSERT_EQ(back.annotations.size(), anns.size());
  EXPECT_TRUE(back.annotations.back().instances.empty());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    ASSERT_EQ(back.annotations[i].instances.size(), anns[i].instances.size());
    for (std::size_t k = 0; k < anns[i].instances.size(); ++k) {
      const auto& x = back.annotations[i].instances[k];
      const auto& y = anns[i].instances[k];
      EXPECT_EQ(x.verb_ids, y.verb_ids);
      EXPECT_EQ(x.object_class, y.object_class);
      EXPECT_NEAR(x.human_box.cx, y.human_box.cx, 1e-12);
      EXPECT_NEAR(x.object_box.h, y.object_box.h, 1e-12);
    }
  }

  save_split(dir / "split", world.train, "vocabulary.json");
  const Split loaded = load_split(dir / "split");
  EXPECT_EQ(loaded.images, world.train.images);
  fs::remove_all(dir);
}

TEST(Dataset, InvalidCompositionIsRejected) {
  const auto vocab = HOIVocabulary::synthetic(3, 3, 4, 0);
  int verb = -1, obj = -1;
  for (int v = 0; v < 3 && verb < 0; ++v) {
    for (int o = 0; o < 3; ++o) {
      if (!vocab.find_hoi(v, o)) {
        verb = v;
        obj = o;
        break;
      }
    }
  }
  ASSERT_GE(verb, 0);
  GroundTruthInstance inst;
  inst.human_box = Box::from_corners(0.1, 0.1, 0.3, 0.5);
  inst.object_box = Box::from_corners(0.3, 0.1, 0.4, 0.2);
  inst.object_class = obj;
  inst.verb_ids = {verb};
  EXPECT_THROW(instance_hoi_ids(inst, vocab), FormatError);
  Annotation ann;
  ann.image_id = "x";
  ann.instances = {inst};
  EXPECT_THROW(validate_annotation(ann, vocab), FormatError);
}

TEST(Dataset, PpmRoundTrip) {
  Image img;
  img.width = 3;
  img.height = 2;
  img.pixels = {0, 1, 2, 3, 4, 5, 250, 251, 252, 9, 8, 7, 100, 0, 255, 1, 1, 1};
  const fs::path dir = scratch("ppm");
  write_ppm(dir / "x.ppm", img);
  EXPECT_EQ(read_ppm(dir / "x.ppm"), img);
  fs::remove_all(dir);
}

TEST(Semantics, SimilarityIsTransposeProduct) {
  // Basis image vector against three text columns picks out row 1 of T_c.
  ag::Matrix t(3, 3);
  t << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9;
  Vector v = Vector::Zero(3);
  v(1) = 1.0;
  const Vector m = compute_similarity(v, t);
  EXPECT_DOUBLE_EQ(m(0), 0.4);
  EXPECT_DOUBLE_EQ(m(1), 0.5);
  EXPECT_DOUBLE_EQ(m(2), 0.6);
  EXPECT_THROW(compute_similarity(Vector::Zero(2), t), ShapeError);
}

TEST(Semantics, SelectCandidatesOrderAndTies) {
  Vector m(3);
  m << 0.2, 0.9, 0.5;
  const auto c = select_candidates(m, 2);
  EXPECT_EQ(c.hoi_ids, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.similarities, (std::vector<double>{0.9, 0.5}));

  Vector tie = Vector::Constant(4, 0.3);
  EXPECT_EQ(select_candidates(tie, 3).hoi_ids, (std::vector<int>{0, 1, 2}));

  const std::vector<bool> mask{true, false, true};
  EXPECT_EQ(select_candidates(m, 2, &mask).hoi_ids, (std::vector<int>{2, 0}));
  EXPECT_THROW(select_candidates(m, 3, &mask), ConfigError);
  EXPECT_THROW(select_candidates(m, 0), ConfigError);
}

TEST(Semantics, TrainingFreeScores) {
  const Vector uniform = Vector::Constant(600, 0.25);
  const Vector s = training_free_scores(uniform, 10);
  for (int i = 0; i < 600; ++i) EXPECT_NEAR(s(i), i < 10 ? 1.0 / 600.0 : 0.0, 1e-15);

  Vector m(4);
  m << 0.0, 1.0, 2.0, 0.5;
  const Vector t = training_free_scores(m, 2);
  const double z = 1.0 + std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(t(2), std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(t(1), std::exp(1.0) / z, 1e-15);
  EXPECT_EQ(t(0), 0.0);
  EXPECT_EQ(t(3), 0.0);

  const Vector mm = training_free_scores(m, 2, TrainingFreeNorm::kMinMax);
  EXPECT_DOUBLE_EQ(mm(2), 1.0);
  EXPECT_DOUBLE_EQ(mm(1), 0.5);
  EXPECT_THROW(training_free_scores(m, 5), ConfigError);
}

TEST(Semantics, MockProviderIsNormalizedAndDeterministic) {
  const auto vocab = HOIVocabulary::synthetic(3, 4, 6, 2);
  MockEmbeddingProvider a(vocab, 9, 32, 0.1), b(vocab, 9, 32, 0.1), c(vocab, 10, 32, 0.1);
  EXPECT_EQ(a.provider_id(), b.provider_id());
  EXPECT_NE(a.provider_id(), c.provider_id());
  const auto t = a.text_embed(vocab.text_labels());
  ASSERT_EQ(t.rows(), 32);
  ASSERT_EQ(t.cols(), 6);
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(t.col(j).norm(), 1.0, 1e-12);
  EXPECT_TRUE(t.isApprox(b.text_embed(vocab.text_labels())));
  ImageRef ref;
  ref.image_id = "img";
  ref.gt_hoi_ids = {3};
  const Vector v = a.image_embed(ref);
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  const Vector m = compute_similarity(v, t);
  Eigen::Index best = 0;
  m.maxCoeff(&best);
  EXPECT_EQ(best, 3);
}

TEST(Semantics, CoverageIsOneAtFullK) {
  const auto world = generate_synthetic_world(small_world());
  const auto provider = mock_provider(world.vocabulary, 0, 16, 2.0);
  const int n = world.vocabulary.num_hoi();
  EXPECT_DOUBLE_EQ(candidate_coverage(world.train.annotations, nullptr, *provider, world.vocabulary, n), 1.0);
  double prev = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double c = candidate_coverage(world.train.annotations, nullptr, *provider, world.vocabulary, k);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(EmbeddingCache, RebuildIsByteIdenticalAndSpotChecks) {
  const auto world = generate_synthetic_world(small_world());
  const auto provider = mock_provider(world.vocabulary, 3, 24, 0.2);
  const fs::path dir = scratch("cache");
  embedding_cache_build({&world.train, &world.test}, *provider, world.vocabulary, dir / "a");
  embedding_cache_build({&world.train, &world.test}, *provider, world.vocabulary, dir / "b");
  for (const char* f : {"manifest.json", "text.f32", "image.f32"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }

  const EmbeddingCache cache = load_embedding_cache(dir / "a", 24);
  const auto labels = world.vocabulary.text_labels();
  for (std::size_t i : {std::size_t{0}, labels.size() / 2, labels.size() - 1}) {
    const ag::Matrix direct = provider->text_embed({labels[i]});
    const ag::Matrix stored = cache.text_embed({labels[i]});
    // Stored as float32.
    EXPECT_LT((direct - stored).cwiseAbs().maxCoeff(), 1e-7);
  }
  const auto& ann = world.test.annotations[1];
  const Vector direct = provider->image_embed(make_image_ref(ann, nullptr, world.vocabulary));
  EXPECT_LT((direct - cache.image_embedding(ann.image_id)).cwiseAbs().maxCoeff(), 1e-7);

  EXPECT_THROW(load_embedding_cache(dir / "a", 32), FormatError);
  EXPECT_THROW(cache.image_embedding("missing"), FormatError);
  const auto other = mock_provider(world.vocabulary, 4, 24, 0.2);
  EXPECT_THROW(embedding_cache_build({&world.train}, *other, world.vocabulary, dir / "a"), FormatError);
  EXPECT_NO_THROW(embedding_cache_build({&world.train}, *other, world.vocabulary, dir / "a", true));
  fs::remove_all(dir);
}
