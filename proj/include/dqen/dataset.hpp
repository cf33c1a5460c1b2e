#pragma once

// Annotated images: in-memory types, the synthetic HOI world and file I/O.

#include "dqen/box.hpp"
#include "dqen/config.hpp"
#include "dqen/vocabulary.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dqen {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major HWC

  [[nodiscard]] std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool operator==(const Image&) const = default;
};

struct GroundTruthInstance {
  Box human_box;
  Box object_box;
  int object_class = 0;
  std::vector<int> verb_ids;

  bool operator==(const GroundTruthInstance&) const = default;
};

struct Annotation {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<GroundTruthInstance> instances;

  bool operator==(const Annotation&) const = default;
};

struct Split {
  std::vector<Annotation> annotations;
  std::vector<Image> images;  // parallel to annotations; may be empty when not loaded
};

struct SyntheticWorld {
  HOIVocabulary vocabulary;
  Split train;
  Split test;
};

// hoi ids of an instance, one per verb, in verb order. Throws when a verb does
// not form a valid composition with the object class.
std::vector<int> instance_hoi_ids(const GroundTruthInstance& inst, const HOIVocabulary& vocab);
std::vector<double> verb_multi_hot(const GroundTruthInstance& inst, int num_verbs);
std::vector<double> hoi_multi_hot(const GroundTruthInstance& inst, const HOIVocabulary& vocab);
std::vector<int> annotation_hoi_ids(const Annotation& ann, const HOIVocabulary& vocab);

// Per-category instance counts, used for the Rare split.
std::vector<int> count_hoi_instances(const std::vector<Annotation>& anns, const HOIVocabulary& vocab);

void validate_annotation(const Annotation& ann, const HOIVocabulary& vocab);

// Scenes of a "person" glyph and colored object glyphs. Each verb is a fixed
// spatial relation of the object towards the person: verb 0 overlaps the
// person, verb v > 0 sits next to the person in direction 2*pi*(v-1)/(V-1)
// (clockwise from +x in image coordinates).
SyntheticWorld generate_synthetic_world(const SyntheticWorldConfig& cfg);

// Glyph palette, exposed for the pixel-scan oracle in tests.
std::array<std::uint8_t, 3> person_color();
std::array<std::uint8_t, 3> object_color(int object_class, int num_objects);

struct AnnotationFile {
  std::string vocabulary_ref;
  std::vector<Annotation> annotations;
};

void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& anns,
                      const std::string& vocabulary_ref);
AnnotationFile load_annotations(const std::filesystem::path& path);

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& gray);

// <dir>/annotations.json plus <dir>/images/<image_id>.ppm
void save_split(const std::filesystem::path& dir, const Split& split, const std::string& vocabulary_ref);
Split load_split(const std::filesystem::path& dir, bool load_images = true);

}  // namespace dqen
