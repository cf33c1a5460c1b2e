#include "dqen/dataset.hpp"

#include "dqen/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace dqen {

namespace {

constexpr int kAnnotationFormat = 1;

struct PixelRect {
  int x0, y0, w, h;
  [[nodiscard]] int x1() const { return x0 + w; }
  [[nodiscard]] int y1() const { return y0 + h; }
};

PixelRect union_rect(const PixelRect& a, const PixelRect& b) {
  const int x0 = std::min(a.x0, b.x0);
  const int y0 = std::min(a.y0, b.y0);
  return {x0, y0, std::max(a.x1(), b.x1()) - x0, std::max(a.y1(), b.y1()) - y0};
}

bool overlaps(const PixelRect& a, const PixelRect& b, int gap) {
  return a.x0 < b.x1() + gap && b.x0 < a.x1() + gap && a.y0 < b.y1() + gap && b.y0 < a.y1() + gap;
}

Box to_box(const PixelRect& r, int size) {
  const double s = static_cast<double>(size);
  return Box::from_corners(r.x0 / s, r.y0 / s, r.x1() / s, r.y1() / s);
}

void fill(Image& img, const PixelRect& r, const std::array<std::uint8_t, 3>& color) {
  for (int y = std::max(0, r.y0); y < std::min(img.height, r.y1()); ++y) {
    for (int x = std::max(0, r.x0); x < std::min(img.width, r.x1()); ++x) {
      for (int c = 0; c < 3; ++c) {
        img.pixels[static_cast<std::size_t>((y * img.width + x) * 3 + c)] = color[static_cast<std::size_t>(c)];
      }
    }
  }
}

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  auto q = [m](double t) { return static_cast<std::uint8_t>(std::lround(255.0 * (t + m))); };
  return {q(r), q(g), q(b)};
}

struct PairGeometry {
  PixelRect human;
  PixelRect object;
};

PairGeometry place_pair(int verb, int num_verbs, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int pw = static_cast<int>(std::lround(size * (0.12 + 0.06 * u(rng))));
  const int ph = static_cast<int>(std::lround(size * (0.25 + 0.10 * u(rng))));
  const int os = static_cast<int>(std::lround(size * (0.10 + 0.06 * u(rng))));
  const int px = static_cast<int>(std::floor(u(rng) * size));
  const int py = static_cast<int>(std::floor(u(rng) * size));
  PixelRect human{px, py, pw, ph};
  const double hcx = px + 0.5 * pw;
  const double hcy = py + 0.5 * ph;
  double ocx = hcx;
  double ocy = hcy;
  if (verb > 0) {
    const double theta = 2.0 * std::numbers::pi * (verb - 1) / std::max(1, num_verbs - 1);
    const int gap = std::max(1, size / 32);
    ocx = hcx + std::cos(theta) * (0.5 * pw + 0.5 * os + gap);
    ocy = hcy + std::sin(theta) * (0.5 * ph + 0.5 * os + gap);
  }
  PixelRect object{static_cast<int>(std::lround(ocx - 0.5 * os)), static_cast<int>(std::lround(ocy - 0.5 * os)),
                   os, os};
  return {human, object};
}

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.cx, b.cy, b.w, b.h}); }

Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be a 4-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

bool box_in_unit(const Box& b) {
  constexpr double eps = 1e-9;
  return b.valid() && b.x0() >= -eps && b.y0() >= -eps && b.x1() <= 1 + eps && b.y1() <= 1 + eps;
}

}  // namespace

std::vector<int> instance_hoi_ids(const GroundTruthInstance& inst, const HOIVocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(inst.verb_ids.size());
  for (int v : inst.verb_ids) {
    const auto h = vocab.find_hoi(v, inst.object_class);
    if (!h) {
      throw FormatError("verb " + std::to_string(v) + " with object " + std::to_string(inst.object_class) +
                        " is not a valid composition");
    }
    ids.push_back(*h);
  }
  return ids;
}

std::vector<double> verb_multi_hot(const GroundTruthInstance& inst, int num_verbs) {
  std::vector<double> out(static_cast<std::size_t>(num_verbs), 0.0);
  for (int v : inst.verb_ids) out.at(static_cast<std::size_t>(v)) = 1.0;
  return out;
}

std::vector<double> hoi_multi_hot(const GroundTruthInstance& inst, const HOIVocabulary& vocab) {
  std::vector<double> out(static_cast<std::size_t>(vocab.num_hoi()), 0.0);
  for (int h : instance_hoi_ids(inst, vocab)) out[static_cast<std::size_t>(h)] = 1.0;
  return out;
}

std::vector<int> annotation_hoi_ids(const Annotation& ann, const HOIVocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& inst : ann.instances) {
    for (int h : instance_hoi_ids(inst, vocab)) ids.push_back(h);
  }
  return ids;
}

std::vector<int> count_hoi_instances(const std::vector<Annotation>& anns, const HOIVocabulary& vocab) {
  std::vector<int> counts(static_cast<std::size_t>(vocab.num_hoi()), 0);
  for (const auto& a : anns) {
    for (int h : annotation_hoi_ids(a, vocab)) ++counts[static_cast<std::size_t>(h)];
  }
  return counts;
}

void validate_annotation(const Annotation& ann, const HOIVocabulary& vocab) {
  for (const auto& inst : ann.instances) {
    if (!box_in_unit(inst.human_box) || !box_in_unit(inst.object_box)) {
      throw FormatError("image " + ann.image_id + ": box outside [0,1]");
    }
    if (inst.object_class < 0 || inst.object_class >= vocab.num_objects()) {
      throw FormatError("image " + ann.image_id + ": object class out of range");
    }
    if (inst.verb_ids.empty()) throw FormatError("image " + ann.image_id + ": instance without verbs");
    (void)instance_hoi_ids(inst, vocab);
  }
}

std::array<std::uint8_t, 3> person_color() { return {235, 205, 175}; }

std::array<std::uint8_t, 3> object_color(int object_class, int num_objects) {
  const double hue = 360.0 * object_class / std::max(1, num_objects);
  return hsv_to_rgb(std::fmod(hue + 200.0, 360.0), 0.95, 0.95);
}

SyntheticWorld generate_synthetic_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  SyntheticWorld world;
  world.vocabulary = HOIVocabulary::synthetic(cfg.num_verbs, cfg.num_objects, cfg.compositions, cfg.seed);
  const auto& vocab = world.vocabulary;
  const int size = cfg.image_size;

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
  // Mild long tail so that some categories fall below the Rare threshold.
  std::vector<int> order(static_cast<std::size_t>(vocab.num_hoi()));
  for (int i = 0; i < vocab.num_hoi(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> weights(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    weights[static_cast<std::size_t>(order[r])] = 1.0 / std::pow(static_cast<double>(r + 1), 0.7);
  }
  std::discrete_distribution<int> pick_hoi(weights.begin(), weights.end());
  std::uniform_int_distribution<int> pick_pairs(1, cfg.max_pairs_per_image);
  std::normal_distribution<double> pixel_noise(0.0, cfg.noise * 255.0);

  auto make_split = [&](int count, const std::string& prefix) {
    Split split;
    for (int i = 0; i < count; ++i) {
      Annotation ann;
      std::ostringstream id;
      id << prefix << "_" << std::setw(5) << std::setfill('0') << i;
      ann.image_id = id.str();
      ann.width = size;
      ann.height = size;

      Image img;
      img.width = size;
      img.height = size;
      img.pixels.assign(static_cast<std::size_t>(size * size * 3), 30);

      const int pairs = pick_pairs(rng);
      std::vector<PixelRect> occupied;
      std::vector<std::pair<PairGeometry, int>> placed;
      for (int p = 0; p < pairs; ++p) {
        const int hoi = pick_hoi(rng);
        const int verb = vocab.verb_of(hoi);
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
          const PairGeometry g = place_pair(verb, cfg.num_verbs, size, rng);
          const PixelRect region = union_rect(g.human, g.object);
          if (region.x0 < 1 || region.y0 < 1 || region.x1() > size - 1 || region.y1() > size - 1) continue;
          bool clash = false;
          for (const auto& o : occupied) clash = clash || overlaps(o, region, 2);
          if (clash) continue;
          occupied.push_back(region);
          placed.emplace_back(g, hoi);
          ok = true;
        }
        if (!ok && placed.empty()) {
          throw ConfigError("image_size " + std::to_string(size) + " too small to place an interaction");
        }
      }
      for (const auto& [g, hoi] : placed) fill(img, g.human, person_color());
      for (const auto& [g, hoi] : placed) {
        const int obj = vocab.object_of(hoi);
        fill(img, g.object, object_color(obj, cfg.num_objects));
        GroundTruthInstance inst;
        inst.human_box = to_box(g.human, size);
        inst.object_box = to_box(g.object, size);
        inst.object_class = obj;
        inst.verb_ids = {vocab.verb_of(hoi)};
        ann.instances.push_back(std::move(inst));
      }
      if (cfg.noise > 0.0) {
        for (auto& px : img.pixels) {
          const double v = static_cast<double>(px) + pixel_noise(rng);
          px = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
      split.annotations.push_back(std::move(ann));
      split.images.push_back(std::move(img));
    }
    return split;
  };
  world.train = make_split(cfg.num_images, "train");
  world.test = make_split(cfg.num_test_images, "test");
  return world;
}

void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& anns,
                      const std::string& vocabulary_ref) {
  nlohmann::json j;
  j["format_version"] = kAnnotationFormat;
  j["vocabulary_ref"] = vocabulary_ref;
  j["images"] = nlohmann::json::array();
  for (const auto& a : anns) {
    nlohmann::json img{{"image_id", a.image_id}, {"width", a.width}, {"height", a.height}};
    img["instances"] = nlohmann::json::array();
    for (const auto& inst : a.instances) {
      img["instances"].push_back({{"h_box", box_json(inst.human_box)},
                                  {"o_box", box_json(inst.object_box)},
                                  {"object_class", inst.object_class},
                                  {"verb_ids", inst.verb_ids}});
    }
    j["images"].push_back(std::move(img));
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

AnnotationFile load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  AnnotationFile file;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.contains("format_version") || j.at("format_version").get<int>() != kAnnotationFormat) {
      throw FormatError(path.string() + ": missing or unsupported annotation format_version");
    }
    file.vocabulary_ref = j.at("vocabulary_ref").get<std::string>();
    for (const auto& img : j.at("images")) {
      Annotation a;
      a.image_id = img.at("image_id").get<std::string>();
      a.width = img.at("width").get<int>();
      a.height = img.at("height").get<int>();
      for (const auto& inst : img.at("instances")) {
        GroundTruthInstance g;
        g.human_box = box_from_json(inst.at("h_box"));
        g.object_box = box_from_json(inst.at("o_box"));
        g.object_class = inst.at("object_class").get<int>();
        g.verb_ids = inst.at("verb_ids").get<std::vector<int>>();
        if (!box_in_unit(g.human_box) || !box_in_unit(g.object_box)) {
          throw FormatError(path.string() + ": image " + a.image_id + " has a box outside [0,1]");
        }
        a.instances.push_back(std::move(g));
      }
      file.annotations.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed annotations: " + e.what());
  }
  return file;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw FormatError("PPM output needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  Image img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0) {
    throw FormatError(path.string() + ": not an 8-bit binary PPM");
  }
  in.get();
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * 3));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray) {
  if (gray.size() != static_cast<std::size_t>(width * height)) throw ShapeError("PGM pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void save_split(const std::filesystem::path& dir, const Split& split, const std::string& vocabulary_ref) {
  std::filesystem::create_directories(dir / "images");
  save_annotations(dir / "annotations.json", split.annotations, vocabulary_ref);
  for (std::size_t i = 0; i < split.images.size(); ++i) {
    write_ppm(dir / "images" / (split.annotations[i].image_id + ".ppm"), split.images[i]);
  }
}

Split load_split(const std::filesystem::path& dir, bool load_images) {
  Split split;
  split.annotations = load_annotations(dir / "annotations.json").annotations;
  if (load_images) {
    for (const auto& a : split.annotations) {
      split.images.push_back(read_ppm(dir / "images" / (a.image_id + ".ppm")));
    }
  }
  return split;
}

}  // namespace dqen
