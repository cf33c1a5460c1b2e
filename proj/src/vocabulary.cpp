#include "dqen/vocabulary.hpp"

#include "dqen/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace dqen {

namespace {

constexpr int kVocabularyFormat = 1;

const std::vector<std::pair<std::string, std::string>>& base_verbs() {
  static const std::vector<std::pair<std::string, std::string>> verbs = {
      {"hold", "holding"}, {"lift", "lifting"},   {"kick", "kicking"},  {"push", "pushing"},
      {"pull", "pulling"}, {"carry", "carrying"}, {"ride", "riding"},   {"throw", "throwing"},
      {"catch", "catching"}, {"wash", "washing"}, {"watch", "watching"}, {"eat", "eating"}};
  return verbs;
}

const std::vector<std::string>& base_objects() {
  static const std::vector<std::string> objects = {
      "apple", "umbrella", "bicycle", "bottle", "orange", "kite",  "elephant", "cup",
      "ball",  "oven",     "book",    "horse",  "egg",    "chair", "ice cream", "dog"};
  return objects;
}

}  // namespace

std::string render_text_label(const std::string& gerund, const std::string& object_name) {
  if (gerund.empty()) {
    throw ConfigError("missing gerund surface form");
  }
  if (object_name.empty()) {
    throw ConfigError("missing object name");
  }
  const char first = static_cast<char>(std::tolower(static_cast<unsigned char>(object_name.front())));
  const bool vowel = first == 'a' || first == 'e' || first == 'i' || first == 'o' || first == 'u';
  return "A photo of a person " + gerund + (vowel ? " an " : " a ") + object_name;
}

std::string render_text_label(const Verb& verb, const ObjectCategory& object) {
  return render_text_label(verb.gerund, object.name);
}

HOIVocabulary::HOIVocabulary(std::vector<Verb> verbs, std::vector<ObjectCategory> objects,
                             std::vector<Composition> compositions)
    : verbs_(std::move(verbs)), objects_(std::move(objects)), compositions_(std::move(compositions)) {
  build_index();
  seen_.assign(compositions_.size(), true);
}

void HOIVocabulary::build_index() {
  for (std::size_t i = 0; i < verbs_.size(); ++i) {
    if (verbs_[i].id != static_cast<int>(i)) throw FormatError("verb ids must be dense and ordered");
  }
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    if (objects_[i].id != static_cast<int>(i)) throw FormatError("object ids must be dense and ordered");
  }
  pair_index_.assign(verbs_.size() * objects_.size(), -1);
  for (std::size_t i = 0; i < compositions_.size(); ++i) {
    const auto& c = compositions_[i];
    if (c.hoi_id != static_cast<int>(i)) throw FormatError("hoi ids must be dense and ordered");
    if (c.verb_id < 0 || c.verb_id >= num_verbs() || c.object_id < 0 || c.object_id >= num_objects()) {
      throw FormatError("composition " + std::to_string(i) + " references an unknown verb or object");
    }
    auto& slot = pair_index_[static_cast<std::size_t>(c.verb_id * num_objects() + c.object_id)];
    if (slot != -1) throw FormatError("duplicate composition (" + std::to_string(c.verb_id) + ", " +
                                      std::to_string(c.object_id) + ")");
    slot = c.hoi_id;
  }
}

int HOIVocabulary::verb_of(int hoi_id) const {
  if (hoi_id < 0 || hoi_id >= num_hoi()) throw ConfigError("hoi id out of range: " + std::to_string(hoi_id));
  return compositions_[static_cast<std::size_t>(hoi_id)].verb_id;
}

int HOIVocabulary::object_of(int hoi_id) const {
  if (hoi_id < 0 || hoi_id >= num_hoi()) throw ConfigError("hoi id out of range: " + std::to_string(hoi_id));
  return compositions_[static_cast<std::size_t>(hoi_id)].object_id;
}

std::optional<int> HOIVocabulary::find_hoi(int verb_id, int object_id) const {
  if (verb_id < 0 || verb_id >= num_verbs() || object_id < 0 || object_id >= num_objects()) {
    return std::nullopt;
  }
  const int v = pair_index_[static_cast<std::size_t>(verb_id * num_objects() + object_id)];
  if (v < 0) return std::nullopt;
  return v;
}

void HOIVocabulary::set_seen(const std::vector<int>& seen_ids) {
  seen_.assign(compositions_.size(), false);
  for (int id : seen_ids) {
    if (id < 0 || id >= num_hoi()) throw ConfigError("seen hoi id out of range: " + std::to_string(id));
    seen_[static_cast<std::size_t>(id)] = true;
  }
}

void HOIVocabulary::clear_seen() { seen_.assign(compositions_.size(), true); }

std::string HOIVocabulary::text_label(int hoi_id) const {
  const auto& c = compositions_.at(static_cast<std::size_t>(hoi_id));
  return render_text_label(verbs_[static_cast<std::size_t>(c.verb_id)],
                           objects_[static_cast<std::size_t>(c.object_id)]);
}

std::vector<std::string> HOIVocabulary::text_labels() const {
  std::vector<std::string> out;
  out.reserve(compositions_.size());
  for (int i = 0; i < num_hoi(); ++i) out.push_back(text_label(i));
  return out;
}

nlohmann::json HOIVocabulary::to_json() const {
  nlohmann::json j;
  j["format_version"] = kVocabularyFormat;
  j["verbs"] = nlohmann::json::array();
  for (const auto& v : verbs_) j["verbs"].push_back({{"id", v.id}, {"name", v.name}, {"gerund", v.gerund}});
  j["objects"] = nlohmann::json::array();
  for (const auto& o : objects_) j["objects"].push_back({{"id", o.id}, {"name", o.name}});
  j["hoi"] = nlohmann::json::array();
  for (const auto& c : compositions_) {
    j["hoi"].push_back({{"id", c.hoi_id}, {"verb_id", c.verb_id}, {"object_id", c.object_id}});
  }
  j["seen"] = nlohmann::json::array();
  for (int i = 0; i < num_hoi(); ++i) {
    if (seen_[static_cast<std::size_t>(i)]) j["seen"].push_back(i);
  }
  return j;
}

HOIVocabulary HOIVocabulary::from_json(const nlohmann::json& j) {
  try {
    if (j.contains("format_version") && j.at("format_version").get<int>() != kVocabularyFormat) {
      throw FormatError("unsupported vocabulary format version");
    }
    std::vector<Verb> verbs;
    for (const auto& v : j.at("verbs")) {
      if (!v.contains("gerund")) {
        throw FormatError("verb '" + v.at("name").get<std::string>() + "' has no gerund form");
      }
      verbs.push_back({v.at("id").get<int>(), v.at("name").get<std::string>(), v.at("gerund").get<std::string>()});
    }
    std::vector<ObjectCategory> objects;
    for (const auto& o : j.at("objects")) objects.push_back({o.at("id").get<int>(), o.at("name").get<std::string>()});
    std::vector<Composition> comps;
    for (const auto& c : j.at("hoi")) {
      comps.push_back({c.at("id").get<int>(), c.at("verb_id").get<int>(), c.at("object_id").get<int>()});
    }
    HOIVocabulary vocab(std::move(verbs), std::move(objects), std::move(comps));
    if (j.contains("seen")) vocab.set_seen(j.at("seen").get<std::vector<int>>());
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary: ") + e.what());
  }
}

void HOIVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

HOIVocabulary HOIVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

HOIVocabulary HOIVocabulary::synthetic(int num_verbs, int num_objects, int num_compositions,
                                       std::uint64_t seed) {
  if (num_verbs <= 0 || num_objects <= 0) throw ConfigError("vocabulary needs verbs and objects");
  if (num_compositions <= 0 || num_compositions > num_verbs * num_objects) {
    throw ConfigError("cannot draw " + std::to_string(num_compositions) + " compositions from " +
                      std::to_string(num_verbs) + " verbs x " + std::to_string(num_objects) + " objects");
  }
  std::vector<Verb> verbs;
  for (int v = 0; v < num_verbs; ++v) {
    if (v < static_cast<int>(base_verbs().size())) {
      verbs.push_back({v, base_verbs()[static_cast<std::size_t>(v)].first,
                       base_verbs()[static_cast<std::size_t>(v)].second});
    } else {
      verbs.push_back({v, "act" + std::to_string(v), "acting" + std::to_string(v)});
    }
  }
  std::vector<ObjectCategory> objects;
  for (int o = 0; o < num_objects; ++o) {
    if (o < static_cast<int>(base_objects().size())) {
      objects.push_back({o, base_objects()[static_cast<std::size_t>(o)]});
    } else {
      objects.push_back({o, "object" + std::to_string(o)});
    }
  }

  std::mt19937_64 rng(seed);
  std::set<std::pair<int, int>> chosen;
  // Cover each verb and each object once where possible.
  const int cover = std::min(num_compositions, std::max(num_verbs, num_objects));
  std::vector<int> vperm(static_cast<std::size_t>(num_verbs));
  std::vector<int> operm(static_cast<std::size_t>(num_objects));
  std::iota(vperm.begin(), vperm.end(), 0);
  std::iota(operm.begin(), operm.end(), 0);
  std::shuffle(vperm.begin(), vperm.end(), rng);
  std::shuffle(operm.begin(), operm.end(), rng);
  for (int i = 0; i < cover; ++i) {
    chosen.insert({vperm[static_cast<std::size_t>(i % num_verbs)], operm[static_cast<std::size_t>(i % num_objects)]});
  }
  std::vector<std::pair<int, int>> rest;
  for (int v = 0; v < num_verbs; ++v) {
    for (int o = 0; o < num_objects; ++o) {
      if (!chosen.contains({v, o})) rest.emplace_back(v, o);
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  for (const auto& p : rest) {
    if (static_cast<int>(chosen.size()) >= num_compositions) break;
    chosen.insert(p);
  }
  // std::set orders by (verb, object), which fixes the hoi id order.
  std::vector<Composition> comps;
  int id = 0;
  for (const auto& [v, o] : chosen) comps.push_back({id++, v, o});
  return HOIVocabulary(std::move(verbs), std::move(objects), std::move(comps));
}

}  // namespace dqen
