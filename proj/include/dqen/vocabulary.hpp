#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dqen {

struct Verb {
  int id = 0;
  std::string name;
  std::string gerund;
};

struct ObjectCategory {
  int id = 0;
  std::string name;
};

struct Composition {
  int hoi_id = 0;
  int verb_id = 0;
  int object_id = 0;
};

// The (verb, object) label space. hoi ids are dense 0..num_hoi-1 and every
// composition is unique.
class HOIVocabulary {
 public:
  HOIVocabulary() = default;
  HOIVocabulary(std::vector<Verb> verbs, std::vector<ObjectCategory> objects,
                std::vector<Composition> compositions);

  [[nodiscard]] int num_verbs() const { return static_cast<int>(verbs_.size()); }
  [[nodiscard]] int num_objects() const { return static_cast<int>(objects_.size()); }
  [[nodiscard]] int num_hoi() const { return static_cast<int>(compositions_.size()); }

  [[nodiscard]] const std::vector<Verb>& verbs() const { return verbs_; }
  [[nodiscard]] const std::vector<ObjectCategory>& objects() const { return objects_; }
  [[nodiscard]] const std::vector<Composition>& compositions() const { return compositions_; }

  [[nodiscard]] int verb_of(int hoi_id) const;
  [[nodiscard]] int object_of(int hoi_id) const;
  [[nodiscard]] std::optional<int> find_hoi(int verb_id, int object_id) const;

  // Zero-shot restriction; every category is seen unless set otherwise.
  [[nodiscard]] const std::vector<bool>& seen_mask() const { return seen_; }
  void set_seen(const std::vector<int>& seen_ids);
  void clear_seen();

  // "A photo of a person <gerund> a/an <object>" for one category.
  [[nodiscard]] std::string text_label(int hoi_id) const;
  [[nodiscard]] std::vector<std::string> text_labels() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static HOIVocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static HOIVocabulary load(const std::filesystem::path& path);

  // Generated names; compositions drawn without replacement, covering every
  // verb and object when the count allows it.
  static HOIVocabulary synthetic(int num_verbs, int num_objects, int num_compositions,
                                 std::uint64_t seed);

 private:
  void build_index();

  std::vector<Verb> verbs_;
  std::vector<ObjectCategory> objects_;
  std::vector<Composition> compositions_;
  std::vector<bool> seen_;
  std::vector<int> pair_index_;  // verb_id * num_objects + object_id -> hoi_id or -1
};

std::string render_text_label(const std::string& gerund, const std::string& object_name);
std::string render_text_label(const Verb& verb, const ObjectCategory& object);

}  // namespace dqen
