#include "dqen/embedding_cache.hpp"

#include "dqen/errors.hpp"
#include "dqen/hash.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dqen {

namespace {

constexpr const char* kCacheFormat = "dqen-embedding-cache";
constexpr int kCacheVersion = 1;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

void write_f32(std::ostream& out, const double* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  std::vector<char> buf(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32(std::istream& in, double* data, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw FormatError("truncated float32 payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

void EmbeddingCache::build_index() {
  label_index_.clear();
  image_index_.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) label_index_.emplace(labels[i], i);
  for (std::size_t i = 0; i < image_ids.size(); ++i) image_index_.emplace(image_ids[i], i);
}

bool EmbeddingCache::has_image(const std::string& image_id) const { return image_index_.contains(image_id); }

Vector EmbeddingCache::image_embedding(const std::string& image_id) const {
  const auto it = image_index_.find(image_id);
  if (it == image_index_.end()) throw FormatError("image '" + image_id + "' is not in the embedding cache");
  return image.row(static_cast<ag::Index>(it->second)).transpose();
}

ag::Matrix EmbeddingCache::text_embed(const std::vector<std::string>& wanted) const {
  ag::Matrix t(dim, static_cast<ag::Index>(wanted.size()));
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    const auto it = label_index_.find(wanted[i]);
    if (it == label_index_.end()) throw FormatError("label '" + wanted[i] + "' is not in the embedding cache");
    t.col(static_cast<ag::Index>(i)) = text.row(static_cast<ag::Index>(it->second)).transpose();
  }
  return t;
}

nlohmann::json embedding_cache_build(const std::vector<const Split*>& splits, const EmbeddingProvider& provider,
                                     const HOIVocabulary& vocab, const std::filesystem::path& dir, bool overwrite) {
  const auto manifest_path = dir / "manifest.json";
  if (std::filesystem::exists(manifest_path) && !overwrite) {
    std::ifstream in(manifest_path);
    const auto existing = nlohmann::json::parse(in);
    if (existing.value("provider_id", std::string()) != provider.provider_id()) {
      throw FormatError("cache at " + dir.string() + " was built by provider '" +
                        existing.value("provider_id", std::string()) + "'");
    }
    return existing;
  }
  std::filesystem::create_directories(dir);

  std::vector<std::string> labels = vocab.text_labels();
  for (auto& w : word_prompt_labels(vocab)) labels.push_back(std::move(w));
  const ag::Matrix t = provider.text_embed(labels);  // (D, N)

  std::vector<std::string> ids;
  std::vector<Vector> image_vecs;
  for (const Split* split : splits) {
    for (std::size_t i = 0; i < split->annotations.size(); ++i) {
      const Image* img = i < split->images.size() ? &split->images[i] : nullptr;
      ids.push_back(split->annotations[i].image_id);
      image_vecs.push_back(provider.image_embed(make_image_ref(split->annotations[i], img, vocab)));
    }
  }

  {
    std::ofstream out(dir / "text.f32", std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir / "text.f32").string());
    const ag::Matrix rows = t.transpose();
    write_f32(out, rows.data(), static_cast<std::size_t>(rows.size()));
  }
  {
    std::ofstream out(dir / "image.f32", std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir / "image.f32").string());
    for (const auto& v : image_vecs) write_f32(out, v.data(), static_cast<std::size_t>(v.size()));
  }

  nlohmann::json m;
  m["format"] = kCacheFormat;
  m["format_version"] = kCacheVersion;
  m["provider_id"] = provider.provider_id();
  m["dim"] = provider.dim();
  m["dtype"] = "float32-le";
  m["text_file"] = "text.f32";
  m["image_file"] = "image.f32";
  m["labels"] = nlohmann::json::array();
  for (const auto& l : labels) m["labels"].push_back({{"text", l}, {"hash", hex64(fnv1a64(l))}});
  m["image_ids"] = ids;
  std::ofstream out(manifest_path);
  out << m.dump(1) << '\n';
  return m;
}

EmbeddingCache load_embedding_cache(const std::filesystem::path& dir, int expected_dim) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no embedding cache manifest in " + dir.string());
  EmbeddingCache cache;
  try {
    const auto m = nlohmann::json::parse(in);
    if (m.value("format", std::string()) != kCacheFormat || m.value("format_version", 0) != kCacheVersion) {
      throw FormatError(dir.string() + ": unsupported embedding cache format");
    }
    if (m.at("dtype").get<std::string>() != "float32-le") throw FormatError("unsupported cache dtype");
    cache.provider_id = m.at("provider_id").get<std::string>();
    cache.dim = m.at("dim").get<int>();
    for (const auto& l : m.at("labels")) {
      const auto text = l.at("text").get<std::string>();
      if (l.at("hash").get<std::string>() != hex64(fnv1a64(text))) {
        throw FormatError("label hash mismatch for '" + text + "'");
      }
      cache.labels.push_back(text);
    }
    cache.image_ids = m.at("image_ids").get<std::vector<std::string>>();
    if (expected_dim > 0 && cache.dim != expected_dim) {
      throw FormatError("embedding cache has D=" + std::to_string(cache.dim) + ", expected " +
                        std::to_string(expected_dim));
    }
    cache.text.resize(static_cast<ag::Index>(cache.labels.size()), cache.dim);
    cache.image.resize(static_cast<ag::Index>(cache.image_ids.size()), cache.dim);
    std::ifstream tf(dir / m.at("text_file").get<std::string>(), std::ios::binary);
    read_f32(tf, cache.text.data(), static_cast<std::size_t>(cache.text.size()));
    std::ifstream imf(dir / m.at("image_file").get<std::string>(), std::ios::binary);
    read_f32(imf, cache.image.data(), static_cast<std::size_t>(cache.image.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": malformed cache manifest: " + e.what());
  }
  cache.build_index();
  return cache;
}

}  // namespace dqen
