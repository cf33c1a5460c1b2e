#include "dqen/checkpoint.hpp"

#include "dqen/embedding_cache.hpp"
#include "dqen/errors.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace dqen {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'Q', 'E', 'N', 'C', 'K', 'P', 'T'};

void write_u64(std::ostream& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t read_u64(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == EOF) throw FormatError("truncated checkpoint header");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DqenModel& model, const nlohmann::json& extra) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["vocabulary"] = model.vocabulary().to_json();
  header["extra"] = extra;
  header["tensors"] = nlohmann::json::array();
  for (const auto& p : model.params().params()) {
    header["tensors"].push_back({{"name", p.name}, {"shape", {p.var.rows(), p.var.cols()}}, {"frozen", p.frozen}});
  }
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((kCheckpointVersion >> (8 * b)) & 0xFF));
  write_u64(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : model.params().params()) {
    write_f32(out, p.var.value().data(), static_cast<std::size_t>(p.var.value().size()));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = static_cast<std::uint32_t>(read_u64(in, 4));
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t len = read_u64(in, 8);
  if (len > (1ULL << 30)) throw FormatError("implausible checkpoint header length");
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("truncated checkpoint header");

  LoadedCheckpoint out;
  try {
    const auto header = nlohmann::json::parse(h);
    auto vocab = HOIVocabulary::from_json(header.at("vocabulary"));
    out.model = std::make_unique<DqenModel>(model_config_from_json(header.at("config")), std::move(vocab));
    out.extra = header.value("extra", nlohmann::json::object());
    auto& store = out.model->params();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != store.params().size()) {
      throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(store.params().size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = tensors[i];
      const auto& p = store.params()[i];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<ag::Index>>();
      if (name != p.name || shape.size() != 2 || shape[0] != p.var.rows() || shape[1] != p.var.cols()) {
        throw FormatError("checkpoint tensor '" + name + "' does not match model parameter '" + p.name + "'");
      }
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& p = store.params()[i];
      Var v = p.var;
      read_f32(in, v.mutable_value().data(), static_cast<std::size_t>(v.value().size()));
      if (tensors[i].value("frozen", false)) store.set_frozen(p.name, true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  if (in.peek() != EOF) throw FormatError(path.string() + ": trailing bytes after payload");
  return out;
}

}  // namespace dqen
