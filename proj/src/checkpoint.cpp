#include "invarirank/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "invarirank/errors.hpp"

namespace invarirank {
namespace {

constexpr char kMagic[8] = {'I', 'R', 'N', 'K', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void Put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T Get(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError(std::string("checkpoint truncated while reading ") + what, 0);
  return value;
}

std::string GetBytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError(std::string("checkpoint truncated while reading ") + what, 0);
  return s;
}

nlohmann::json ConfigToJson(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},         {"rope_base", c.rope_base},
          {"max_seq_len", c.max_seq_len}, {"dtype", "f64"},       {"seed", c.seed}};
}

ModelConfig ConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  if (j.at("dtype").get<std::string>() != "f64") throw ConfigError("checkpoint dtype is not f64");
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void WriteCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header = {{"format", "invarirank-checkpoint"},
                           {"config", ConfigToJson(checkpoint.config)},
                           {"step", checkpoint.step},
                           {"metadata", checkpoint.metadata}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  Put<std::uint32_t>(out, kCheckpointVersion);
  Put<std::uint64_t>(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.blobs.size()));
  for (const auto& blob : checkpoint.blobs) {
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.name.size()));
    out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.shape.size()));
    for (std::size_t e : blob.shape) Put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(blob.values.data()),
              static_cast<std::streamsize>(blob.values.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::string magic = GetBytes(in, sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw VersionError(path.string() + " is not an invarirank checkpoint");
  }
  const auto version = Get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const auto header_len = Get<std::uint64_t>(in, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(GetBytes(in, header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 0);
  }
  Checkpoint ck;
  ck.config = ConfigFromJson(header.at("config"));
  ck.step = header.at("step").get<std::int64_t>();
  ck.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  const auto count = Get<std::uint32_t>(in, "blob count");
  for (std::uint32_t b = 0; b < count; ++b) {
    NamedTensor blob;
    blob.name = GetBytes(in, Get<std::uint32_t>(in, "name length"), "name");
    const auto rank = Get<std::uint32_t>(in, "rank");
    for (std::uint32_t d = 0; d < rank; ++d) blob.shape.push_back(Get<std::uint64_t>(in, "extent"));
    blob.values.resize(numerics::NumElements(blob.shape));
    in.read(reinterpret_cast<char*>(blob.values.data()),
            static_cast<std::streamsize>(blob.values.size() * sizeof(double)));
    if (!in) throw ParseError("checkpoint truncated in blob " + blob.name, 0);
    ck.blobs.push_back(std::move(blob));
  }
  return ck;
}

Checkpoint CheckpointFromParams(const ModelParams& params, std::int64_t step) {
  Checkpoint ck;
  ck.config = params.config;
  ck.step = step;
  ck.blobs = params.tensors;
  return ck;
}

ModelParams ParamsFromCheckpoint(const Checkpoint& checkpoint) {
  ModelParams params;
  params.config = checkpoint.config;
  for (const auto& blob : checkpoint.blobs) {
    if (blob.name.rfind("adam.", 0) != 0) params.tensors.push_back(blob);
  }
  ValidateParams(params);
  return params;
}

}  // namespace invarirank
