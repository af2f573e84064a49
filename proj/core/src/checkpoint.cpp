#include "protoseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_config.hpp"

namespace protoseg {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) fail(ErrorCode::kFormat, "truncated checkpoint: " + what);
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (1ULL << 32)) fail(ErrorCode::kFormat, "implausible length in checkpoint: " + what);
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    fail(ErrorCode::kFormat, "truncated checkpoint: " + what);
  }
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(c.meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("checkpoint meta: ") + e.what());
  }
  nlohmann::json header = {{"kind", c.kind},
                           {"encoder", c.params.config},
                           {"iteration", c.iteration},
                           {"best_val_dc", c.best_val_dc},
                           {"rng_state", c.rng_state},
                           {"meta", meta}};
  const std::string h = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.tensors.size()));
  for (const auto& t : c.params.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put<std::int32_t>(out, d);
    put<std::uint64_t>(out, t.values.size());
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kFormat, path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::string h = get_string(in, get<std::uint64_t>(in, "header length"), "header");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(h);
    c.kind = header.at("kind").get<std::string>();
    from_json(header.at("encoder"), c.params.config);
    c.iteration = header.at("iteration").get<std::int64_t>();
    c.best_val_dc = header.at("best_val_dc").get<double>();
    c.rng_state = header.at("rng_state").get<std::string>();
    c.meta = header.at("meta").dump();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad checkpoint header: " + std::string(e.what()));
  }

  const auto n = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = get_string(in, get<std::uint32_t>(in, "name length"), "tensor name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) fail(ErrorCode::kFormat, "implausible tensor rank in checkpoint");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get<std::int32_t>(in, "shape"));
    const auto count = get<std::uint64_t>(in, "value count");
    if (count > (1ULL << 32)) fail(ErrorCode::kFormat, "implausible tensor size in checkpoint");
    t.values.resize(static_cast<std::size_t>(count));
    if (count > 0 && !in.read(reinterpret_cast<char*>(t.values.data()),
                              static_cast<std::streamsize>(count * sizeof(double)))) {
      fail(ErrorCode::kFormat, "truncated checkpoint: tensor " + t.name);
    }
    c.params.tensors.push_back(std::move(t));
  }

  validate(c.params.config);
  const Parameters reference = init_params(c.params.config);
  if (!reference.same_layout(c.params)) {
    fail(ErrorCode::kFormat, "checkpoint tensors do not match the layout of its encoder config");
  }
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  EncoderConfig stored = c.params.config;
  stored.seed = expected.seed;  // the init seed does not affect the architecture
  if (!(stored == expected)) {
    nlohmann::json a = c.params.config, b = expected;
    fail(ErrorCode::kConfigMismatch, "checkpoint encoder config " + a.dump() + " differs from expected " + b.dump());
  }
  return c;
}

}  // namespace protoseg
