#include "mapkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mapkit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'K', 'I', 'T', 'C', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const std::string& field) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw CheckpointError("checkpoint truncated while reading " + field);
    return v;
  }

  std::string bytes(std::uint64_t n, const std::string& field) {
    if (n > (1ull << 32)) throw CheckpointError("checkpoint field " + field + " has implausible length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("checkpoint truncated while reading " + field);
    return s;
  }

 private:
  std::istream& in_;
};

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint snapshot(const nn::ParameterSet& params, std::string header) {
  Checkpoint ckpt;
  ckpt.header = std::move(header);
  for (const auto& [name, t] : params.items()) {
    ckpt.entries.push_back({name, StoredTensor{t.shape(), std::vector<double>(t.values().begin(), t.values().end())}});
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.header.size());
  os.write(ckpt.header.data(), static_cast<std::streamsize>(ckpt.header.size()));
  put<std::uint64_t>(os, ckpt.entries.size());
  for (const auto& [name, t] : ckpt.entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("failed writing " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const nn::ParameterSet& params, const std::string& header) {
  save_checkpoint(path, snapshot(params, header));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in);
  const std::string magic = r.bytes(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("checkpoint field magic: not a mapkit checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint field version: got " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  ckpt.header = r.bytes(r.get<std::uint64_t>("header_length"), "header");
  const auto count = r.get<std::uint64_t>("entry_count");
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string where = "entry " + std::to_string(e);
    std::string name = r.bytes(r.get<std::uint32_t>(where + " name_length"), where + " name");
    const auto rank = r.get<std::uint32_t>(name + " rank");
    if (rank > 8) throw CheckpointError("checkpoint field " + name + " rank: implausible value");
    StoredTensor t;
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint64_t>(name + " shape"));
    const std::size_t n = shape_numel(t.shape);
    const std::string raw = r.bytes(n * sizeof(double), name + " values");
    t.values.resize(n);
    std::memcpy(t.values.data(), raw.data(), raw.size());
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void load_parameters(const Checkpoint& ckpt, const nn::ParameterSet& target, const std::string& source_prefix) {
  for (const auto& [name, tensor] : target.items()) {
    const StoredTensor* stored = ckpt.find(source_prefix + name);
    if (stored == nullptr) throw CheckpointError("checkpoint field " + source_prefix + name + ": missing");
    if (stored->shape != tensor.shape()) {
      throw CheckpointError("checkpoint field " + source_prefix + name + ": shape " + shape_string(stored->shape) +
                            " does not match model shape " + shape_string(tensor.shape()));
    }
  }
  for (const auto& [name, tensor] : target.items()) {
    Tensor t = tensor;
    const StoredTensor* stored = ckpt.find(source_prefix + name);
    std::copy(stored->values.begin(), stored->values.end(), t.mutable_values().begin());
  }
}

std::uint64_t parameter_hash(const nn::ParameterSet& params) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& [name, t] : params.items()) {
    h = fnv1a(h, name.data(), name.size());
    for (const auto d : t.shape()) h = fnv1a(h, &d, sizeof d);
    h = fnv1a(h, t.values().data(), t.values().size() * sizeof(double));
  }
  return h;
}

}  // namespace mapkit
