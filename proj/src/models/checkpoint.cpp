#include "ctxscale/models/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace ctxscale::models {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'S', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(std::ifstream& in, const std::filesystem::path& path) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError(path.string() + ": truncated checkpoint");
  return v;
}

std::string take_string(std::ifstream& in, const std::filesystem::path& path, std::uint64_t limit) {
  const auto n = take<std::uint64_t>(in, path);
  if (n > limit) throw ParseError(path.string() + ": implausible string length in checkpoint");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError(path.string() + ": truncated checkpoint");
  return s;
}

CheckpointInfo read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError(path.string() + ": not a checkpoint");
  CheckpointInfo info;
  info.version = take<std::uint32_t>(in, path);
  if (info.version != kCheckpointVersion) {
    throw ParseError(path.string() + ": checkpoint version " + std::to_string(info.version) + ", expected " +
                     std::to_string(kCheckpointVersion));
  }
  info.scalar_bytes = take<std::uint32_t>(in, path);
  if (info.scalar_bytes != 4 && info.scalar_bytes != 8) throw ParseError(path.string() + ": bad scalar width");
  auto header = nlohmann::json::parse(take_string(in, path, 1u << 24));
  info.config = header.at("model").get<ModelConfig>();
  info.extra = header.value("extra", nlohmann::json::object());
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Forecaster<T>& model, const nlohmann::json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(T));
  const std::string header = nlohmann::json{{"model", model.config()}, {"extra", extra}}.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto& entries = model.parameters().entries();
  put<std::uint64_t>(out, entries.size());
  for (const auto& [name, tensor] : entries) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, tensor.rank());
    for (auto d : tensor.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(T)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  return read_header(in, path);
}

template <typename T>
void load_parameters(const std::filesystem::path& path, Forecaster<T>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  auto info = read_header(in, path);
  const auto count = take<std::uint64_t>(in, path);
  auto& params = model.parameters();
  if (count != params.size()) {
    throw ParseError(path.string() + ": checkpoint has " + std::to_string(count) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = take_string(in, path, 4096);
    const auto rank = take<std::uint64_t>(in, path);
    if (rank > numerics::kMaxRank) throw ParseError(path.string() + ": bad rank for '" + name + "'");
    numerics::Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(in, path);
    if (!params.contains(name)) throw ParseError(path.string() + ": unknown parameter '" + name + "'");
    auto& dst = params.get(name);
    if (dst.shape() != shape) {
      throw ParseError(path.string() + ": parameter '" + name + "' has shape " + numerics::to_string(shape) +
                       ", model expects " + numerics::to_string(dst.shape()));
    }
    auto values = dst.mutable_values();
    if (info.scalar_bytes == sizeof(T)) {
      in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
    } else if (info.scalar_bytes == 4) {
      std::vector<float> raw(values.size());
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
      std::transform(raw.begin(), raw.end(), values.begin(), [](float v) { return static_cast<T>(v); });
    } else {
      std::vector<double> raw(values.size());
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
      std::transform(raw.begin(), raw.end(), values.begin(), [](double v) { return static_cast<T>(v); });
    }
    if (!in) throw ParseError(path.string() + ": truncated checkpoint");
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const Forecaster<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const Forecaster<double>&, const nlohmann::json&);
template void load_parameters<float>(const std::filesystem::path&, Forecaster<float>&);
template void load_parameters<double>(const std::filesystem::path&, Forecaster<double>&);

}  // namespace ctxscale::models
