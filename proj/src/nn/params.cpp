#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "signet/nn.hpp"

namespace signet::nn {

Tensor ParamStore::add(const std::string& name, Tensor init) {
  if (!index_.emplace(name, tensors_.size()).second) {
    throw ContractError("parameter '" + name + "' registered twice");
  }
  init.set_requires_grad(true);
  names_.push_back(name);
  tensors_.push_back(init);
  return init;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) const_cast<Tensor&>(t).zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(t.to_vector());
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != tensors_.size()) throw ContractError("snapshot does not match parameters");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = const_cast<Tensor&>(tensors_[i]).mutable_data();
    if (dst.size() != values[i].size()) {
      throw ShapeError("snapshot size mismatch for '" + names_[i] + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 2;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

std::filesystem::path sidecar(const std::filesystem::path& file) {
  auto s = file;
  s += ".json";
  return s;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  const std::size_t total = scalar_count();
  out.write("SGEM", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(total));
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    for (double v : tensors_[i].data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
    params.push_back({{"name", names_[i]}, {"offset", offset}, {"shape", tensors_[i].shape()}});
    offset += tensors_[i].numel();
  }
  if (!out) throw IoError("failed writing checkpoint " + file.string());
  std::ofstream side(sidecar(file));
  if (!side) throw IoError("cannot write " + sidecar(file).string());
  side << nlohmann::json{{"format", "signet-params"}, {"version", 1}, {"params", params}}.dump(2)
       << '\n';
}

void ParamStore::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SGEM", 4) != 0) {
    throw IoError(file.string() + " is not an SGEM container");
  }
  if (get_u32(in) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  const auto rows = get_u32(in);
  const auto cols = get_u32(in);
  if (rows != 1 || cols != scalar_count()) {
    throw ShapeError("checkpoint holds " + std::to_string(std::size_t{rows} * cols) +
                     " values, model has " + std::to_string(scalar_count()));
  }
  std::ifstream side(sidecar(file));
  if (!side) throw IoError("missing checkpoint sidecar " + sidecar(file).string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint sidecar: " + std::string(e.what()));
  }
  const auto& params = meta.at("params");
  if (params.size() != tensors_.size()) throw ShapeError("checkpoint parameter count differs");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (params[i].at("name") != names_[i] || params[i].at("shape").get<Shape>() != tensors_[i].shape()) {
      throw ShapeError("checkpoint entry " + std::to_string(i) + " does not match '" + names_[i] + "'");
    }
    auto dst = const_cast<Tensor&>(tensors_[i]).mutable_data();
    for (auto& v : dst) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint data");
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[k]} << (8 * k);
      v = std::bit_cast<double>(bits);
    }
  }
}

}  // namespace signet::nn
