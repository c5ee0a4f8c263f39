#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "hdrx/nn.hpp"

namespace hdrx::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'D', 'R', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint: " + path);
  return v;
}

void put_doubles(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void get_doubles(std::istream& is, Tensor& t, const std::string& path) {
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw IoError("truncated checkpoint: " + path);
}

std::string get_string(std::istream& is, std::uint32_t len, const std::string& path) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw IoError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& architecture_json,
                     std::span<const Parameter* const> params, const AdamState* optimizer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(architecture_json.size()));
  os.write(architecture_json.data(), static_cast<std::streamsize>(architecture_json.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (int d : p->value.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put_doubles(os, p->value);
  }
  const bool has_opt = optimizer != nullptr && optimizer->first_moment.size() == params.size();
  put<std::uint8_t>(os, has_opt ? 1 : 0);
  if (has_opt) {
    put<std::uint64_t>(os, optimizer->step);
    put<double>(os, optimizer->config.lr);
    put<double>(os, optimizer->config.beta1);
    put<double>(os, optimizer->config.beta2);
    put<double>(os, optimizer->config.eps);
    for (const auto& m : optimizer->first_moment) put_doubles(os, m);
    for (const auto& v : optimizer->second_moment) put_doubles(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  Checkpoint ck;
  ck.architecture_json = get_string(is, get<std::uint32_t>(is, path), path);
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto rank = get<std::uint32_t>(is, path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(is, path));
    Tensor t(shape);
    get_doubles(is, t, path);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (get<std::uint8_t>(is, path)) {
    AdamState st;
    st.step = get<std::uint64_t>(is, path);
    st.config.lr = get<double>(is, path);
    st.config.beta1 = get<double>(is, path);
    st.config.beta2 = get<double>(is, path);
    st.config.eps = get<double>(is, path);
    for (const auto& [name, t] : ck.tensors) {
      st.first_moment.emplace_back(t.shape());
      get_doubles(is, st.first_moment.back(), path);
    }
    for (const auto& [name, t] : ck.tensors) {
      st.second_moment.emplace_back(t.shape());
      get_doubles(is, st.second_moment.back(), path);
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  for (auto* p : params) {
    auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(), [&](const auto& e) { return e.first == p->name; });
    if (it == ckpt.tensors.end()) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (!it->second.same_shape(p->value))
      throw IoError("checkpoint shape mismatch for '" + p->name + "': " + it->second.shape_string() + " vs " +
                    p->value.shape_string());
    p->value = it->second;
  }
  if (ckpt.tensors.size() != params.size())
    throw IoError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " parameters, model has " +
                  std::to_string(params.size()));
}

}  // namespace hdrx::nn
