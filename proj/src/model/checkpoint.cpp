#include "stk/model/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <map>

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"

namespace stk::model {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'T', 'K', '1'};
constexpr std::uint32_t kMaxRank = 8;

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  const char* take(std::size_t n, const char* what) {
    require(bytes_.size() - pos_ >= n, ErrorKind::kTruncated, std::string("checkpoint truncated in ") + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) { return io::get<std::uint32_t>(take(4, what)); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const nn::ParameterList<float>& tensors) {
  std::vector<char> out(kMagic, kMagic + 4);
  for (const auto& [name, tensor] : tensors) {
    io::put(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    io::put(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto extent : tensor.shape()) io::put(out, static_cast<std::uint32_t>(extent));
    for (float v : tensor.data()) io::put(out, v);
  }
  return {out.begin(), out.end()};
}

nn::ParameterList<float> decode_tensors(std::string_view bytes) {
  require(bytes.size() >= 4, ErrorKind::kTruncated, "checkpoint shorter than its header");
  require(bytes.substr(0, 4) == std::string_view(kMagic, 4), ErrorKind::kBadMagic, "not an STK1 checkpoint");
  Reader in(bytes.substr(4));
  nn::ParameterList<float> out;
  while (!in.done()) {
    const auto name_len = in.u32("name length");
    std::string name(in.take(name_len, "name"), name_len);
    const auto rank = in.u32("rank");
    require(rank >= 1 && rank <= kMaxRank, ErrorKind::kInvalidArgument, "checkpoint tensor " + name + " has rank " +
                                                                            std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& extent : shape) {
      extent = in.u32("extents");
      require(extent >= 1, ErrorKind::kInvalidArgument, "checkpoint tensor " + name + " has a zero extent");
      count *= extent;
    }
    const char* payload = in.take(count * sizeof(float), "payload");
    std::vector<float> data(count);
    for (std::size_t k = 0; k < count; ++k) {
      data[k] = io::get<float>(payload + 4 * k);
      require(std::isfinite(data[k]), ErrorKind::kNonFinite, "checkpoint tensor " + name + " holds a non-finite value");
    }
    out.push_back({std::move(name), BasicTensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

fs::path sidecar_path(const fs::path& path) {
  auto out = path;
  out += ".json";
  return out;
}

void save_checkpoint(const fs::path& path, const nn::ParameterList<float>& tensors, const std::string& sidecar_json) {
  io::write_file_atomic(sidecar_path(path), sidecar_json);
  io::write_file_atomic(path, encode_tensors(tensors));
}

nn::ParameterList<float> load_checkpoint_tensors(const fs::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_tensors(std::string_view(bytes.data(), bytes.size()));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.detail());
  }
}

std::string load_checkpoint_sidecar(const fs::path& path) {
  const auto bytes = io::read_file(sidecar_path(path));
  return {bytes.begin(), bytes.end()};
}

template <typename T>
void assign_by_name(const nn::ParameterList<float>& src, nn::ParameterList<T>& dst) {
  std::map<std::string, const BasicTensor<float>*> by_name;
  for (const auto& entry : src) by_name[entry.name] = &entry.tensor;
  for (auto& [name, tensor] : dst) {
    const auto it = by_name.find(name);
    require(it != by_name.end(), ErrorKind::kInvalidArgument, "checkpoint lacks parameter " + name);
    require(it->second->shape() == tensor.shape(), ErrorKind::kShapeMismatch,
            "checkpoint parameter " + name + " has shape " + shape_str(it->second->shape()) + ", model expects " +
                shape_str(tensor.shape()));
    auto out = tensor.mutable_data();
    const auto in = it->second->data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(in[k]);
  }
}

template void assign_by_name(const nn::ParameterList<float>&, nn::ParameterList<float>&);
template void assign_by_name(const nn::ParameterList<float>&, nn::ParameterList<double>&);

}  // namespace stk::model
