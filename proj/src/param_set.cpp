#include "stnet/param_set.hpp"

#include <fstream>

#include "stnet/io.hpp"

namespace stnet {

template <typename T>
void ParamSet<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (entries_.contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  entries_.emplace(name, Entry{std::move(value), trainable});
}

template <typename T>
void ParamSet<T>::set(const std::string& name, Tensor<T> value) {
  Tensor<T>& slot = at(name);
  if (slot.shape() != value.shape()) {
    throw ShapeError("parameter '" + name + "': shape " + shape_str(value.shape()) + " != " + shape_str(slot.shape()));
  }
  slot = std::move(value);
}

template <typename T>
Tensor<T>& ParamSet<T>::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
bool ParamSet<T>::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second.trainable;
}

template <typename T>
std::int64_t ParamSet<T>::count(bool all) const {
  std::int64_t n = 0;
  for (const auto& [name, e] : entries_) {
    if (all || e.trainable) n += e.value.numel();
  }
  return n;
}

template <typename T>
void save_params(const ParamSet<T>& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::json manifest = io::json::object();
  for (const auto& [name, e] : params.entries()) {
    const std::string file = name + ".bin";
    manifest[name] = {{"dtype", std::string(to_string(dtype_of<T>()))},
                      {"shape", e.value.shape()},
                      {"file", file},
                      {"trainable", e.trainable}};
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / file).string());
    io::write_le<T>(out, e.value.data());
  }
  io::write_json(dir / "manifest.json", manifest);
}

template <typename T>
ParamSet<T> load_params(const std::filesystem::path& dir) {
  const io::json manifest = io::read_json(dir / "manifest.json");
  if (!manifest.is_object()) throw ValidationError("params manifest must be a JSON object");
  ParamSet<T> out;
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    const std::string name = it.key();
    const io::json& meta = it.value();
    const Shape shape = meta.at("shape").get<Shape>();
    const DType dtype = parse_dtype(meta.at("dtype").get<std::string>());
    const std::string file = meta.value("file", name + ".bin");
    const bool trainable = meta.value("trainable", true);
    std::ifstream in(dir / file, std::ios::binary);
    if (!in) throw ValidationError("missing parameter blob " + (dir / file).string());
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<T> data;
    if (dtype == DType::F32) {
      auto raw = io::read_le<float>(in, n);
      data.assign(raw.begin(), raw.end());
    } else {
      auto raw = io::read_le<double>(in, n);
      data.assign(raw.begin(), raw.end());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw ValidationError("parameter blob " + file + " is longer than its manifest shape");
    }
    out.add(name, Tensor<T>(shape, std::move(data)), trainable);
  }
  return out;
}

template class ParamSet<float>;
template class ParamSet<double>;
template void save_params(const ParamSet<float>&, const std::filesystem::path&);
template void save_params(const ParamSet<double>&, const std::filesystem::path&);
template ParamSet<float> load_params(const std::filesystem::path&);
template ParamSet<double> load_params(const std::filesystem::path&);

}  // namespace stnet
