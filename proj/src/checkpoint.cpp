#include "mlmlab/checkpoint.hpp"

#include "binary_io.hpp"
#include "mlmlab/errors.hpp"

namespace mlmlab {

namespace {

constexpr std::string_view kMagic = "MLMLAB01";

template <typename T>
void put_tensor(detail::ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  w.put<std::uint64_t>(name.size());
  w.put_bytes(name);
  w.put<std::uint64_t>(t.rank());
  for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
  for (T v : t.values()) w.put<float>(static_cast<float>(v));
}

template <typename T>
void get_tensor(detail::ByteReader& r, const std::string& name, Tensor<T>& t) {
  const auto name_len = r.get<std::uint64_t>();
  if (name_len > r.remaining()) throw IoError(r.context() + ": bad tensor name length");
  const auto stored = r.get_bytes(name_len);
  if (stored != name) {
    throw IoError(r.context() + ": expected tensor '" + name + "', found '" + std::string(stored) + "'");
  }
  const auto rank = r.get<std::uint64_t>();
  if (rank != t.rank()) throw IoError(r.context() + ": rank mismatch for " + name);
  for (std::size_t d = 0; d < rank; ++d) {
    if (r.get<std::uint64_t>() != t.dim(d)) {
      throw IoError(r.context() + ": shape mismatch for " + name + ", expected " +
                    shape_to_string(t.shape()));
    }
  }
  for (T& v : t.values()) v = static_cast<T>(r.get<float>());
}

std::string read_config_block(detail::ByteReader& r) {
  if (r.get_bytes(kMagic.size()) != kMagic) throw IoError(r.context() + ": bad magic");
  const auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) throw IoError(r.context() + ": bad config length");
  return std::string(r.get_bytes(len));
}

TrainConfig parse_config_block(const std::string& text, const std::string& context) {
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw IoError(context + ": stored config invalid: " + e.what());
  }
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const TrainConfig& config, ModelParams<T>& params,
                                 const AdamState<T>& adam, std::uint64_t step) {
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  const std::string text = serialize_config(config);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text);
  std::vector<std::string> trainable_names;
  params.for_each([&](const std::string& name, Tensor<T>& t, bool trainable, bool) {
    put_tensor(w, name, t);
    if (trainable) trainable_names.push_back(name);
  });
  if (adam.m.size() != trainable_names.size() || adam.v.size() != trainable_names.size()) {
    throw ShapeError("serialize_checkpoint: optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < trainable_names.size(); ++i) {
    put_tensor(w, "adam_m/" + trainable_names[i], adam.m[i]);
    put_tensor(w, "adam_v/" + trainable_names[i], adam.v[i]);
  }
  w.put<std::uint64_t>(step);
  return w.bytes();
}

template <typename T>
Checkpoint<T> parse_checkpoint(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  Checkpoint<T> ck;
  ck.config = parse_config_block(read_config_block(r), context);
  ck.params = ModelParams<T>::init(ck.config.model, 0);
  std::vector<std::string> trainable_names;
  ck.params.for_each([&](const std::string& name, Tensor<T>& t, bool trainable, bool) {
    get_tensor(r, name, t);
    if (trainable) trainable_names.push_back(name);
  });
  const auto trainable = ck.params.trainable();
  ck.adam = AdamState<T>::zeros_like(trainable, ck.config.adam_beta1, ck.config.adam_beta2,
                                     ck.config.adam_epsilon);
  for (std::size_t i = 0; i < trainable_names.size(); ++i) {
    get_tensor(r, "adam_m/" + trainable_names[i], ck.adam.m[i]);
    get_tensor(r, "adam_v/" + trainable_names[i], ck.adam.v[i]);
  }
  ck.step = r.get<std::uint64_t>();
  ck.adam.step_count = ck.step;
  if (!r.at_end()) throw IoError(context + ": trailing bytes");
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& config, ModelParams<T>& params,
                     const AdamState<T>& adam, std::uint64_t step) {
  detail::write_file(path, serialize_checkpoint(config, params, adam, step));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return parse_checkpoint<T>(detail::read_file(path), path);
}

TrainConfig peek_checkpoint_config(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path);
  return parse_config_block(read_config_block(r), path);
}

#define MLMLAB_INSTANTIATE_CHECKPOINT(T)                                                         \
  template std::string serialize_checkpoint<T>(const TrainConfig&, ModelParams<T>&,             \
                                               const AdamState<T>&, std::uint64_t);             \
  template Checkpoint<T> parse_checkpoint<T>(std::string_view, const std::string&);              \
  template void save_checkpoint<T>(const std::string&, const TrainConfig&, ModelParams<T>&,      \
                                   const AdamState<T>&, std::uint64_t);                         \
  template Checkpoint<T> load_checkpoint<T>(const std::string&);

MLMLAB_INSTANTIATE_CHECKPOINT(float)
MLMLAB_INSTANTIATE_CHECKPOINT(double)

#undef MLMLAB_INSTANTIATE_CHECKPOINT

}  // namespace mlmlab
