#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mlmlab/model.hpp"
#include "mlmlab/optim.hpp"
#include "mlmlab/train_config.hpp"

namespace mlmlab {

// Layout, all integers u64 little-endian:
//   "MLMLAB01", config text length, config text,
//   per model tensor (ModelParams::for_each order): name length, name, rank,
//     dims, values as f32;
//   per trainable tensor: the Adam first moment named "adam_m/<name>", then
//     the second moment "adam_v/<name>";
//   step counter.
template <typename T>
struct Checkpoint {
  TrainConfig config;
  ModelParams<T> params;
  AdamState<T> adam;
  std::uint64_t step = 0;
};

template <typename T>
std::string serialize_checkpoint(const TrainConfig& config, ModelParams<T>& params,
                                 const AdamState<T>& adam, std::uint64_t step);

// Throws IoError on malformed input, including tensors whose name or shape
// disagrees with the stored config.
template <typename T>
Checkpoint<T> parse_checkpoint(std::string_view bytes, const std::string& context = "checkpoint");

template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& config, ModelParams<T>& params,
                     const AdamState<T>& adam, std::uint64_t step);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Reads only the config block.
TrainConfig peek_checkpoint_config(const std::string& path);

}  // namespace mlmlab
