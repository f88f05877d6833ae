#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlmlab/ops.hpp"

namespace mlmlab {

// Byte values map to ids 0..255; three reserved ids follow.
struct ByteTokenizer {
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kMask = 257;
  static constexpr TokenId kBos = 258;
  static constexpr std::size_t kVocabSize = 259;
  static constexpr std::size_t kDataTokens = 256;

  static std::vector<TokenId> encode(std::string_view bytes);
  // Throws std::invalid_argument on a reserved or out-of-range id.
  static std::string decode(std::span<const TokenId> ids);
};

struct CorpusShard {
  std::uint32_t vocab_size = ByteTokenizer::kVocabSize;
  std::vector<TokenId> tokens;
  std::vector<std::uint64_t> boundaries;  // end offset of each document

  // Throws ConfigError if an id is out of range or boundaries are not
  // strictly increasing within the token count.
  void validate() const;
};

inline constexpr std::uint32_t kShardFormatVersion = 1;

std::string serialize_shard(const CorpusShard& shard);
CorpusShard parse_shard(std::string_view bytes, const std::string& context = "shard");
void write_shard(const std::string& path, const CorpusShard& shard);
CorpusShard read_shard(const std::string& path);

// One document per line; the '\n' terminator is dropped and empty lines are
// skipped so every document holds at least one token.
CorpusShard binarize(std::istream& text);
void binarize_file(const std::string& text_path, const std::string& shard_path);

// A block of `batch` windows of `seq_len` tokens, row-major.
struct TokenBlock {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
};

// Windows are contiguous non-overlapping slices [w·seq_len, (w+1)·seq_len);
// trailing tokens that do not fill a window are dropped.
std::size_t window_count(const CorpusShard& shard, std::size_t seq_len);

// Seeded permutation of window indices for one epoch.
std::vector<std::size_t> window_order(std::size_t n_windows, std::uint64_t seed,
                                      std::uint64_t epoch);

// All batches of one epoch in order. The last batch is smaller when
// batch_size does not divide the window count. Throws ConfigError when the
// shard holds fewer than seq_len tokens.
std::vector<TokenBlock> make_batches(const CorpusShard& shard, std::size_t seq_len,
                                     std::size_t batch_size, std::uint64_t seed,
                                     std::uint64_t epoch);

// Random access into the infinite sequence of epochs: batch i is batch
// i % batches_per_epoch() of epoch i / batches_per_epoch().
class BatchStream {
 public:
  BatchStream(const CorpusShard& shard, std::size_t seq_len, std::size_t batch_size,
              std::uint64_t seed);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  TokenBlock batch(std::uint64_t index);

 private:
  const CorpusShard* shard_;
  std::size_t seq_len_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t n_windows_;
  std::size_t batches_per_epoch_;
  std::uint64_t cached_epoch_ = UINT64_MAX;
  std::vector<std::size_t> order_;
};

// Alternating key/value sequences. Keys use ids [0, n_keys), values
// [n_keys, 2·n_keys); value = g(key) for a bijection g fixed by seed.
// Different `split` values draw different sequences under the same g.
struct SyntheticSpec {
  std::size_t n_keys = 32;
  std::size_t seq_len = 32;
  std::size_t n_sequences = 1000;
  std::uint64_t seed = 0;
  std::uint64_t split = 0;

  void validate() const;
};

// pairing[k] = id of g(k).
std::vector<TokenId> synthetic_pairing(const SyntheticSpec& spec);

// One document per sequence; vocab_size is the byte tokenizer's.
CorpusShard generate_synthetic(const SyntheticSpec& spec);

}  // namespace mlmlab
