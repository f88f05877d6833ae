#include "mlmlab/data.hpp"

#include <istream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "mlmlab/errors.hpp"
#include "mlmlab/rng.hpp"

namespace mlmlab {

namespace {

constexpr std::string_view kShardMagic = "MLMSHRD1";

}  // namespace

std::vector<TokenId> ByteTokenizer::encode(std::string_view bytes) {
  std::vector<TokenId> ids;
  ids.reserve(bytes.size());
  for (char c : bytes) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || id >= static_cast<TokenId>(kDataTokens)) {
      throw std::invalid_argument("decode: id " + std::to_string(id) + " at index " +
                                  std::to_string(i) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

void CorpusShard::validate() const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::uint64_t>(tokens[i]) >= vocab_size) {
      throw ConfigError("shard: token " + std::to_string(tokens[i]) + " at offset " +
                        std::to_string(i) + " outside vocab " + std::to_string(vocab_size));
    }
  }
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const std::uint64_t b = boundaries[i];
    if ((i > 0 || b == 0) && b <= prev) {
      throw ConfigError("shard: boundary " + std::to_string(i) + " not strictly increasing");
    }
    if (b > tokens.size()) throw ConfigError("shard: boundary past the last token");
    prev = b;
  }
}

std::string serialize_shard(const CorpusShard& shard) {
  shard.validate();
  detail::ByteWriter w;
  w.put_bytes(kShardMagic);
  w.put<std::uint32_t>(kShardFormatVersion);
  w.put<std::uint32_t>(shard.vocab_size);
  w.put<std::uint64_t>(shard.tokens.size());
  w.put<std::uint64_t>(shard.boundaries.size());
  for (TokenId t : shard.tokens) w.put<std::uint32_t>(static_cast<std::uint32_t>(t));
  for (std::uint64_t b : shard.boundaries) w.put<std::uint64_t>(b);
  return w.bytes();
}

CorpusShard parse_shard(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (r.get_bytes(kShardMagic.size()) != kShardMagic) throw IoError(context + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kShardFormatVersion) {
    throw IoError(context + ": unsupported format version " + std::to_string(version));
  }
  CorpusShard shard;
  shard.vocab_size = r.get<std::uint32_t>();
  const auto n_tokens = r.get<std::uint64_t>();
  const auto n_bounds = r.get<std::uint64_t>();
  if (n_tokens > r.remaining() / 4 || n_bounds > r.remaining() / 8) {
    throw IoError(context + ": header counts exceed file size");
  }
  shard.tokens.resize(n_tokens);
  for (auto& t : shard.tokens) {
    const auto v = r.get<std::uint32_t>();
    if (v >= shard.vocab_size) throw IoError(context + ": token id " + std::to_string(v) + " out of range");
    t = static_cast<TokenId>(v);
  }
  shard.boundaries.resize(n_bounds);
  for (auto& b : shard.boundaries) b = r.get<std::uint64_t>();
  if (!r.at_end()) throw IoError(context + ": trailing bytes");
  try {
    shard.validate();
  } catch (const ConfigError& e) {
    throw IoError(context + ": " + e.what());
  }
  return shard;
}

void write_shard(const std::string& path, const CorpusShard& shard) {
  detail::write_file(path, serialize_shard(shard));
}

CorpusShard read_shard(const std::string& path) {
  return parse_shard(detail::read_file(path), path);
}

CorpusShard binarize(std::istream& text) {
  CorpusShard shard;
  std::string line;
  while (std::getline(text, line)) {
    if (line.empty()) continue;
    const auto ids = ByteTokenizer::encode(line);
    shard.tokens.insert(shard.tokens.end(), ids.begin(), ids.end());
    shard.boundaries.push_back(shard.tokens.size());
  }
  if (text.bad()) throw IoError("binarize: input stream failed");
  return shard;
}

void binarize_file(const std::string& text_path, const std::string& shard_path) {
  const std::string text = detail::read_file(text_path);
  std::istringstream in(text);
  write_shard(shard_path, binarize(in));
}

std::size_t window_count(const CorpusShard& shard, std::size_t seq_len) {
  if (seq_len == 0) throw ConfigError("window_count: seq_len must be positive");
  return shard.tokens.size() / seq_len;
}

std::vector<std::size_t> window_order(std::size_t n_windows, std::uint64_t seed,
                                      std::uint64_t epoch) {
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(SeedStream::kBatchOrder), epoch}));
  rng.shuffle(order.begin(), order.end());
  return order;
}

namespace {

TokenBlock gather_windows(const CorpusShard& shard, std::size_t seq_len,
                          std::span<const std::size_t> windows) {
  TokenBlock block;
  block.batch = windows.size();
  block.seq_len = seq_len;
  block.tokens.reserve(windows.size() * seq_len);
  for (std::size_t w : windows) {
    const auto first = shard.tokens.begin() + static_cast<std::ptrdiff_t>(w * seq_len);
    block.tokens.insert(block.tokens.end(), first, first + static_cast<std::ptrdiff_t>(seq_len));
  }
  return block;
}

std::size_t checked_windows(const CorpusShard& shard, std::size_t seq_len, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batching: batch_size must be positive");
  const std::size_t n = window_count(shard, seq_len);
  if (n == 0) {
    throw ConfigError("batching: shard has " + std::to_string(shard.tokens.size()) +
                      " tokens, fewer than seq_len " + std::to_string(seq_len));
  }
  return n;
}

}  // namespace

std::vector<TokenBlock> make_batches(const CorpusShard& shard, std::size_t seq_len,
                                     std::size_t batch_size, std::uint64_t seed,
                                     std::uint64_t epoch) {
  const std::size_t n = checked_windows(shard, seq_len, batch_size);
  const auto order = window_order(n, seed, epoch);
  std::vector<TokenBlock> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    batches.push_back(gather_windows(shard, seq_len, std::span(order).subspan(start, count)));
  }
  return batches;
}

BatchStream::BatchStream(const CorpusShard& shard, std::size_t seq_len, std::size_t batch_size,
                         std::uint64_t seed)
    : shard_(&shard),
      seq_len_(seq_len),
      batch_size_(batch_size),
      seed_(seed),
      n_windows_(checked_windows(shard, seq_len, batch_size)),
      batches_per_epoch_((n_windows_ + batch_size - 1) / batch_size) {}

TokenBlock BatchStream::batch(std::uint64_t index) {
  const std::uint64_t epoch = index / batches_per_epoch_;
  const std::size_t within = index % batches_per_epoch_;
  if (epoch != cached_epoch_) {
    order_ = window_order(n_windows_, seed_, epoch);
    cached_epoch_ = epoch;
  }
  const std::size_t start = within * batch_size_;
  const std::size_t count = std::min(batch_size_, n_windows_ - start);
  return gather_windows(*shard_, seq_len_, std::span(order_).subspan(start, count));
}

void SyntheticSpec::validate() const {
  if (n_keys == 0) throw ConfigError("synthetic: n_keys must be positive");
  if (2 * n_keys > ByteTokenizer::kDataTokens) {
    throw ConfigError("synthetic: 2·n_keys must fit in the 256 data tokens");
  }
  if (seq_len < 2 || seq_len % 2 != 0) throw ConfigError("synthetic: seq_len must be even and >= 2");
  if (n_sequences == 0) throw ConfigError("synthetic: n_sequences must be positive");
}

std::vector<TokenId> synthetic_pairing(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<TokenId> pairing(spec.n_keys);
  std::iota(pairing.begin(), pairing.end(), static_cast<TokenId>(spec.n_keys));
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(SeedStream::kSynthetic), 0}));
  rng.shuffle(pairing.begin(), pairing.end());
  return pairing;
}

CorpusShard generate_synthetic(const SyntheticSpec& spec) {
  const auto pairing = synthetic_pairing(spec);
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(SeedStream::kSynthetic), 1, spec.split}));
  CorpusShard shard;
  shard.tokens.reserve(spec.n_sequences * spec.seq_len);
  for (std::size_t s = 0; s < spec.n_sequences; ++s) {
    for (std::size_t t = 0; t < spec.seq_len / 2; ++t) {
      const auto key = static_cast<TokenId>(rng.below(spec.n_keys));
      shard.tokens.push_back(key);
      shard.tokens.push_back(pairing[static_cast<std::size_t>(key)]);
    }
    shard.boundaries.push_back(shard.tokens.size());
  }
  return shard;
}

}  // namespace mlmlab
