#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "skipgrid/rng.hpp"

namespace skipgrid {

// Character vocabulary: the sorted unique code points of a corpus. Ids are
// dense 0..V-1 in code-point order, so encode/decode is a bijection.
class Vocab {
 public:
  static Vocab from_codepoints(const std::vector<char32_t>& text);

  int size() const { return static_cast<int>(chars_.size()); }
  char32_t char_at(std::int32_t id) const;
  std::int32_t id_of(char32_t c) const;  // throws if the character is unknown

  std::vector<std::int32_t> encode(const std::vector<char32_t>& text) const;
  std::vector<std::int32_t> encode_utf8(const std::string& text) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;

  const std::vector<char32_t>& chars() const { return chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, std::int32_t> to_id_;
};

// Unshuffled prefix split: first 90% of the encoded corpus trains, the final
// 10% validates.
struct SplitDataset {
  std::vector<std::int32_t> train_ids;
  std::vector<std::int32_t> val_ids;
};

struct Batch {
  int batch_size = 0;
  int block_size = 0;
  std::vector<std::int32_t> inputs;   // [batch, block] row-major
  std::vector<std::int32_t> targets;  // inputs shifted one position ahead
};

// Strict UTF-8 decode; malformed input throws a data error.
std::vector<char32_t> decode_utf8(const std::string& bytes);
std::string encode_utf8(const std::vector<char32_t>& text);

std::string read_file(const std::string& path);

// Build the vocabulary and the 90/10 prefix split from a UTF-8 text file.
std::pair<Vocab, SplitDataset> load_and_encode(const std::string& path);
std::pair<Vocab, SplitDataset> load_and_encode_text(const std::string& utf8_text);

// batch_size contiguous windows with uniform random starts; targets are the
// next-character shift of the inputs.
Batch sample_batch(const std::vector<std::int32_t>& split, int batch_size, int block_size,
                   RngState& rng);

// FNV-1a over raw bytes; recorded with runs so a corpus can be identified.
std::uint64_t fnv1a_hash(const std::string& bytes);

}  // namespace skipgrid
