#include "skipgrid/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "skipgrid/error.hpp"

namespace skipgrid {

std::vector<char32_t> decode_utf8(const std::string& bytes) {
  std::vector<char32_t> out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  const auto fail = [&](const char* why) {
    throw Error::data("invalid UTF-8 at byte " + std::to_string(i) + ": " + why);
  };
  while (i < bytes.size()) {
    const unsigned char b0 = static_cast<unsigned char>(bytes[i]);
    char32_t cp = 0;
    int extra = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      extra = 1;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      extra = 2;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      extra = 3;
    } else {
      fail("bad leading byte");
    }
    if (i + static_cast<std::size_t>(extra) >= bytes.size()) fail("truncated sequence");
    for (int k = 1; k <= extra; ++k) {
      const unsigned char b = static_cast<unsigned char>(bytes[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) fail("bad continuation byte");
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMinForExtra[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMinForExtra[extra]) fail("overlong encoding");
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) fail("code point out of range");
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string encode_utf8(const std::vector<char32_t>& text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocab Vocab::from_codepoints(const std::vector<char32_t>& text) {
  std::set<char32_t> uniq(text.begin(), text.end());
  Vocab v;
  v.chars_.assign(uniq.begin(), uniq.end());  // std::set iterates sorted
  for (std::size_t i = 0; i < v.chars_.size(); ++i)
    v.to_id_[v.chars_[i]] = static_cast<std::int32_t>(i);
  return v;
}

char32_t Vocab::char_at(std::int32_t id) const {
  if (id < 0 || id >= size())
    throw Error::index("character id " + std::to_string(id) + " out of range [0," +
                       std::to_string(size()) + ")");
  return chars_[static_cast<std::size_t>(id)];
}

std::int32_t Vocab::id_of(char32_t c) const {
  auto it = to_id_.find(c);
  if (it == to_id_.end())
    throw Error::index("character U+" + std::to_string(static_cast<std::uint32_t>(c)) +
                       " not in vocabulary");
  return it->second;
}

std::vector<std::int32_t> Vocab::encode(const std::vector<char32_t>& text) const {
  std::vector<std::int32_t> out;
  out.reserve(text.size());
  for (char32_t c : text) out.push_back(id_of(c));
  return out;
}

std::vector<std::int32_t> Vocab::encode_utf8(const std::string& text) const {
  return encode(decode_utf8(text));
}

std::string Vocab::decode(const std::vector<std::int32_t>& ids) const {
  std::vector<char32_t> text;
  text.reserve(ids.size());
  for (std::int32_t id : ids) text.push_back(char_at(id));
  return skipgrid::encode_utf8(text);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw Error::io("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error::io("failed while reading: " + path);
  return ss.str();
}

std::pair<Vocab, SplitDataset> load_and_encode_text(const std::string& utf8_text) {
  if (utf8_text.empty()) throw Error::data("corpus is empty");
  const std::vector<char32_t> text = decode_utf8(utf8_text);
  Vocab vocab = Vocab::from_codepoints(text);
  std::vector<std::int32_t> ids = vocab.encode(text);

  const std::size_t n_train = ids.size() * 9 / 10;
  SplitDataset split;
  split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return {std::move(vocab), std::move(split)};
}

std::pair<Vocab, SplitDataset> load_and_encode(const std::string& path) {
  return load_and_encode_text(read_file(path));
}

Batch sample_batch(const std::vector<std::int32_t>& split, int batch_size, int block_size,
                   RngState& rng) {
  if (batch_size < 1 || block_size < 1)
    throw Error::contract("batch and block sizes must be positive");
  const long len = static_cast<long>(split.size());
  if (len < block_size + 1)
    throw Error::data("split of length " + std::to_string(len) +
                      " too short for block size " + std::to_string(block_size) +
                      " (need at least block_size + 1)");
  const std::uint64_t n_starts = static_cast<std::uint64_t>(len - block_size);

  Batch b;
  b.batch_size = batch_size;
  b.block_size = block_size;
  b.inputs.resize(static_cast<std::size_t>(batch_size) * block_size);
  b.targets.resize(static_cast<std::size_t>(batch_size) * block_size);
  for (int r = 0; r < batch_size; ++r) {
    const long start = static_cast<long>(rng.next_bounded(n_starts));
    for (int t = 0; t < block_size; ++t) {
      b.inputs[static_cast<std::size_t>(r) * block_size + t] =
          split[static_cast<std::size_t>(start + t)];
      b.targets[static_cast<std::size_t>(r) * block_size + t] =
          split[static_cast<std::size_t>(start + t + 1)];
    }
  }
  return b;
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace skipgrid
