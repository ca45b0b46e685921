#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace crashchat {

// Word-level tokenizer over the closed template vocabulary, lowercased.
// Digits and punctuation are single-character tokens, so timestamps are
// read and emitted as digit sequences ("12.3s" -> 1 2 . 3 s).
class Tokenizer {
 public:
  static const Tokenizer& instance();

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return pad_id_; }
  int bos_id() const { return bos_id_; }
  int sep_id() const { return sep_id_; }
  int eos_id() const { return eos_id_; }
  int unk_id() const { return unk_id_; }

  int id_of(const std::string& token) const;  // unk for unknown tokens
  const std::string& token(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  std::uint64_t vocab_hash() const { return vocab_hash_; }

  // Lowercases and splits into word / digit / punctuation tokens. Also the
  // tokenization rule used by the text metrics.
  static std::vector<std::string> split_text(const std::string& text);

 private:
  Tokenizer();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_id_ = 0, bos_id_ = 0, sep_id_ = 0, eos_id_ = 0, unk_id_ = 0;
  std::uint64_t vocab_hash_ = 0;
};

}  // namespace crashchat
