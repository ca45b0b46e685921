#include "crashchat/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

#include "crashchat/common.hpp"
#include "crashchat/templates.hpp"

namespace crashchat {

namespace {

bool is_punct_token(const std::string& t) {
  return t.size() == 1 && (t[0] == '.' || t[0] == ',' || t[0] == '?' || t[0] == '!');
}

bool is_digit_token(const std::string& t) {
  return t.size() == 1 && std::isdigit(static_cast<unsigned char>(t[0]));
}

bool is_digitish(const std::string& t) { return is_digit_token(t) || t == "."; }

}  // namespace

std::vector<std::string> Tokenizer::split_text(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalpha(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isdigit(c)) {
      flush();
      out.emplace_back(1, raw);
    } else if (raw == '.' || raw == ',' || raw == '?' || raw == '!') {
      flush();
      out.emplace_back(1, raw);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

const Tokenizer& Tokenizer::instance() {
  static const Tokenizer tok;
  return tok;
}

Tokenizer::Tokenizer() {
  tokens_ = {"<pad>", "<bos>", "<sep>", "<eos>", "<unk>"};
  pad_id_ = 0;
  bos_id_ = 1;
  sep_id_ = 2;
  eos_id_ = 3;
  unk_id_ = 4;
  for (char c = '0'; c <= '9'; ++c) tokens_.emplace_back(1, c);
  tokens_.emplace_back(".");
  tokens_.emplace_back(",");
  tokens_.emplace_back("?");
  tokens_.emplace_back("!");

  std::set<std::string> words;
  for (const auto& text : text::closed_vocabulary_texts()) {
    for (const auto& tok : split_text(text)) {
      if (!is_digit_token(tok) && !is_punct_token(tok)) words.insert(tok);
    }
  }
  for (const auto& w : words) tokens_.push_back(w);

  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) index_[tokens_[i]] = i;

  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  vocab_hash_ = fnv1a64(joined.data(), joined.size());
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id_ : it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    throw std::out_of_range("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& tok : split_text(text)) ids.push_back(id_of(tok));
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  std::string prev;
  for (int id : ids) {
    if (id == pad_id_ || id == bos_id_ || id == sep_id_ || id == eos_id_) continue;
    const std::string& tok = token(id);
    if (!out.empty()) {
      bool glue = is_punct_token(tok);
      if (is_digitish(prev) && is_digitish(tok)) glue = true;
      if (is_digit_token(prev) && tok == "s") glue = true;
      if (!glue) out += ' ';
    }
    out += tok;
    prev = tok;
  }
  return out;
}

}  // namespace crashchat
