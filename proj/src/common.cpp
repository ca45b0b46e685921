#include "crashchat/common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crashchat {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return std::string(buf);
}

std::string format_seconds(double t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", t);
  return std::string(buf);
}

double round_to_tenth(double t) { return std::round(t * 10.0) / 10.0; }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("failed while reading: " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.is_open()) throw std::runtime_error("cannot open file for writing: " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("failed while writing: " + path);
}

std::vector<json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("cannot open file for reading: " + path);
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    json obj = json::parse(line);
    if (obj.is_object() && obj.value("type", "") == "header") continue;
    rows.push_back(std::move(obj));
  }
  if (in.bad()) throw std::runtime_error("failed while reading: " + path);
  return rows;
}

void write_jsonl_file(const std::string& path, const std::vector<json>& rows,
                      const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.is_open()) throw std::runtime_error("cannot open file for writing: " + path);
  if (!config_hash.empty()) {
    json header = {{"type", "header"}, {"configHash", config_hash}};
    out << header.dump() << "\n";
  }
  for (const auto& row : rows) out << row.dump() << "\n";
  if (!out.good()) throw std::runtime_error("failed while writing: " + path);
}

}  // namespace crashchat
