#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace crashchat {

using json = nlohmann::json;

// Deterministic RNG used everywhere a seed matters. The transforms are
// written out by hand so identical seeds give identical streams on any
// platform / standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform() * (static_cast<double>(hi) - static_cast<double>(lo) + 1.0));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    have_spare_ = true;
    return mag * std::cos(ang);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hash_hex(const std::string& text);

// Timestamps are serialized at 0.1 s precision.
std::string format_seconds(double t);
double round_to_tenth(double t);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// JSON-lines helpers. Files may start with a provenance header object
// ({"type":"header","configHash":...}); readers skip it.
std::vector<json> read_jsonl_file(const std::string& path);
void write_jsonl_file(const std::string& path, const std::vector<json>& rows,
                      const std::string& config_hash = "");

}  // namespace crashchat
