#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dhedge {

// Binary label / opinion. The underlying values are the canonical -1/+1
// encoding used in every log and file format.
enum class Label : std::int8_t { negative = -1, positive = 1 };

constexpr Label operator-(Label l) noexcept {
  return l == Label::positive ? Label::negative : Label::positive;
}

constexpr int to_int(Label l) noexcept { return static_cast<int>(l); }

inline Label label_from_int(long long v) {
  if (v == -1) return Label::negative;
  if (v == 1) return Label::positive;
  throw std::invalid_argument("label must be -1 or +1, got " + std::to_string(v));
}

using OpinionVector = std::vector<Label>;

inline std::string pattern_key(std::span<const Label> opinions) {
  std::string key;
  for (std::size_t k = 0; k < opinions.size(); ++k) {
    if (k) key += '/';
    key += opinions[k] == Label::positive ? "+1" : "-1";
  }
  return key;
}

}  // namespace dhedge
