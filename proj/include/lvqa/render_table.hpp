#pragma once

// Fixed rendering resources. Bump the version whenever a table changes so
// that rendered prompts and questions stay reproducible across runs.

#include <algorithm>
#include <array>
#include <string_view>

namespace lvqa::render_table {

inline constexpr std::string_view kVersion = "render-table/1";

// Garment classes that take "a pair of ..." in prompts and "Are the ..." in
// questions.
inline constexpr std::array<std::string_view, 16> kPluralClasses = {
    "pants",   "trousers", "shorts",  "jeans",   "tights",     "leggings",
    "stockings", "socks",  "shoes",   "boots",   "sandals",    "sneakers",
    "gloves",  "glasses",  "sunglasses", "overalls",
};

// Attribute names treated as pattern-category when an annotation gives a bare
// string instead of {name, category}.
inline constexpr std::array<std::string_view, 22> kPatternAttributes = {
    "striped",   "dotted",     "floral",   "plaid",       "check",
    "checked",   "camouflage", "paisley",  "argyle",      "houndstooth",
    "leopard",   "zebra",      "geometric", "cartoon",    "chevron",
    "herringbone", "tie-dye",  "polka dot", "animal print", "abstract",
    "lettering", "toile de jouy",
};

// VQA prompt wrapper appended to every question sent over the wire.
inline constexpr std::string_view kVqaWrapperVersion = "vqa-wrapper/1";
inline constexpr std::string_view kVqaWrapperSuffix = " Please answer yes or no.";

inline bool is_plural_class(std::string_view label) {
  return std::find(kPluralClasses.begin(), kPluralClasses.end(), label) != kPluralClasses.end();
}

inline bool is_pattern_attribute(std::string_view name) {
  return std::find(kPatternAttributes.begin(), kPatternAttributes.end(), name) !=
         kPatternAttributes.end();
}

inline bool starts_with_vowel(std::string_view word) {
  if (word.empty()) return false;
  switch (word.front()) {
    case 'a': case 'e': case 'i': case 'o': case 'u':
      return true;
    default:
      return false;
  }
}

}  // namespace lvqa::render_table
