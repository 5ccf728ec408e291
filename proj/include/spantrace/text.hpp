#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Character-offset utilities. All offsets in this project are Unicode
// scalar-value indices into UTF-8 text, never byte offsets.

namespace spantrace {

using CharInterval = std::pair<std::size_t, std::size_t>;  // half-open [first, second)

// Decodes UTF-8 into scalar values. Invalid bytes decode as U+FFFD, one
// scalar per offending byte, so indexing never throws on dirty input.
std::vector<char32_t> decode_utf8(std::string_view utf8);

std::string encode_utf8(const std::vector<char32_t>& cps);

std::size_t char_length(std::string_view utf8);

// Substring by character offsets; clamps to the available range.
std::string char_substr(std::string_view utf8, std::size_t start, std::size_t end);

// Replaces every character inside the given intervals with U+0020.
// Character length is preserved; intervals must lie within the text.
// Throws std::out_of_range on an out-of-bounds interval.
std::string mask_intervals(std::string_view utf8, const std::vector<CharInterval>& intervals);

struct NormalizedText {
  std::string text;                  // lowercased, whitespace runs collapsed, trimmed
  std::vector<std::size_t> origin;   // origin[i] = original char index of normalized char i
};

NormalizedText normalize(std::string_view utf8);

// Case/whitespace-robust containment.
bool contains_norm(std::string_view haystack, std::string_view needle);

// First normalized match, mapped back to original character coordinates.
std::optional<CharInterval> locate_norm(std::string_view haystack, std::string_view needle);

// All non-overlapping normalized matches in original coordinates.
std::vector<CharInterval> locate_norm_all(std::string_view haystack, std::string_view needle);

// Exact case-insensitive match (no whitespace collapsing), char offsets.
std::optional<CharInterval> locate_ci(std::string_view haystack, std::string_view needle);

// Sentence spans in character coordinates. Sentences end at '.', '!' or '?'
// followed by whitespace/end, or at a newline. No abbreviation handling.
std::vector<CharInterval> split_sentences(std::string_view utf8);

bool is_space_cp(char32_t cp);

}  // namespace spantrace
