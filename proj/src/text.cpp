#include "spantrace/text.hpp"

#include <algorithm>
#include <stdexcept>

namespace spantrace {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

// Appends one scalar as UTF-8.
void append_utf8(std::string& out, char32_t cp) {
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

char32_t fold_case(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  // Latin-1 uppercase block, excluding the multiplication sign.
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

}  // namespace

bool is_space_cp(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case U'\f':
    case U'\v':
    case 0x00A0:  // no-break space
    case 0x2028:
    case 0x2029:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::vector<char32_t> decode_utf8(std::string_view utf8) {
  std::vector<char32_t> out;
  out.reserve(utf8.size());
  std::size_t i = 0;
  const std::size_t n = utf8.size();
  while (i < n) {
    const unsigned char b0 = static_cast<unsigned char>(utf8[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + len > n) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char b = static_cast<unsigned char>(utf8[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

std::size_t char_length(std::string_view utf8) { return decode_utf8(utf8).size(); }

std::string char_substr(std::string_view utf8, std::size_t start, std::size_t end) {
  const auto cps = decode_utf8(utf8);
  start = std::min(start, cps.size());
  end = std::min(end, cps.size());
  std::string out;
  for (std::size_t i = start; i < end; ++i) append_utf8(out, cps[i]);
  return out;
}

std::string mask_intervals(std::string_view utf8, const std::vector<CharInterval>& intervals) {
  auto cps = decode_utf8(utf8);
  for (const auto& [a, b] : intervals) {
    if (a > b || b > cps.size()) {
      throw std::out_of_range("mask_intervals: region [" + std::to_string(a) + "," +
                              std::to_string(b) + ") outside text of length " +
                              std::to_string(cps.size()));
    }
    for (std::size_t i = a; i < b; ++i) cps[i] = U' ';
  }
  return encode_utf8(cps);
}

NormalizedText normalize(std::string_view utf8) {
  const auto cps = decode_utf8(utf8);
  NormalizedText out;
  std::vector<char32_t> norm;
  bool pending_space = false;
  std::size_t pending_origin = 0;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (is_space_cp(cps[i])) {
      if (!norm.empty() && !pending_space) {
        pending_space = true;
        pending_origin = i;
      }
      continue;
    }
    if (pending_space) {
      norm.push_back(U' ');
      out.origin.push_back(pending_origin);
      pending_space = false;
    }
    norm.push_back(fold_case(cps[i]));
    out.origin.push_back(i);
  }
  out.text = encode_utf8(norm);
  return out;
}

bool contains_norm(std::string_view haystack, std::string_view needle) {
  const auto n = normalize(needle);
  if (n.text.empty()) return false;
  return normalize(haystack).text.find(n.text) != std::string::npos;
}

namespace {

std::vector<CharInterval> locate_norm_impl(std::string_view haystack, std::string_view needle,
                                           bool first_only) {
  std::vector<CharInterval> out;
  const auto h = normalize(haystack);
  const auto n = normalize(needle);
  if (n.text.empty()) return out;
  // origin indices are per normalized *character*; convert byte positions of
  // matches in the normalized UTF-8 back to normalized char indices.
  const auto hcps = decode_utf8(h.text);
  const auto ncps = decode_utf8(n.text);
  if (ncps.empty() || ncps.size() > hcps.size()) return out;
  for (std::size_t i = 0; i + ncps.size() <= hcps.size();) {
    if (std::equal(ncps.begin(), ncps.end(), hcps.begin() + static_cast<std::ptrdiff_t>(i))) {
      const std::size_t start = h.origin[i];
      const std::size_t end = h.origin[i + ncps.size() - 1] + 1;
      out.emplace_back(start, end);
      if (first_only) return out;
      i += ncps.size();
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace

std::optional<CharInterval> locate_norm(std::string_view haystack, std::string_view needle) {
  auto v = locate_norm_impl(haystack, needle, true);
  if (v.empty()) return std::nullopt;
  return v.front();
}

std::vector<CharInterval> locate_norm_all(std::string_view haystack, std::string_view needle) {
  return locate_norm_impl(haystack, needle, false);
}

std::optional<CharInterval> locate_ci(std::string_view haystack, std::string_view needle) {
  const auto h = decode_utf8(haystack);
  const auto n = decode_utf8(needle);
  if (n.empty() || n.size() > h.size()) return std::nullopt;
  auto eq_ci = [](char32_t a, char32_t b) { return fold_case(a) == fold_case(b); };
  for (std::size_t i = 0; i + n.size() <= h.size(); ++i) {
    if (std::equal(n.begin(), n.end(), h.begin() + static_cast<std::ptrdiff_t>(i), eq_ci)) {
      return CharInterval{i, i + n.size()};
    }
  }
  return std::nullopt;
}

std::vector<CharInterval> split_sentences(std::string_view utf8) {
  const auto cps = decode_utf8(utf8);
  std::vector<CharInterval> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    while (start < end && is_space_cp(cps[start])) ++start;
    std::size_t e = end;
    while (e > start && is_space_cp(cps[e - 1])) --e;
    if (e > start) out.emplace_back(start, e);
    start = end;
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (c == U'\n') {
      flush(i + 1);
    } else if (c == U'.' || c == U'!' || c == U'?') {
      const bool at_end = i + 1 == cps.size();
      if (at_end || is_space_cp(cps[i + 1])) flush(i + 1);
    }
  }
  flush(cps.size());
  return out;
}

}  // namespace spantrace
