#pragma once

// Shell-style wildcard matching over whole tensor names: '*' matches any run
// (including dots), '?' one character, '[...]' a class with ranges and
// leading '!' or '^' for negation, '\' escapes the next character.

#include <string>
#include <string_view>
#include <vector>

#include "svdscope/error.hpp"

namespace svdscope {

class Glob {
 public:
  explicit Glob(std::string_view pattern) : pattern_(pattern) { validate(); }

  [[nodiscard]] const std::string& pattern() const { return pattern_; }

  [[nodiscard]] bool matches(std::string_view text) const {
    return match_from(0, text, 0);
  }

 private:
  void validate() const {
    if (pattern_.empty()) throw PatternError("empty glob pattern");
    for (std::size_t i = 0; i < pattern_.size(); ++i) {
      const char c = pattern_[i];
      if (c == '\\') {
        if (i + 1 == pattern_.size()) throw PatternError("glob '" + pattern_ + "': trailing escape");
        ++i;
      } else if (c == '[') {
        const std::size_t end = class_end(i);
        if (end == std::string::npos) {
          throw PatternError("glob '" + pattern_ + "': unterminated character class");
        }
        i = end;
      }
    }
  }

  // Index of the ']' closing the class opened at `open`, or npos.
  [[nodiscard]] std::size_t class_end(std::size_t open) const {
    std::size_t j = open + 1;
    if (j < pattern_.size() && (pattern_[j] == '!' || pattern_[j] == '^')) ++j;
    if (j < pattern_.size() && pattern_[j] == ']') ++j;  // literal ']' first
    for (; j < pattern_.size(); ++j) {
      if (pattern_[j] == '\\') {
        ++j;
        continue;
      }
      if (pattern_[j] == ']') return j;
    }
    return std::string::npos;
  }

  [[nodiscard]] bool class_matches(std::size_t open, std::size_t close, char c) const {
    std::size_t j = open + 1;
    bool negate = false;
    if (pattern_[j] == '!' || pattern_[j] == '^') {
      negate = true;
      ++j;
    }
    bool hit = false;
    while (j < close) {
      char lo = pattern_[j];
      if (lo == '\\') lo = pattern_[++j];
      char hi = lo;
      if (j + 2 < close && pattern_[j + 1] == '-') {
        j += 2;
        hi = pattern_[j];
        if (hi == '\\') hi = pattern_[++j];
      }
      if (lo <= c && c <= hi) hit = true;
      ++j;
    }
    return hit != negate;
  }

  [[nodiscard]] bool match_from(std::size_t p, std::string_view text, std::size_t t) const {
    while (p < pattern_.size()) {
      const char c = pattern_[p];
      if (c == '*') {
        while (p < pattern_.size() && pattern_[p] == '*') ++p;
        if (p == pattern_.size()) return true;
        for (std::size_t k = t; k <= text.size(); ++k) {
          if (match_from(p, text, k)) return true;
        }
        return false;
      }
      if (t == text.size()) return false;
      if (c == '?') {
        ++p;
      } else if (c == '[') {
        const std::size_t close = class_end(p);
        if (!class_matches(p, close, text[t])) return false;
        p = close + 1;
      } else {
        const char lit = c == '\\' ? pattern_[++p] : c;
        if (lit != text[t]) return false;
        ++p;
      }
      ++t;
    }
    return t == text.size();
  }

  std::string pattern_;
};

}  // namespace svdscope
