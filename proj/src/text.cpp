#include "kvret/text.hpp"

#include <algorithm>
#include <cctype>

namespace kvret::text {

namespace {

constexpr std::string_view kLeading = "\"'(";
constexpr std::string_view kTrailing = ".,!?;:)\"'";

}  // namespace

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string> split(std::string_view s, std::string_view delims) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find_first_of(delims, start);
    if (end == std::string_view::npos) end = s.size();
    if (end > start) out.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> tokenize(std::string_view utterance) {
  std::vector<std::string> tokens;
  for (const auto& word : split(lowercase(utterance), " \t\r\n")) {
    std::string_view w = word;
    std::vector<std::string> trailing;
    while (!w.empty() && kLeading.find(w.front()) != std::string_view::npos) {
      tokens.emplace_back(1, w.front());
      w.remove_prefix(1);
    }
    while (!w.empty() && kTrailing.find(w.back()) != std::string_view::npos) {
      trailing.emplace_back(1, w.back());
      w.remove_suffix(1);
    }
    if (!w.empty()) tokens.emplace_back(w);
    tokens.insert(tokens.end(), trailing.rbegin(), trailing.rend());
  }
  return tokens;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace kvret::text
