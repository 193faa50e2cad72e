#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kvret::text {

/// Lowercases, splits on whitespace, then peels leading/trailing
/// punctuation off each word into separate tokens.
std::vector<std::string> tokenize(std::string_view utterance);

std::string lowercase(std::string_view s);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");
/// Splits on any of the given delimiter characters, dropping empty pieces.
std::vector<std::string> split(std::string_view s, std::string_view delims);
std::string trim(std::string_view s);

}  // namespace kvret::text
