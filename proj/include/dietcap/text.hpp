#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dietcap {

// Shared by the caption parser, the metrics and the vocabulary builder.
// Lowercases ASCII, turns punctuation into separators and splits on
// whitespace. Digits and '/' survive ("3/4" stays one token), as does an
// apostrophe between two letters or digits ("isn't").
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep = " ");

std::string trim(std::string_view text);

}  // namespace dietcap
