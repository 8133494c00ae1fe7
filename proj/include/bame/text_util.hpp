#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace bame {

// A lowercase word together with its byte span in the original text.
struct Token {
    std::string text;
    size_t begin = 0;
    size_t end = 0;
};

std::string to_lower_ascii(std::string_view s);

// Splits on anything non-alphanumeric; tokens come back lowercased.
std::vector<Token> tokenize(std::string_view text);

// Canonical form used for classifier patterns and their inputs:
// lowercase, every run of non-alphanumerics collapsed to one space, trimmed.
std::string normalize_phrase(std::string_view s);

uint64_t fnv1a64(std::string_view data, uint64_t seed = 14695981039346656037ull);
std::string to_hex(uint64_t value);

std::string trim(std::string_view s);

}  // namespace bame
