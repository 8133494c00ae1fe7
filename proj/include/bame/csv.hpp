#pragma once

#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bame::csv {

// RFC 4180 writer/parser. Rows end with CRLF; fields containing commas,
// quotes, or line breaks are quoted with doubled inner quotes.

std::string escape_field(std::string_view field);
void write_row(std::ostream& out, std::span<const std::string> fields);
std::string format_row(std::span<const std::string> fields);

// Parses a whole document. Accepts both CRLF and bare LF line ends; a
// trailing newline does not produce an empty record. Throws
// std::invalid_argument on an unterminated quoted field.
std::vector<std::vector<std::string>> parse(std::string_view text);

}  // namespace bame::csv
