#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace domex {

// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// SHA-256 over length-prefixed fields, so ("ab","c") and ("a","bc") differ.
std::string content_hash(std::initializer_list<std::string_view> fields);

std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace domex
