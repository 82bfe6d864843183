// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>

namespace logah::hashing {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::string& path);
// Files hash their bytes; directories hash the sorted (relative path, file
// hash) listing of everything under them.
std::string sha256_path(const std::string& path);

}  // namespace logah::hashing
