#pragma once

#include <string>

namespace softgrasp::io {

// Reads a whole file. Paths ending in ".gz" are decompressed.
std::string read_file(const std::string& path);

// Writes a whole file, gzip-compressing when the path ends in ".gz".
// Compressed output carries no timestamp so identical content gives
// identical bytes.
void write_file(const std::string& path, const std::string& content);

bool has_gz_suffix(const std::string& path);

}  // namespace softgrasp::io
