#include "softgrasp/io.hpp"

#include <fstream>
#include <sstream>

#include <zlib.h>

#include "softgrasp/error.hpp"

namespace softgrasp::io {

bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

std::string read_file(const std::string& path) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error("io_error", "cannot open " + path);
    std::string out;
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<size_t>(n));
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw Error("io_error", "corrupt gzip stream in " + path);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  if (has_gz_suffix(path)) {
    // gzopen writes a header with mtime 0, so output is reproducible.
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw Error("io_error", "cannot write " + path);
    size_t off = 0;
    while (off < content.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<size_t>(content.size() - off, 1u << 20));
      if (gzwrite(f, content.data() + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw Error("io_error", "gzip write failed for " + path);
      }
      off += chunk;
    }
    gzclose(f);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + path);
  out << content;
  if (!out) throw Error("io_error", "write failed for " + path);
}

}  // namespace softgrasp::io
