#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace eddyid {

// Deterministic shortest-roundtrip formatting for doubles (%.17g keeps the
// exact value; outputs are compared byte-for-byte across runs).
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path,
            std::initializer_list<const char*> header)
      : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    bool first = true;
    for (const char* h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
  }

  template <typename... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((write_field(values, first), first = false), ...);
    out_ << '\n';
  }

 private:
  void write_field(double v, bool first) {
    if (!first) out_ << ',';
    out_ << format_double(v);
  }
  void write_field(long long v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }
  void write_field(int v, bool first) { write_field((long long)v, first); }
  void write_field(const std::string& v, bool first) {
    if (!first) out_ << ',';
    out_ << v;
  }
  std::ofstream out_;
};

}  // namespace eddyid
