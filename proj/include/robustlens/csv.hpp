#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "robustlens/error.hpp"

namespace robustlens {

/// CSV with a `# schema: <name> v<version>` comment line above the header.
/// Numbers are written with 17 significant digits so reruns are bit-identical;
/// cells containing commas or quotes get RFC-4180 quoting.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& schema, int version,
            const std::vector<std::string>& header);

  void cell(const std::string& v);
  void cell(double v);
  void cell(int v) { cell(static_cast<long long>(v)); }
  void cell(long long v);
  void cell(uint64_t v);
  void end_row();

  /// Extra `# key: value` footer comment (e.g. summary statistics).
  void comment(const std::string& text);

 private:
  std::ofstream out_;
  size_t columns_;
  size_t in_row_ = 0;
  std::string path_;
};

std::string format_double(double v);

}  // namespace robustlens
