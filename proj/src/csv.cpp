#include "robustlens/csv.hpp"

#include <cstdio>

namespace robustlens {

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& schema, int version,
                     const std::vector<std::string>& header)
    : out_(path), columns_(header.size()), path_(path) {
  if (!out_) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  out_ << "# schema: " << schema << " v" << version << "\n";
  for (size_t i = 0; i < header.size(); ++i)
    out_ << header[i] << (i + 1 < header.size() ? "," : "\n");
}

void CsvWriter::cell(const std::string& v) {
  if (v.find('\n') != std::string::npos)
    fail(ErrorCode::bad_config, "csv cell may not contain a newline: " + v);
  out_ << (in_row_ ? "," : "");
  if (v.find_first_of(",\"") != std::string::npos) {
    out_ << '"';
    for (char c : v) {
      if (c == '"') out_ << '"';
      out_ << c;
    }
    out_ << '"';
  } else {
    out_ << v;
  }
  ++in_row_;
}

void CsvWriter::cell(double v) { cell(format_double(v)); }

void CsvWriter::cell(long long v) { cell(std::to_string(v)); }

void CsvWriter::cell(uint64_t v) { cell(std::to_string(v)); }

void CsvWriter::end_row() {
  if (in_row_ != columns_)
    fail(ErrorCode::bad_config, "csv row in '" + path_ + "' has " +
                                    std::to_string(in_row_) + " cells, expected " +
                                    std::to_string(columns_));
  out_ << "\n";
  in_row_ = 0;
}

void CsvWriter::comment(const std::string& text) {
  if (in_row_) fail(ErrorCode::bad_config, "comment inside an open csv row");
  out_ << "# " << text << "\n";
}

}  // namespace robustlens
