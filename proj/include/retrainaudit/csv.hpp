#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "retrainaudit/common.hpp"

namespace retrainaudit {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  std::ptrdiff_t col(std::string_view name) const;
};

// Reads a whole CSV file. Handles quoted fields, embedded separators and
// CRLF line endings. Throws ConfigError if the file cannot be opened.
CsvTable read_csv(const std::filesystem::path& path);

// Streams rows out with LF endings; fields containing separators or quotes
// are quoted on the way out.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(std::span<const std::string> fields);
  void row(std::initializer_list<std::string> fields);

 private:
  std::ofstream out_;
};

}  // namespace retrainaudit
