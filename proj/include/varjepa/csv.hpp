#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace varjepa {

/// Locale-independent shortest round-trip formatting.
std::string format_double(double v);

/// UTF-8, header row, '.' decimal separator, '\n' line ends.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  bool first_ = true;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
double parse_double(const std::string& s);

}  // namespace varjepa
