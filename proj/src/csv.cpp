#include "varjepa/csv.hpp"

#include "varjepa/errors.hpp"

#include <charconv>
#include <sstream>

namespace varjepa {

std::string format_double(double v) {
  char buf[64];
  // shortest representation that round-trips
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc) {
  if (!out_) throw ConfigError("cannot open " + path.string() + " for writing");
  for (const auto& h : header) cell(h);
  end_row();
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  if (!first_) out_ << ',';
  out_ << s;
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }

CsvWriter& CsvWriter::cell(long long v) { return cell(std::to_string(v)); }

void CsvWriter::end_row() {
  out_ << '\n';
  first_ = true;
  if (!out_) throw ConfigError("CSV write failed");
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw InvalidInput("CSV has no column named " + name);
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty CSV: " + path.string());
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size()) throw InvalidInput("ragged CSV row in " + path.string());
  }
  return t;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InvalidInput("not a number: '" + s + "'");
  return v;
}

}  // namespace varjepa
