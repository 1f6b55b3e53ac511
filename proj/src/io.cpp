#include "vwkde/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace vwkde {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  return fields;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line_no) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(line_no) + ": not a number: '" + text + "'");
  }
  return value;
}

struct RawTable {
  std::vector<std::vector<double>> rows;
};

RawTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  RawTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::vector<double> row;
    for (const auto& f : split_fields(line)) row.push_back(parse_number(f, path, line_no));
    if (!table.rows.empty() && row.size() != table.rows.front().size()) {
      throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw Error(ErrorCode::Parse, path.string() + ": no data rows");
  return table;
}

int as_label(double v, const std::filesystem::path& path) {
  if (v != 1.0 && v != 2.0) throw Error(ErrorCode::Parse, path.string() + ": label column must be 1 or 2");
  return static_cast<int>(v);
}

}  // namespace

Dataset read_dataset_csv(const std::filesystem::path& path, bool has_label) {
  const RawTable table = read_table(path);
  const Index cols = static_cast<Index>(table.rows.front().size());
  const Index d = has_label ? cols - 1 : cols;
  if (d < 1) throw Error(ErrorCode::Parse, path.string() + ": no coordinate columns");
  Points pts(static_cast<Index>(table.rows.size()), d);
  std::optional<int> label;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (Index j = 0; j < d; ++j) pts(static_cast<Index>(r), j) = table.rows[r][static_cast<std::size_t>(j)];
    if (has_label) {
      const int l = as_label(table.rows[r].back(), path);
      if (label && *label != l) {
        throw Error(ErrorCode::Parse, path.string() + ": mixed labels; use read_labeled_csv");
      }
      label = l;
    }
  }
  return Dataset(std::move(pts), label);
}

std::pair<Dataset, Dataset> read_labeled_csv(const std::filesystem::path& path) {
  const RawTable table = read_table(path);
  const Index d = static_cast<Index>(table.rows.front().size()) - 1;
  if (d < 1) throw Error(ErrorCode::Parse, path.string() + ": no coordinate columns");
  std::vector<const std::vector<double>*> by_class[2];
  for (const auto& row : table.rows) by_class[as_label(row.back(), path) - 1].push_back(&row);
  auto build = [&](int c) {
    const auto& rows = by_class[c];
    if (rows.empty()) throw Error(ErrorCode::Parse, path.string() + ": class " + std::to_string(c + 1) + " is empty");
    Points pts(static_cast<Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (Index j = 0; j < d; ++j) pts(static_cast<Index>(r), j) = (*rows[r])[static_cast<std::size_t>(j)];
    return Dataset(std::move(pts), c + 1);
  };
  return {build(0), build(1)};
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) {
      if (j) out << ',';
      out << format_double(data.points()(i, j));
    }
    if (data.label()) out << ',' << *data.label();
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace vwkde
