#include "egl/harness.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace egl::harness {

namespace {

[[noreturn]] void data_error(const std::string& what) { fail(ErrorCode::DataInvalid, what); }

std::vector<std::string> split_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool parse_number(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

bool parse_id(const std::string& s, Id& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && out >= 0;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) data_error("cannot open '" + path + "'");
  return in;
}

}  // namespace

Data read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) data_error("dataset CSV: missing header");
  const auto header = split_line(line);
  if (header.size() < 3 || header.front() != "id" || header.back() != "y") {
    data_error("dataset CSV: header must be id,f0,...,f{d-1},y");
  }
  const Index d = static_cast<Index>(header.size()) - 2;
  for (Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j + 1)] != "f" + std::to_string(j)) {
      data_error("dataset CSV: expected column f" + std::to_string(j));
    }
  }
  std::vector<std::vector<double>> rows;
  std::vector<Id> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_line(line);
    if (fields.size() != header.size()) data_error("dataset CSV line " + std::to_string(line_no) + ": wrong arity");
    Id id = 0;
    if (!parse_id(fields[0], id)) data_error("dataset CSV line " + std::to_string(line_no) + ": bad id");
    std::vector<double> values(fields.size() - 1);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      if (!parse_number(fields[k], values[k - 1])) {
        data_error("dataset CSV line " + std::to_string(line_no) + ": bad number '" + fields[k] + "'");
      }
    }
    ids.push_back(id);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) data_error("dataset CSV: no rows");
  Matrix<double> x(static_cast<Index>(rows.size()), d);
  VectorXd y(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Index j = 0; j < d; ++j) x(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    y(static_cast<Index>(i)) = rows[i].back();
  }
  return Data(std::move(x), std::move(y), std::move(ids));
}

Data read_dataset_csv(const std::string& path) {
  auto in = open_input(path);
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Data& data) {
  out << "id";
  for (Index j = 0; j < data.dim(); ++j) out << ",f" << j;
  out << ",y\n";
  for (Index i = 0; i < data.size(); ++i) {
    out << data.id(i);
    for (Index j = 0; j < data.dim(); ++j) out << ',' << format_double(data.features()(i, j));
    out << ',' << format_double(data.y(i)) << '\n';
  }
}

std::vector<Id> read_ids_csv(const std::string& path) {
  auto in = open_input(path);
  std::vector<Id> ids;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto field = split_line(line).front();
    Id id = 0;
    if (!parse_id(field, id)) {
      if (first && field == "id") {
        first = false;
        continue;
      }
      data_error("ids CSV: bad id '" + field + "'");
    }
    first = false;
    ids.push_back(id);
  }
  return ids;
}

std::vector<double> read_values_csv(const std::string& path) {
  auto in = open_input(path);
  std::vector<double> values;
  std::string line;
  std::size_t column = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (first) {
      first = false;
      double probe = 0;
      if (!parse_number(fields.front(), probe)) {
        // Header: use the rmse/value column when present, otherwise the last one.
        column = fields.size() - 1;
        for (std::size_t k = 0; k < fields.size(); ++k)
          if (fields[k] == "rmse" || fields[k] == "value") column = k;
        continue;
      }
    }
    double v = 0;
    if (column >= fields.size() || !parse_number(fields[column], v)) data_error("values CSV: bad row '" + line + "'");
    values.push_back(v);
  }
  return values;
}

}  // namespace egl::harness
