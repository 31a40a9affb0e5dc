#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cloak/error.hpp"
#include "cloak/exp.hpp"
#include "cloak/format.hpp"

namespace cloak::exp {
namespace {

std::string cell_text(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&c)) {
    if (s->find_first_of(",\"\n") != std::string::npos) throw Error("table cell needs quoting: " + *s);
    return *s;
  }
  return "NA";
}

Cell parse_cell(const std::string& text) {
  if (text == "NA") return std::monostate{};
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec == std::errc{} && end == text.data() + text.size() && !text.empty()) return v;
  return text;
}

}  // namespace

Cell num(double v) {
  if (std::isnan(v)) return std::monostate{};
  return v;
}

void Table::write_csv(std::ostream& out) const {
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != columns.size()) throw Error("table " + name + " has a ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << cell_text(row[i]);
    out << '\n';
  }
}

nlohmann::json Table::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r = nlohmann::json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto& c = row[i];
      if (const auto* d = std::get_if<double>(&c)) {
        r[columns[i]] = *d;
      } else if (const auto* s = std::get_if<std::string>(&c)) {
        r[columns[i]] = *s;
      } else {
        r[columns[i]] = "NA";
      }
    }
    rows_json.push_back(std::move(r));
  }
  return {{"table", name}, {"columns", columns}, {"rows", std::move(rows_json)}};
}

Table Table::read_csv(std::istream& in, std::string name) {
  Table t;
  t.name = std::move(name);
  std::string line;
  std::size_t line_no = 0;
  auto cells = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream s(l);
    std::string item;
    while (std::getline(s, item, ',')) out.push_back(item);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (t.columns.empty()) {
      t.columns = cells(line);
      continue;
    }
    const auto items = cells(line);
    if (items.size() != t.columns.size()) throw ParseError(line_no, "expected " + std::to_string(t.columns.size()) + " cells");
    std::vector<Cell> row;
    for (const auto& item : items) row.push_back(parse_cell(item));
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw ParseError(line_no, "missing header");
  return t;
}

std::vector<std::filesystem::path> emit_report(const std::vector<Table>& tables, const std::filesystem::path& dir,
                                               Format format) {
  if (tables.empty()) throw Error("nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::vector<std::filesystem::path> written;
  for (const auto& t : tables) {
    const auto path = dir / (t.name + (format == Format::Csv ? ".csv" : ".json"));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    if (format == Format::Csv) {
      t.write_csv(out);
    } else {
      out << t.to_json().dump(2) << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
    written.push_back(path);
  }
  return written;
}

Dataset prepare_dataset(Dataset ds, std::uint64_t seed) {
  if (ds.traces.empty()) throw Error("dataset is empty");
  if (ds.n_classes < 2) throw Error("need at least two labeled classes");
  for (const auto& lt : ds.traces) {
    if (lt.label < 0) throw Error("dataset contains unlabeled traces");
  }
  ds = split_dataset(ds, {}, seed);
  if (!ds.traces.front().trace.normalized()) return normalize_dataset(ds).first;
  if (!ds.norm_stats) ds.norm_stats = NormStats::identity(ds.traces.front().trace.n_counters());
  return ds;
}

}  // namespace cloak::exp
