#include "cloak/trace_csv.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cloak/error.hpp"
#include "cloak/format.hpp"

namespace cloak {
namespace {

void append_number(std::string& line, double v) { line += format_number(v); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_field(std::string_view text, std::size_t line, const char* what) {
  text = trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(text) + "'");
  }
  return value;
}

struct Header {
  std::size_t counters = 0;
  std::size_t samples = 0;
  std::uint32_t interval_us = 10;
  bool normalized = false;
  int classes = -1;
};

Header parse_header(std::string_view text) {
  if (text.empty() || text.front() != '#') throw ParseError(1, "missing '# counters=... samples=...' header");
  text.remove_prefix(1);
  std::map<std::string, std::string, std::less<>> kv;
  std::istringstream tokens{std::string(text)};
  std::string token;
  while (tokens >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ParseError(1, "header token '" + token + "' is not key=value");
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  Header h;
  for (const auto& [key, value] : kv) {
    if (key == "counters") {
      h.counters = parse_field<std::size_t>(value, 1, "counters");
    } else if (key == "samples") {
      h.samples = parse_field<std::size_t>(value, 1, "samples");
    } else if (key == "interval_us") {
      h.interval_us = parse_field<std::uint32_t>(value, 1, "interval_us");
    } else if (key == "normalized") {
      h.normalized = parse_field<int>(value, 1, "normalized") != 0;
    } else if (key == "classes") {
      h.classes = parse_field<int>(value, 1, "classes");
    } else {
      throw ParseError(1, "unknown header key '" + key + "'");
    }
  }
  if (h.counters == 0 || h.counters > kAllCounters.size()) throw ParseError(1, "counters must be in [1, 5]");
  if (h.samples == 0) throw ParseError(1, "samples must be positive");
  return h;
}

}  // namespace

void write_trace_csv(std::ostream& out, const Dataset& dataset) {
  if (dataset.traces.empty()) throw Error("no traces");
  const Trace& first = dataset.traces.front().trace;
  out << "# counters=" << first.n_counters() << " samples=" << first.n_samples()
      << " interval_us=" << first.interval_us() << " normalized=" << (first.normalized() ? 1 : 0)
      << " classes=" << dataset.n_classes << '\n';
  std::string line;
  for (const auto& lt : dataset.traces) {
    if (!lt.trace.same_shape(first) || lt.trace.normalized() != first.normalized()) {
      throw ShapeError("all traces in a CSV must share geometry and normalization");
    }
    line = std::to_string(lt.label);
    for (double v : lt.trace.flat()) {
      line += ',';
      append_number(line, v);
    }
    line += '\n';
    out << line;
  }
}

void write_trace_csv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_trace_csv(out, dataset);
  if (!out) throw Error("write failed: " + path.string());
}

Dataset read_trace_csv(std::istream& in) {
  std::string text;
  if (!std::getline(in, text)) throw Error("no traces");
  const Header h = parse_header(trim(text));
  const auto counters = default_counters(h.counters);
  const std::size_t width = h.counters * h.samples;

  Dataset ds;
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, text)) {
    ++line_no;
    const std::string_view line = trim(text);
    if (line.empty()) continue;
    std::vector<double> values;
    values.reserve(width);
    int label = 0;
    std::size_t field = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto comma = line.find(',', pos);
      if (comma == std::string_view::npos) comma = line.size();
      const auto cell = line.substr(pos, comma - pos);
      if (field == 0) {
        label = parse_field<int>(cell, line_no, "label");
        if (label < -1) throw ParseError(line_no, "label must be >= -1");
      } else {
        if (values.size() == width) {
          throw ParseError(line_no, "expected " + std::to_string(width + 1) + " fields, found more");
        }
        values.push_back(parse_field<double>(cell, line_no, "value"));
      }
      ++field;
      pos = comma + 1;
    }
    if (values.size() != width) {
      throw ParseError(line_no, "expected " + std::to_string(width + 1) + " fields, found " + std::to_string(field));
    }
    try {
      ds.traces.push_back({Trace(counters, h.samples, std::move(values), h.normalized, h.interval_us), label});
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
    max_label = std::max(max_label, label);
  }
  if (ds.traces.empty()) throw Error("no traces");
  ds.n_classes = h.classes >= 0 ? h.classes : max_label + 1;
  if (max_label >= ds.n_classes) throw Error("label exceeds declared class count");
  ds.splits.assign(ds.traces.size(), Split::Train);
  if (h.normalized) ds.norm_stats = NormStats::identity(h.counters);
  return ds;
}

Dataset read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_trace_csv(in);
}

}  // namespace cloak
