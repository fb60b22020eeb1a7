#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dhedge::csv {

// Shortest representation that round-trips; independent of the C locale.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("CSV numeric fields must be finite");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_number(std::int64_t v) { return std::to_string(v); }
inline std::string format_number(std::size_t v) { return std::to_string(v); }

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// RFC 4180 writer: CRLF record separator, quoting only where needed.
class Writer {
 public:
  Writer(std::ostream& out, const std::vector<std::string>& header) : out_(out), columns_(header.size()) {
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw std::invalid_argument("CSV row has the wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << "\r\n";
    if (!out_) throw std::runtime_error("CSV write failed");
  }

 private:
  std::ostream& out_;
  std::size_t columns_;
};

// Parses a whole RFC 4180 document (CRLF or LF separators).
inline std::vector<std::vector<std::string>> parse(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char c;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(row));
    row.clear();
    any = false;
  };
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      end_row();
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("CSV ends inside a quoted field");
  if (any) end_row();
  return rows;
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

}  // namespace dhedge::csv
