#pragma once

#include "drcfs/common.hpp"
#include "drcfs/dgp.hpp"
#include "drcfs/drcfs.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace drcfs::io {

// Shortest string that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// One RFC-4180 record. Returns false at end of input. Quoted fields may hold
// commas, doubled quotes and line breaks; CRLF and LF both end a record.
inline bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string cur;
  bool quoted = false, was_quoted = false;
  const std::size_t start = line;
  for (;;) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw IngestError("line " + std::to_string(start) + ": unterminated quoted field");
      fields.push_back(cur);
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          cur += '"';
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        cur += ch;
      }
      continue;
    }
    if (ch == '"' && cur.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
      was_quoted = false;
    } else if (ch == '\r' && in.peek() == '\n') {
      // CR of a CRLF pair; the LF ends the record
    } else if (ch == '\n') {
      ++line;
      fields.push_back(cur);
      return true;
    } else {
      cur += ch;
    }
  }
}

inline std::optional<double> parse_number(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return std::nullopt;
  s = s.substr(b, s.find_last_not_of(" \t") - b + 1);
  if (!s.empty() && s[0] == '+') s.erase(0, 1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

enum class OnMissing { Error, Drop };

inline OnMissing parse_on_missing(const std::string& s) {
  if (s == "error") return OnMissing::Error;
  if (s == "drop") return OnMissing::Drop;
  throw ConfigError("on-missing: expected 'error' or 'drop', got '" + s + "'");
}

struct IngestOptions {
  std::string outcome;  // column name, or a 0-based index when no name matches
  bool header = true;
  OnMissing on_missing = OnMissing::Error;
};

struct IngestResult {
  Dataset data;
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;
};

inline IngestResult ingest_csv(std::istream& in, const IngestOptions& opt) {
  std::vector<std::string> rec, header;
  std::size_t line = 1;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  if (opt.header) {
    if (!read_record(in, header, line)) throw IngestError("empty input: no header row");
  }
  for (;;) {
    const std::size_t at = line;
    if (!read_record(in, rec, line)) break;
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    rows.push_back(rec);
    row_lines.push_back(at);
  }
  const std::size_t width = opt.header ? header.size() : (rows.empty() ? 0 : rows.front().size());
  if (width < 2) throw IngestError("need at least two columns (features and outcome), found " + std::to_string(width));
  if (!opt.header) {
    for (std::size_t c = 0; c < width; ++c) header.push_back("V" + std::to_string(c + 1));
  }

  std::optional<std::size_t> target;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == opt.outcome) target = c;
  if (!target) {
    auto idx = parse_number(opt.outcome);
    if (idx && *idx >= 0 && *idx == std::floor(*idx) && *idx < static_cast<double>(width)) {
      target = static_cast<std::size_t>(*idx);
    }
  }
  if (!target) {
    std::string names;
    for (const auto& h : header) names += (names.empty() ? "" : ", ") + h;
    throw IngestError("outcome column '" + opt.outcome + "' not found; available columns: " + names);
  }

  IngestResult out;
  std::vector<std::vector<double>> good;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw IngestError("line " + std::to_string(row_lines[r]) + ": expected " + std::to_string(width) +
                        " fields, found " + std::to_string(rows[r].size()));
    }
    std::vector<double> vals(width);
    std::optional<std::size_t> bad;
    for (std::size_t c = 0; c < width && !bad; ++c) {
      auto v = parse_number(rows[r][c]);
      if (v) vals[c] = *v;
      else bad = c;
    }
    if (bad) {
      if (opt.on_missing == OnMissing::Error) {
        throw IngestError("line " + std::to_string(row_lines[r]) + ", column '" + header[*bad] +
                          "': missing or non-numeric value '" + rows[r][*bad] + "'");
      }
      ++out.dropped_rows;
      continue;
    }
    good.push_back(std::move(vals));
  }
  if (out.dropped_rows > 0) {
    out.warnings.push_back("dropped " + std::to_string(out.dropped_rows) + " row(s) with missing or non-numeric values");
  }
  if (good.empty()) throw IngestError("no usable rows");

  const auto n = static_cast<Index>(good.size());
  out.data.features.resize(n, static_cast<Index>(width - 1));
  out.data.outcome.resize(n);
  for (std::size_t c = 0; c < width; ++c)
    if (c != *target) out.data.names.push_back(header[c]);
  for (Index i = 0; i < n; ++i) {
    Index col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == *target) out.data.outcome(i) = good[static_cast<std::size_t>(i)][c];
      else out.data.features(i, col++) = good[static_cast<std::size_t>(i)][c];
    }
  }
  return out;
}

inline IngestResult ingest_csv(const std::string& path, const IngestOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open '" + path + "'");
  return ingest_csv(in, opt);
}

inline std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// Features then outcome, header row first.
inline void write_csv(std::ostream& out, const Matrix& x, const Vector& y, const std::vector<std::string>& names,
                      const std::string& outcome_name = "Y") {
  for (const auto& nm : names) out << quote_field(nm) << ',';
  out << quote_field(outcome_name) << '\n';
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) out << format_double(x(i, j)) << ',';
    out << format_double(y(i)) << '\n';
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigError("failed writing '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

}  // namespace drcfs::io
