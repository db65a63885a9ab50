#pragma once

// Weighted sample files: delimited text (comma, tab, semicolon or blanks; one
// sample per row; optional header; optional trailing weight column) and a
// compact little-endian binary container.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "maf.hpp"
#include "numerics.hpp"
#include "samples.hpp"

namespace pwflow {

enum class SampleFormat { automatic, text, binary };

struct SampleReadOptions {
  SampleFormat format = SampleFormat::automatic;
  /// Whether the last column holds weights. Unset: true only when a header
  /// names the last column "w" or "weight".
  std::optional<bool> weight_column;
};

namespace detail {

inline constexpr std::string_view kSampleMagic = "PWFSMP\n";
inline constexpr std::uint32_t kSampleVersion = 1;

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline char detect_delimiter(std::string_view line) {
  for (char c : {',', '\t', ';'}) {
    if (line.find(c) != std::string_view::npos) return c;
  }
  return ' ';
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view field) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) return std::nullopt;
  return v;
}

inline bool is_weight_name(std::string_view name) {
  std::string lower(trim(name));
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return lower == "w" || lower == "weight" || lower == "weights";
}

}  // namespace detail

/// Parses delimited text. Errors carry the 1-based line number.
inline WeightedSampleSet parse_sample_text(std::string_view text, const SampleReadOptions& opts = {}) {
  std::vector<double> values;
  std::vector<double> weights;
  std::size_t columns = 0;
  std::size_t rows = 0;
  char delim = 0;
  bool first_content = true;
  bool weighted = opts.weight_column.value_or(false);
  std::size_t line_no = 0;

  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view raw = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (delim == 0) delim = detail::detect_delimiter(line);
    const auto fields = detail::split_fields(line, delim);

    std::vector<double> parsed;
    parsed.reserve(fields.size());
    std::size_t bad = fields.size();
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto v = detail::parse_double(fields[i]);
      if (!v) {
        bad = i;
        break;
      }
      parsed.push_back(*v);
    }

    if (first_content) {
      first_content = false;
      columns = fields.size();
      if (bad != fields.size()) {
        // header row
        if (!opts.weight_column) weighted = detail::is_weight_name(fields.back());
        continue;
      }
    }
    if (fields.size() != columns) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                        " fields, found " + std::to_string(fields.size()));
    }
    if (bad != fields.size()) {
      throw FormatError("line " + std::to_string(line_no) + ": field " + std::to_string(bad + 1) +
                        " is not numeric: '" + std::string(fields[bad]) + "'");
    }
    const std::size_t d = weighted ? columns - 1 : columns;
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(parsed[i])) {
        throw FormatError("line " + std::to_string(line_no) + ": field " + std::to_string(i + 1) + " is not finite");
      }
      values.push_back(parsed[i]);
    }
    if (weighted) {
      const double w = parsed.back();
      if (!std::isfinite(w) || w < 0.0) {
        throw FormatError("line " + std::to_string(line_no) + ": negative or non-finite weight " +
                          std::string(fields.back()));
      }
      weights.push_back(w);
    }
    ++rows;
  }

  if (rows == 0) throw FormatError("sample file contains no data rows");
  const std::size_t d = weighted ? columns - 1 : columns;
  if (d == 0) throw FormatError("sample file has no coordinate columns");
  Matrix points = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  if (!weighted) return WeightedSampleSet(std::move(points));
  Vector w = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(rows));
  return {std::move(points), std::move(w)};
}

inline std::string format_sample_text(const WeightedSampleSet& s, bool with_weights = true) {
  std::string out;
  for (std::size_t j = 0; j < s.dim(); ++j) out += (j ? ",x" : "x") + std::to_string(j);
  if (with_weights) out += ",weight";
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto row = s.point(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", row[j]);
      if (j) out += ',';
      out += buf;
    }
    if (with_weights) {
      std::snprintf(buf, sizeof buf, "%.17g", s.weights(static_cast<Eigen::Index>(i)));
      out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline std::string sample_to_bytes(const WeightedSampleSet& s) {
  binary::Writer w;
  w.bytes(detail::kSampleMagic);
  w.u32(detail::kSampleVersion);
  w.u64(s.size());
  w.u32(static_cast<std::uint32_t>(s.dim()));
  w.matrix(s.points);
  w.matrix(s.weights.transpose());
  return w.take();
}

inline WeightedSampleSet sample_from_bytes(std::string_view bytes) {
  binary::Reader r(bytes);
  r.expect(detail::kSampleMagic, "sample file");
  const auto version = r.u32("sample version");
  if (version != detail::kSampleVersion) {
    throw FormatError("sample file: unsupported format version " + std::to_string(version));
  }
  const auto n = r.u64("sample count");
  const auto d = r.u32("sample dimension");
  if (d == 0 || n > (std::uint64_t{1} << 40)) throw FormatError("sample file: implausible header");
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix points = r.matrix(rows, static_cast<Eigen::Index>(d), "sample points");
  Matrix weights = r.matrix(1, rows, "sample weights");
  if (!r.at_end()) throw FormatError("sample file: trailing bytes");
  WeightedSampleSet s(std::move(points), weights.row(0).transpose());
  try {
    s.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("sample file: ") + e.what());
  }
  return s;
}

inline bool is_binary_sample_data(std::string_view bytes) { return bytes.starts_with(detail::kSampleMagic); }

inline WeightedSampleSet load_samples(const std::filesystem::path& path, const SampleReadOptions& opts = {}) {
  const std::string bytes = MafModel::read_file(path);
  try {
    const bool binary = opts.format == SampleFormat::binary ||
                        (opts.format == SampleFormat::automatic && is_binary_sample_data(bytes));
    return binary ? sample_from_bytes(bytes) : parse_sample_text(bytes, opts);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_samples(const std::filesystem::path& path, const WeightedSampleSet& s,
                         SampleFormat format = SampleFormat::text) {
  MafModel::write_file(path, format == SampleFormat::binary ? sample_to_bytes(s) : format_sample_text(s));
}

}  // namespace pwflow
