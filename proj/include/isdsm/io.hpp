#pragma once

// Byte-stable artifact writers: CSV with round-trip number formatting, JSON
// lines for reports, and the run manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isdsm/errors.hpp"
#include "isdsm/verify.hpp"

namespace isdsm {

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw ConfigError("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  template <class... T>
  void values(const T&... v) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(v), first = false), ...);
    out_ << '\n';
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  static std::string cell(double x) { return format_number(x); }
  static std::string cell(float x) { return format_number(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I i) {
    return std::to_string(i);
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

/// JSON numbers in reports are written through format_number so that two runs
/// produce identical bytes.
inline nlohmann::json report_json(const VerificationReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["anchor"] = r.anchor;
  j["kind"] = to_string(r.kind);
  j["empirical"] = r.empirical;
  j["target"] = r.target;
  if (r.kind == CheckKind::kRange) j["target_hi"] = r.target_hi;
  j["se"] = r.se;
  j["slack"] = r.slack;
  if (r.kind == CheckKind::kRelative) j["tolerance"] = r.tolerance;
  j["replicates"] = r.replicates;
  if (!r.detail.empty()) j["detail"] = r.detail;
  j["verdict"] = r.verdict() ? "pass" : "fail";
  return j;
}

inline VerificationReport report_from_json(const nlohmann::json& j) {
  VerificationReport r;
  r.name = j.at("name").get<std::string>();
  r.anchor = j.at("anchor").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  for (CheckKind k : {CheckKind::kEquality, CheckKind::kUpperBound, CheckKind::kLowerBound, CheckKind::kRange,
                      CheckKind::kRelative, CheckKind::kFlag}) {
    if (kind == to_string(k)) r.kind = k;
  }
  const auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  r.empirical = num("empirical");
  r.target = num("target");
  if (j.contains("target_hi")) r.target_hi = num("target_hi");
  r.se = num("se");
  r.slack = num("slack");
  if (j.contains("tolerance")) r.tolerance = num("tolerance");
  r.replicates = j.at("replicates").get<std::size_t>();
  if (j.contains("detail")) r.detail = j.at("detail").get<std::string>();
  return r;
}

inline void write_reports(const std::filesystem::path& path, const std::vector<VerificationReport>& reports) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& r : reports) out << report_json(r).dump() << '\n';
}

/// FNV-1a over bytes.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Prints reports as an aligned table.
inline void print_summary(std::ostream& os, const std::vector<VerificationReport>& reports) {
  std::size_t width = 4;
  for (const auto& r : reports) width = std::max(width, r.name.size());
  for (const auto& r : reports) {
    os << (r.verdict() ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ')
       << "empirical=" << format_number(r.empirical) << " target=" << format_number(r.target);
    if (r.kind == CheckKind::kRange) os << ".." << format_number(r.target_hi);
    if (r.se > 0.0) os << " se=" << format_number(r.se);
    os << '\n';
  }
}

}  // namespace isdsm
