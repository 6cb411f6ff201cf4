#pragma once

// Shared plumbing: error types, logging, small numeric/string helpers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zonalopf {

// Malformed or inconsistent input data (files, config, cross references).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command-line usage; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A solve that did not reach a usable point where one was required.
class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Bounds with magnitude >= kUnbounded are treated as absent.
inline constexpr double kUnbounded = 1e19;

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline LogLevel log_level_from_env() {
  const char* raw = std::getenv("ZONAL_OPF_LOG");
  if (!raw) return LogLevel::kWarn;
  std::string v(raw);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "error") return LogLevel::kError;
  if (v == "warn" || v == "warning") return LogLevel::kWarn;
  if (v == "info") return LogLevel::kInfo;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

inline LogLevel& log_level() {
  static LogLevel level = log_level_from_env();
  return level;
}

inline void set_log_level(LogLevel level) { log_level() = level; }

inline bool log_level_enabled(LogLevel level) { return level <= log_level(); }

inline void log_msg(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[zonal-opf] %s: %s\n", names[static_cast<int>(level)],
               msg.c_str());
}

inline void log_error(const std::string& m) { log_msg(LogLevel::kError, m); }
inline void log_warn(const std::string& m) { log_msg(LogLevel::kWarn, m); }
inline void log_info(const std::string& m) { log_msg(LogLevel::kInfo, m); }
inline void log_debug(const std::string& m) { log_msg(LogLevel::kDebug, m); }

inline std::string strprintf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

// Render with 6 significant digits (result-file number format).
inline std::string format_sig6(double v) {
  if (std::isnan(v)) return "nan";
  return strprintf("%.6g", v);
}

inline bool nearly_equal(double a, double b, double tol) {
  return std::fabs(a - b) <= tol;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    size_t i = 0;
    while (i < f.size() && f[i] == ' ') ++i;
    f.erase(0, i);
  }
  return out;
}

inline double parse_double_field(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

inline long parse_int_field(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not an integer: '" + s + "'");
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write via temp file + rename so readers never observe a torn file.
inline void write_text_file_atomic(const std::filesystem::path& path,
                                   const std::string& content) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("short write: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() +
                          ": " + ec.message());
}

class Stopwatch {
 public:
  Stopwatch() : start_(clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

}  // namespace zonalopf
