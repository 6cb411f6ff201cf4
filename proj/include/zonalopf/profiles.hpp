#pragma once

// Timeseries inputs: one value per (profile_id, timestep), in MW.

#include <map>
#include <string>
#include <utility>

#include "zonalopf/common.hpp"

namespace zonalopf {

inline constexpr const char* kProfileCsvHeader = "profile_id,timestep,value_mw";

struct ProfileTable {
  std::map<std::pair<std::string, int>, double> values;

  bool has(const std::string& id, int t) const {
    return values.count({id, t}) > 0;
  }
  double at(const std::string& id, int t) const {
    auto it = values.find({id, t});
    if (it == values.end())
      throw DataError(strprintf("no profile value for '%s' at timestep %d",
                                id.c_str(), t));
    return it->second;
  }
  void set(const std::string& id, int t, double mw) { values[{id, t}] = mw; }
};

inline ProfileTable load_profiles(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw DataError(path.string() + ": empty profile file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kProfileCsvHeader)
    throw DataError(path.string() + ":1: bad header, expected '" +
                    std::string(kProfileCsvHeader) + "'");
  ProfileTable table;
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) throw DataError(where + ": expected 3 fields");
    int t = static_cast<int>(parse_int_field(f[1], where));
    double v = parse_double_field(f[2], where);
    if (v < 0.0) throw DataError(where + ": negative value_mw");
    auto key = std::make_pair(f[0], t);
    if (table.values.count(key))
      throw DataError(where + ": duplicate entry for profile '" + f[0] +
                      "' at timestep " + std::to_string(t));
    table.values[key] = v;
  }
  return table;
}

inline void save_profiles(const ProfileTable& table,
                          const std::filesystem::path& path) {
  std::string out = std::string(kProfileCsvHeader) + "\n";
  for (const auto& [key, v] : table.values)
    out += strprintf("%s,%d,%.10g\n", key.first.c_str(), key.second, v);
  write_text_file_atomic(path, out);
}

}  // namespace zonalopf
