#pragma once

// CoT side-file: JSON lines keyed by (trajectory id, t). The first line is a
// header {"format": "cot-v1", ...}.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/binio.hpp"
#include "lbm/think/direction.hpp"

namespace lbm::think {

inline constexpr const char* kCotFormat = "cot-v1";

struct CotEntry {
  std::uint64_t traj_id = 0;
  int t = 0;
  std::string text;
  Direction direction = Direction::None;
  std::optional<double> claimed_cpa_ratio;
};

struct CotFile {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::pair<std::uint64_t, int>, CotEntry> entries;

  const CotEntry* find(std::uint64_t id, int t) const {
    auto it = entries.find({id, t});
    return it == entries.end() ? nullptr : &it->second;
  }
  void add(CotEntry e) {
    auto key = std::make_pair(e.traj_id, e.t);
    entries[key] = std::move(e);
  }
};

inline void write_cot_file(const std::string& path, const CotFile& f) {
  nlohmann::json h = f.header;
  h["format"] = kCotFormat;
  h["count"] = f.entries.size();
  std::string buf = h.dump() + '\n';
  for (const auto& [key, e] : f.entries) {
    nlohmann::json j = {{"traj_id", e.traj_id}, {"t", e.t}, {"text", e.text}, {"direction", to_string(e.direction)}};
    j["claimed_cpa_ratio"] = e.claimed_cpa_ratio ? nlohmann::json(*e.claimed_cpa_ratio) : nlohmann::json(nullptr);
    buf += j.dump() + '\n';
  }
  write_file(path, buf);
}

inline CotFile read_cot_file(const std::string& path) {
  const std::string content = read_file(path, "CoT side-file");
  CotFile f;
  std::size_t pos = 0;
  bool first = true;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (first) {
      if (j.value("format", std::string{}) != kCotFormat)
        throw MissingArtifact("'" + path + "' is not a cot-v1 side-file");
      f.header = j;
      first = false;
      continue;
    }
    CotEntry e;
    e.traj_id = j.at("traj_id").get<std::uint64_t>();
    e.t = j.at("t").get<int>();
    e.text = j.at("text").get<std::string>();
    e.direction = direction_from_string(j.at("direction").get<std::string>()).value_or(Direction::None);
    if (!j.at("claimed_cpa_ratio").is_null()) e.claimed_cpa_ratio = j.at("claimed_cpa_ratio").get<double>();
    f.add(std::move(e));
  }
  if (first) throw MissingArtifact("CoT side-file '" + path + "' is empty");
  return f;
}

}  // namespace lbm::think
