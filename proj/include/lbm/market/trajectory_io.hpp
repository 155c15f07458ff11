#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/binio.hpp"
#include "lbm/core/error.hpp"
#include "lbm/core/hash.hpp"
#include "lbm/market/types.hpp"

namespace lbm::market {

inline constexpr const char* kTrajFormat = "traj-v1";

// File-level metadata carried in the header of both encodings.
struct DatasetHeader {
  std::uint64_t roster_hash = market::roster_hash();
  int num_steps = 48;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct TrajectoryDataset {
  DatasetHeader header;
  std::vector<Trajectory> trajectories;
};

enum class TrajEncoding { JsonLines, Binary };

inline TrajEncoding encoding_for_path(const std::string& path) {
  auto ends = [&](const char* suf) {
    const std::size_t n = std::strlen(suf);
    return path.size() >= n && path.compare(path.size() - n, n, suf) == 0;
  };
  return ends(".bin") || ends(".traj") ? TrajEncoding::Binary : TrajEncoding::JsonLines;
}

inline nlohmann::json header_json(const DatasetHeader& h, std::size_t count) {
  nlohmann::json roster = nlohmann::json::array();
  for (auto n : kFeatureRoster) roster.push_back(std::string(n));
  return {{"format", kTrajFormat},      {"state_dim", kStateDim},
          {"roster", roster},           {"roster_hash", hex64(h.roster_hash)},
          {"num_steps", h.num_steps},   {"count", count},
          {"config_hash", h.config_hash}, {"seed", h.seed},
          {"extra", h.extra}};
}

inline DatasetHeader parse_header(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kTrajFormat)
    throw MissingArtifact("not a traj-v1 file (format tag '" + j.value("format", std::string{}) + "')");
  if (j.at("state_dim").get<std::size_t>() != kStateDim)
    throw MissingArtifact("trajectory file has a different state dimension");
  DatasetHeader h;
  h.roster_hash = std::stoull(j.at("roster_hash").get<std::string>(), nullptr, 16);
  h.num_steps = j.at("num_steps").get<int>();
  h.config_hash = j.value("config_hash", std::string{});
  h.seed = j.value("seed", std::uint64_t{0});
  h.extra = j.value("extra", nlohmann::json::object());
  return h;
}

inline nlohmann::json trajectory_json(const Trajectory& t) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : t.states) states.push_back(std::vector<float>(s.begin(), s.end()));
  return {{"id", t.meta.id},         {"budget", t.meta.budget}, {"cpa", t.meta.cpa_constraint},
          {"seed", t.meta.seed},     {"policy", t.meta.policy}, {"period", t.meta.period},
          {"states", states},        {"actions", t.actions},    {"rewards", t.rewards},
          {"rtg", t.returns_to_go},  {"costs", t.costs}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.meta.id = j.at("id").get<std::uint64_t>();
  t.meta.budget = j.at("budget").get<double>();
  t.meta.cpa_constraint = j.at("cpa").get<double>();
  t.meta.seed = j.at("seed").get<std::uint64_t>();
  t.meta.policy = j.at("policy").get<std::string>();
  t.meta.period = j.at("period").get<int>();
  for (const auto& row : j.at("states")) {
    auto v = row.get<std::vector<float>>();
    if (v.size() != kStateDim) throw MissingArtifact("state row with wrong dimension");
    std::array<float, kStateDim> s{};
    std::copy(v.begin(), v.end(), s.begin());
    t.states.push_back(s);
  }
  t.actions = j.at("actions").get<std::vector<float>>();
  t.rewards = j.at("rewards").get<std::vector<float>>();
  t.returns_to_go = j.at("rtg").get<std::vector<float>>();
  t.costs = j.at("costs").get<std::vector<float>>();
  t.validate();
  return t;
}

namespace detail {

inline std::string encode_record(const Trajectory& t) {
  std::string r;
  put_le<std::uint64_t>(r, t.meta.id);
  put_le<double>(r, t.meta.budget);
  put_le<double>(r, t.meta.cpa_constraint);
  put_le<std::uint64_t>(r, t.meta.seed);
  put_le<std::int32_t>(r, t.meta.period);
  put_le<std::uint32_t>(r, static_cast<std::uint32_t>(t.meta.policy.size()));
  r += t.meta.policy;
  put_le<std::uint32_t>(r, static_cast<std::uint32_t>(t.length()));
  for (const auto& s : t.states)
    for (float f : s) put_le<float>(r, f);
  for (const auto* v : {&t.actions, &t.rewards, &t.returns_to_go, &t.costs})
    for (float f : *v) put_le<float>(r, f);
  return r;
}

inline Trajectory decode_record(ByteReader& rd) {
  Trajectory t;
  t.meta.id = rd.get<std::uint64_t>();
  t.meta.budget = rd.get<double>();
  t.meta.cpa_constraint = rd.get<double>();
  t.meta.seed = rd.get<std::uint64_t>();
  t.meta.period = rd.get<std::int32_t>();
  t.meta.policy = rd.bytes(rd.get<std::uint32_t>());
  const auto n = rd.get<std::uint32_t>();
  t.states.resize(n);
  for (auto& s : t.states)
    for (float& f : s) f = rd.get<float>();
  for (auto* v : {&t.actions, &t.rewards, &t.returns_to_go, &t.costs}) {
    v->resize(n);
    for (float& f : *v) f = rd.get<float>();
  }
  t.validate();
  return t;
}

}  // namespace detail

inline void write_trajectories(const std::string& path, const TrajectoryDataset& ds,
                               TrajEncoding enc) {
  const auto header = header_json(ds.header, ds.trajectories.size()).dump();
  std::string buf;
  if (enc == TrajEncoding::JsonLines) {
    buf += header + '\n';
    for (const auto& t : ds.trajectories) buf += trajectory_json(t).dump() + '\n';
  } else {
    buf.assign("traj-v1", 8);  // tag plus terminating NUL
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
    buf += header;
    for (const auto& t : ds.trajectories) {
      const auto rec = detail::encode_record(t);
      put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(rec.size()));
      buf += rec;
    }
  }
  write_file(path, buf);
}

inline void write_trajectories(const std::string& path, const TrajectoryDataset& ds) {
  write_trajectories(path, ds, encoding_for_path(path));
}

inline TrajectoryDataset read_trajectories(const std::string& path) {
  const std::string content = read_file(path, "trajectory file");
  TrajectoryDataset ds;
  if (content.size() >= 8 && std::memcmp(content.data(), "traj-v1", 8) == 0) {
    ByteReader rd(content.data() + 8, content.size() - 8, "trajectory file");
    const auto hlen = rd.get<std::uint32_t>();
    ds.header = parse_header(nlohmann::json::parse(rd.bytes(hlen)));
    while (!rd.empty()) {
      const auto len = rd.get<std::uint32_t>();
      const auto rec = rd.bytes(len);
      ByteReader rr(rec.data(), rec.size(), "trajectory record");
      ds.trajectories.push_back(detail::decode_record(rr));
    }
    return ds;
  }
  std::size_t pos = 0;
  bool first = true;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    std::string_view line(content.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (first) {
      ds.header = parse_header(j);
      first = false;
    } else {
      ds.trajectories.push_back(trajectory_from_json(j));
    }
  }
  if (first) throw MissingArtifact("trajectory file '" + path + "' is empty");
  return ds;
}

}  // namespace lbm::market
