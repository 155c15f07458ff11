#pragma once

// SFT export: JSON lines. The first line is a header
// {"format": "gqpo-sft-v1", "count", "beta", "recommended_finetune", ...};
// each further line is one record.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/binio.hpp"
#include "lbm/think/direction.hpp"

namespace lbm::gqpo {

inline constexpr const char* kSftFormat = "gqpo-sft-v1";

struct GqpoRecord {
  std::string prompt;
  std::string response;  // chosen CoT
  double delta_q = 0.0;
  double weight = 1.0;  // exp(beta * delta_q)
  std::uint64_t traj_id = 0;
  int t = 0;
  think::Direction direction = think::Direction::None;
  double cot_action = 0.0;
  double dataset_action = 0.0;
  std::vector<double> group_delta_q;  // after duplicate collapse, in group order
  int rejected = 0;                   // group members not exported

  bool operator==(const GqpoRecord&) const = default;
};

struct FinetuneSettings {
  int batch_size = 64;
  double learning_rate = 1e-6;
  int epochs = 5;
};

struct SftFile {
  nlohmann::json header = nlohmann::json::object();
  std::vector<GqpoRecord> records;
};

inline nlohmann::json record_to_json(const GqpoRecord& r) {
  return {{"prompt", r.prompt},
          {"response", r.response},
          {"weight", r.weight},
          {"delta_q", r.delta_q},
          {"meta",
           {{"traj_id", r.traj_id},
            {"t", r.t},
            {"direction", think::to_string(r.direction)},
            {"cot_action", r.cot_action},
            {"dataset_action", r.dataset_action},
            {"group_delta_q", r.group_delta_q},
            {"rejected", r.rejected}}}};
}

inline GqpoRecord record_from_json(const nlohmann::json& j) {
  GqpoRecord r;
  r.prompt = j.at("prompt");
  r.response = j.at("response");
  r.weight = j.at("weight");
  r.delta_q = j.at("delta_q");
  const auto& m = j.at("meta");
  r.traj_id = m.at("traj_id");
  r.t = m.at("t");
  const auto d = think::direction_from_string(m.at("direction").get<std::string>());
  if (!d) throw MissingArtifact("SFT record has an unknown direction");
  r.direction = *d;
  r.cot_action = m.at("cot_action");
  r.dataset_action = m.at("dataset_action");
  r.group_delta_q = m.at("group_delta_q").get<std::vector<double>>();
  r.rejected = m.at("rejected");
  return r;
}

// Refuses empty exports and records that violate delta_q > 0.
inline std::string encode_sft(const std::vector<GqpoRecord>& records, double beta, nlohmann::json extra = {},
                              const FinetuneSettings& ft = {}) {
  if (records.empty()) throw InvalidArgument("SFT export needs at least one record");
  for (const auto& r : records)
    if (!(r.delta_q > 0.0) || !std::isfinite(r.delta_q))
      throw InvalidArgument("SFT export refuses record (" + std::to_string(r.traj_id) + ", " + std::to_string(r.t) +
                            ") with non-positive delta_q");
  nlohmann::json h = extra.is_object() ? std::move(extra) : nlohmann::json::object();
  h["format"] = kSftFormat;
  h["count"] = records.size();
  h["beta"] = beta;
  h["recommended_finetune"] = {
      {"batch_size", ft.batch_size}, {"learning_rate", ft.learning_rate}, {"epochs", ft.epochs}};
  std::string out = h.dump() + '\n';
  for (const auto& r : records) out += record_to_json(r).dump() + '\n';
  return out;
}

inline void export_sft(const std::string& path, const std::vector<GqpoRecord>& records, double beta,
                       nlohmann::json extra = {}, const FinetuneSettings& ft = {}) {
  write_file(path, encode_sft(records, beta, std::move(extra), ft));
}

inline SftFile read_sft(const std::string& path) {
  const std::string content = read_file(path, "SFT export");
  SftFile f;
  std::size_t pos = 0;
  bool first = true;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MissingArtifact("SFT export '" + path + "' has a malformed line: " + e.what());
    }
    if (first) {
      if (j.value("format", std::string{}) != kSftFormat)
        throw MissingArtifact("SFT export '" + path + "' is not " + kSftFormat);
      f.header = std::move(j);
      first = false;
      continue;
    }
    f.records.push_back(record_from_json(j));
  }
  if (first) throw MissingArtifact("SFT export '" + path + "' is empty");
  return f;
}

}  // namespace lbm::gqpo
