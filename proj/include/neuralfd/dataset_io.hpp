#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/traffic_sim.hpp"
#include "neuralfd/training.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Scenario configuration. Unknown keys are rejected so typos do not pass silently.
json scenario_to_json(const sim::ScenarioConfig& cfg);
sim::ScenarioConfig scenario_from_json(const json& j);
sim::ScenarioConfig load_scenario(const fs::path& path);

// trajectories.csv: vehicle_id,t,x,v (one row per sample, rows grouped by vehicle)
std::string trajectories_csv(const std::vector<Trajectory>& trajs);
std::vector<Trajectory> parse_trajectories_csv(const std::string& text);

// detectors.jsonl: one {"position": x, "crossings": [...]} object per line
std::string detectors_jsonl(const std::vector<DetectorLog>& logs);
std::vector<DetectorLog> parse_detectors_jsonl(const std::string& text);

// density.bin (float64 little-endian, record-major) + density.json header
std::string density_binary(const sim::DensityField& field);
json density_header(const sim::DensityField& field);
sim::DensityField parse_density(const json& header, const std::string& binary);

/**
 * Model checkpoint. Neural payloads are stored as
 * {variant, layer_sizes, weights, u0_raw, rho_j_ref, x_ref}; Greenshields as
 * {variant, u0, rho_j, rho_scale}. Doubles round-trip bit-exactly.
 */
json checkpoint_to_json(const fd::FdModel& model);
fd::FdModel checkpoint_from_json(const json& j);

json fit_report_to_json(const training::FitReport& report);

std::string read_file(const fs::path& path);
/// Write via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const fs::path& path, const std::string& content);

std::string sha256_hex(const std::string& data);

}  // namespace neuralfd::io
