#pragma once
// Helpers shared by the pipeline sources.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "signet/pipeline.hpp"

namespace signet::pipeline::detail {

void write_text(const std::filesystem::path& file, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& file);
std::string utc_now();

models::DataDims expected_dims(const ExperimentConfig& cfg, const prep::StreamDataset& raw,
                               models::Family family);
void check_against_data(const ExperimentConfig& cfg, const prep::StreamDataset& raw);

}  // namespace signet::pipeline::detail
