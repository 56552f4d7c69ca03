#pragma once

#include <filesystem>

#include <json.hpp>

#include "gdda/params.hpp"

namespace gdda {

// Checkpoint = <stem>.json manifest (names, shapes, dtype, meta) plus
// <stem>.bin, a flat little-endian float32 blob in manifest order
// (row-major within each parameter).
void save_checkpoint(const std::filesystem::path& stem, const ParameterSet& ps,
                     const nlohmann::json& meta);

ParameterSet load_checkpoint(const std::filesystem::path& stem,
                             nlohmann::json* meta_out = nullptr);

}  // namespace gdda
