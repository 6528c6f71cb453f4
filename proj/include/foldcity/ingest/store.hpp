#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "foldcity/ingest/building.hpp"

namespace foldcity::ingest {

/// Ingested buildings: "BMSH", u32 version = 1, u32 count, then per building
/// u32 vertex count, u32 triangle count, float64 xyz rows and u32 index
/// triples, all little-endian. Ids and attributes live in `<path>.json`.
void write_building_store(const std::filesystem::path& path, std::span<const BuildingRecord> buildings);
std::vector<BuildingRecord> read_building_store(const std::filesystem::path& path);

std::filesystem::path attributes_sidecar(const std::filesystem::path& path);

}  // namespace foldcity::ingest
