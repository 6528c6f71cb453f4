#pragma once

#include <string>
#include <string_view>

#include "foldcity/mesh/types.hpp"

namespace foldcity::ingest {

/// `v` lines with round-trip precision, then 1-based `f` lines.
std::string export_obj(const TriangleMesh& mesh);

/// Reads `v` and `f` records; polygon faces are fan-triangulated, `v/vt/vn`
/// references and negative indices are accepted. Throws DataError with the
/// line number on malformed or out-of-range faces.
TriangleMesh import_obj(std::string_view text);

}  // namespace foldcity::ingest
