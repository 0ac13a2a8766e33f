#pragma once

#include <string>

#include <json.hpp>

#include "rcpm/density.hpp"
#include "rcpm/flow.hpp"

namespace rcpm {

nlohmann::json manifold_to_json(const Manifold& m);
Manifold manifold_from_json(const nlohmann::json& j);
/// Accepts "S2", "S1", "T2" shorthands as well as the JSON descriptor.
Manifold manifold_from_name(const std::string& name);

nlohmann::json potential_to_json(const DiscretePotential& p);
DiscretePotential potential_from_json(const nlohmann::json& j, const Manifold& m);

nlohmann::json block_to_json(const BlockPotential& b);
BlockPotential block_from_json(const nlohmann::json& j, const Manifold& m);

/// {"manifold":..., "blocks":[...], "direction":"forward|backward", "meta":{...}}
nlohmann::json flow_to_json(const Flow& f, const nlohmann::json& meta = nlohmann::json::object());
Flow flow_from_json(const nlohmann::json& j);

/// Builds a density from {"kind": ...}. A bare string is shorthand for {"kind": name}.
/// Known kinds: uniform, sphere_mixture4, wrapped_gaussian_mixture, sphere_checkerboard,
/// torus_3modal, kde, points (with "file" pointing at a CSV of ambient coordinates).
DensityPtr density_from_json(const nlohmann::json& j, const Manifold& m);

/// Reads rows of ambient coordinates; extra columns are ignored, '#' lines and a
/// non-numeric header are skipped. Rows are projected onto the manifold.
std::vector<Point> read_points_csv(const std::string& path, const Manifold& m);

/// Stable text form used for every JSON artifact (2-space indent, trailing newline).
std::string dump_json(const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace rcpm
