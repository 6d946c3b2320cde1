#pragma once

#include <string>

#include "umesh/digest.hpp"
#include "umesh/fem.hpp"
#include "umesh/grid.hpp"
#include "umesh/material.hpp"
#include "umesh/mesh.hpp"

namespace umesh {

/// A fully resolved simulation setup. The digest identifies the canonical
/// config (mask inlined, defaults filled) so datasets can refuse samples
/// generated under a different setup.
struct Scenario {
    std::string name;
    RegularGrid grid;
    HexMesh mesh;
    MaterialParams material;
    int pad_steps = 3;
    PaddedShape pad;
    NewtonOptions solver;
    Sha256 digest{};
    std::string canonical_json;
};

/// Loads a scenario JSON file. A relative mask_path is resolved against the
/// file's directory.
Scenario load_scenario(const std::string& path);

/// Builds a scenario from JSON text (mask_path resolved against base_dir).
Scenario parse_scenario(const std::string& json_text, const std::string& base_dir);

}  // namespace umesh
