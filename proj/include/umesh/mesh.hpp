#pragma once

#include <array>
#include <string>
#include <vector>

#include "umesh/grid.hpp"

namespace umesh {

/// How a boundary node set is selected on the grid.
///  - Plane: all active nodes on an axis-aligned node plane ("x=0", "y=max", ...).
///  - Nodes: explicit list of (i,j,k) grid coordinates.
///  - Surface: every active node touching at least one missing/inactive cell,
///    minus the Dirichlet set (only meaningful for the Neumann side).
struct BoundarySpec {
    enum class Kind { None, Plane, Nodes, Surface };
    Kind kind = Kind::None;
    int axis = 0;
    int index = 0;  // -1 selects the max plane
    std::vector<Index3> nodes;

    static BoundarySpec plane(int axis, int index);
    static BoundarySpec node_list(std::vector<Index3> nodes);
    static BoundarySpec surface();
    /// Parses "x=0", "y=max", "z=min".
    static BoundarySpec parse_plane(const std::string& text);
};

/// Hexahedral mesh over the active cells of a grid. Node ids follow grid scan
/// order (x fastest). Element connectivity is bottom face counter-clockwise,
/// then top face counter-clockwise.
struct HexMesh {
    std::vector<Vec3d> node_coords;              // material coordinates X (m)
    std::vector<std::array<int, 8>> elements;
    std::vector<Index3> node_grid_index;         // mesh node -> (i,j,k)
    std::vector<int> dirichlet_nodes;            // sorted mesh node ids
    std::vector<int> neumann_candidates;         // sorted mesh node ids
    Index3 grid_dims{0, 0, 0};
    Vec3d spacing{0, 0, 0};

    int node_count() const { return static_cast<int>(node_coords.size()); }
    int element_count() const { return static_cast<int>(elements.size()); }
    int dof_count() const { return 3 * node_count(); }
    bool is_dirichlet(int node) const;

    /// 3*node dof ids for the Dirichlet set.
    std::vector<int> dirichlet_dofs() const;
};

/// Extracts the active-cell mesh from a grid and resolves boundary sets.
/// Fails on an empty Dirichlet set or an explicit Dirichlet/Neumann overlap.
HexMesh mesh_from_grid(const RegularGrid& grid, const BoundarySpec& dirichlet,
                       const BoundarySpec& neumann);

}  // namespace umesh
