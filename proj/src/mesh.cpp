#include "umesh/mesh.hpp"

#include <algorithm>
#include <stdexcept>

#include "umesh/errors.hpp"

namespace umesh {

BoundarySpec BoundarySpec::plane(int axis, int index) {
    BoundarySpec s;
    s.kind = Kind::Plane;
    s.axis = axis;
    s.index = index;
    return s;
}

BoundarySpec BoundarySpec::node_list(std::vector<Index3> nodes) {
    BoundarySpec s;
    s.kind = Kind::Nodes;
    s.nodes = std::move(nodes);
    return s;
}

BoundarySpec BoundarySpec::surface() {
    BoundarySpec s;
    s.kind = Kind::Surface;
    return s;
}

BoundarySpec BoundarySpec::parse_plane(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq != 1)
        throw ConfigError("bad plane spec '" + text + "' (expected e.g. \"x=0\", \"y=max\")");
    const char ax = text[0];
    int axis;
    switch (ax) {
        case 'x': axis = 0; break;
        case 'y': axis = 1; break;
        case 'z': axis = 2; break;
        default: throw ConfigError("bad plane axis in '" + text + "'");
    }
    const std::string rhs = text.substr(eq + 1);
    int index;
    if (rhs == "max") {
        index = -1;
    } else if (rhs == "min") {
        index = 0;
    } else {
        try {
            index = std::stoi(rhs);
        } catch (const std::exception&) {
            throw ConfigError("bad plane index in '" + text + "'");
        }
        if (index < 0) throw ConfigError("plane index must be >= 0 in '" + text + "'");
    }
    return plane(axis, index);
}

bool HexMesh::is_dirichlet(int node) const {
    return std::binary_search(dirichlet_nodes.begin(), dirichlet_nodes.end(), node);
}

std::vector<int> HexMesh::dirichlet_dofs() const {
    std::vector<int> dofs;
    dofs.reserve(dirichlet_nodes.size() * 3);
    for (int n : dirichlet_nodes)
        for (int c = 0; c < 3; ++c) dofs.push_back(3 * n + c);
    return dofs;
}

namespace {

// Counts active cells incident to node (i,j,k); missing cells (outside the
// grid) count as inactive.
int active_incident_cells(const RegularGrid& g, int i, int j, int k) {
    int count = 0;
    for (int dk = -1; dk <= 0; ++dk)
        for (int dj = -1; dj <= 0; ++dj)
            for (int di = -1; di <= 0; ++di) {
                const int ci = i + di, cj = j + dj, ck = k + dk;
                if (ci < 0 || cj < 0 || ck < 0 || ci >= g.cells(0) || cj >= g.cells(1) ||
                    ck >= g.cells(2))
                    continue;
                if (g.cell_active(ci, cj, ck)) ++count;
            }
    return count;
}

std::vector<int> resolve_spec(const BoundarySpec& spec, const RegularGrid& g,
                              const std::vector<int>& grid_to_mesh, const HexMesh& mesh,
                              const char* side) {
    std::vector<int> out;
    switch (spec.kind) {
        case BoundarySpec::Kind::None:
            break;
        case BoundarySpec::Kind::Plane: {
            int index = spec.index;
            if (index == -1) index = g.dims[spec.axis] - 1;
            if (index < 0 || index >= g.dims[spec.axis])
                throw ConfigError(std::string(side) + " plane index out of range");
            for (int n = 0; n < mesh.node_count(); ++n)
                if (mesh.node_grid_index[n][spec.axis] == index) out.push_back(n);
            break;
        }
        case BoundarySpec::Kind::Nodes: {
            for (const auto& ijk : spec.nodes) {
                for (int a = 0; a < 3; ++a)
                    if (ijk[a] < 0 || ijk[a] >= g.dims[a])
                        throw ConfigError(std::string(side) + " node outside grid");
                const int m = grid_to_mesh[g.node_index(ijk[0], ijk[1], ijk[2])];
                if (m < 0)
                    throw ConfigError(std::string(side) +
                                      " node list references an inactive grid node");
                out.push_back(m);
            }
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
            break;
        }
        case BoundarySpec::Kind::Surface: {
            for (int n = 0; n < mesh.node_count(); ++n) {
                const auto& ijk = mesh.node_grid_index[n];
                if (active_incident_cells(g, ijk[0], ijk[1], ijk[2]) < 8) out.push_back(n);
            }
            break;
        }
    }
    return out;
}

}  // namespace

HexMesh mesh_from_grid(const RegularGrid& grid, const BoundarySpec& dirichlet,
                       const BoundarySpec& neumann) {
    HexMesh mesh;
    mesh.grid_dims = grid.dims;
    mesh.spacing = grid.spacing;

    // Number the nodes touched by at least one active cell, grid scan order.
    std::vector<char> touched(grid.node_count(), 0);
    for (int ck = 0; ck < grid.cells(2); ++ck)
        for (int cj = 0; cj < grid.cells(1); ++cj)
            for (int ci = 0; ci < grid.cells(0); ++ci) {
                if (!grid.cell_active(ci, cj, ck)) continue;
                for (int dk = 0; dk <= 1; ++dk)
                    for (int dj = 0; dj <= 1; ++dj)
                        for (int di = 0; di <= 1; ++di)
                            touched[grid.node_index(ci + di, cj + dj, ck + dk)] = 1;
            }
    std::vector<int> grid_to_mesh(grid.node_count(), -1);
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                const std::size_t gi = grid.node_index(i, j, k);
                if (!touched[gi]) continue;
                grid_to_mesh[gi] = static_cast<int>(mesh.node_grid_index.size());
                mesh.node_grid_index.push_back({i, j, k});
                mesh.node_coords.push_back({grid.origin[0] + i * grid.spacing[0],
                                            grid.origin[1] + j * grid.spacing[1],
                                            grid.origin[2] + k * grid.spacing[2]});
            }

    for (int ck = 0; ck < grid.cells(2); ++ck)
        for (int cj = 0; cj < grid.cells(1); ++cj)
            for (int ci = 0; ci < grid.cells(0); ++ci) {
                if (!grid.cell_active(ci, cj, ck)) continue;
                // bottom face CCW (viewed from +z), then top face CCW
                const std::array<Index3, 8> corner = {{{ci, cj, ck},
                                                       {ci + 1, cj, ck},
                                                       {ci + 1, cj + 1, ck},
                                                       {ci, cj + 1, ck},
                                                       {ci, cj, ck + 1},
                                                       {ci + 1, cj, ck + 1},
                                                       {ci + 1, cj + 1, ck + 1},
                                                       {ci, cj + 1, ck + 1}}};
                std::array<int, 8> elem;
                for (int a = 0; a < 8; ++a) {
                    const int m =
                        grid_to_mesh[grid.node_index(corner[a][0], corner[a][1], corner[a][2])];
                    elem[a] = m;
                }
                mesh.elements.push_back(elem);
            }

    mesh.dirichlet_nodes = resolve_spec(dirichlet, grid, grid_to_mesh, mesh, "dirichlet");
    std::sort(mesh.dirichlet_nodes.begin(), mesh.dirichlet_nodes.end());
    if (mesh.dirichlet_nodes.empty())
        throw ConfigError("empty Dirichlet set: the system would have rigid-body modes");

    mesh.neumann_candidates = resolve_spec(neumann, grid, grid_to_mesh, mesh, "neumann");
    std::sort(mesh.neumann_candidates.begin(), mesh.neumann_candidates.end());
    if (neumann.kind == BoundarySpec::Kind::Surface) {
        // Convenience spec: surface loads never target fixed nodes.
        std::vector<int> filtered;
        std::set_difference(mesh.neumann_candidates.begin(), mesh.neumann_candidates.end(),
                            mesh.dirichlet_nodes.begin(), mesh.dirichlet_nodes.end(),
                            std::back_inserter(filtered));
        mesh.neumann_candidates = std::move(filtered);
    } else {
        std::vector<int> overlap;
        std::set_intersection(mesh.dirichlet_nodes.begin(), mesh.dirichlet_nodes.end(),
                              mesh.neumann_candidates.begin(), mesh.neumann_candidates.end(),
                              std::back_inserter(overlap));
        if (!overlap.empty())
            throw ConfigError("Dirichlet and Neumann sets overlap on " +
                              std::to_string(overlap.size()) + " node(s)");
    }
    return mesh;
}

}  // namespace umesh
