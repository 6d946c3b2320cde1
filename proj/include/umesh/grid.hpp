#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace umesh {

using Index3 = std::array<int, 3>;
using Vec3d = std::array<double, 3>;

/// Regular node grid with per-axis spacing and a cell occupancy mask.
/// Cells (dims[a]-1 per axis) are the H8 elements of the derived mesh;
/// a false mask entry carves the cell out of the simulated object.
struct RegularGrid {
    Index3 dims{0, 0, 0};      // node counts per axis
    Vec3d spacing{0, 0, 0};    // element edge lengths (m)
    Vec3d origin{0, 0, 0};     // material-space corner (m)
    std::vector<std::uint8_t> cell_mask;  // cx*cy*cz entries, x-fastest

    int cells(int axis) const { return dims[axis] - 1; }
    std::size_t cell_count() const {
        return static_cast<std::size_t>(cells(0)) * cells(1) * cells(2);
    }
    std::size_t node_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t cell_index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * cells(1) + j) * cells(0) + i;
    }
    std::size_t node_index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    bool cell_active(int i, int j, int k) const {
        return cell_mask[cell_index(i, j, k)] != 0;
    }
};

/// Box the grid is embedded in so every spatial dim survives k pooling halvings.
struct PaddedShape {
    Index3 padded_dims{0, 0, 0};
    Index3 offset{0, 0, 0};  // node-index shift of the real grid inside the box
};

/// Validates and builds a grid. An empty mask means all cells active.
RegularGrid build_grid(const Index3& dims, const Vec3d& spacing, const Vec3d& origin,
                       std::vector<std::uint8_t> cell_mask = {});

/// Smallest per-axis multiple of 2^k that fits the grid; offset centers it
/// (floor division on odd remainders).
PaddedShape padded_shape(const Index3& dims, int k);

/// Reads a `VOXMASK v1` occupancy file: header, `dims cx cy cz`, then
/// cx*cy*cz whitespace-separated 0/1 values in x-fastest order.
std::vector<std::uint8_t> read_voxmask(const std::string& path, Index3& cell_dims);
void write_voxmask(const std::string& path, const Index3& cell_dims,
                   const std::vector<std::uint8_t>& mask);

}  // namespace umesh
