#pragma once

#include <Eigen/Core>
#include <vector>

#include "umesh/grid.hpp"
#include "umesh/mesh.hpp"

namespace umesh {

/// 3-channel volumetric array over the padded grid nodes. Layout is
/// channel-major with x fastest: index = ((c*pz + z)*py + y)*px + x.
/// Holds nodal forces (N) or displacements (m); float32 is the storage
/// and network precision.
struct FieldTensor {
    Index3 dims{0, 0, 0};  // (px, py, pz)
    std::vector<float> data;

    FieldTensor() = default;
    explicit FieldTensor(const Index3& d)
        : dims(d), data(static_cast<std::size_t>(3) * d[0] * d[1] * d[2], 0.0f) {}

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int c, int x, int y, int z) const {
        return ((static_cast<std::size_t>(c) * dims[2] + z) * dims[1] + y) * dims[0] + x;
    }
    float& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }
    float at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }
};

/// Scatters per-node values (3 per active node, mesh node order) into the
/// padded box; everything else stays exactly zero.
FieldTensor embed_field(const Eigen::VectorXd& node_values, const HexMesh& mesh,
                        const PaddedShape& pad);

/// Gathers the active-node values back out; inverse of embed_field.
Eigen::VectorXd extract_field(const FieldTensor& field, const HexMesh& mesh,
                              const PaddedShape& pad);

/// Voxel activity mask over the padded box (1 where an active mesh node sits).
std::vector<std::uint8_t> active_voxel_mask(const HexMesh& mesh, const PaddedShape& pad);

}  // namespace umesh
