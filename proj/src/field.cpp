#include "umesh/field.hpp"

#include "umesh/errors.hpp"

namespace umesh {

FieldTensor embed_field(const Eigen::VectorXd& node_values, const HexMesh& mesh,
                        const PaddedShape& pad) {
    if (node_values.size() != mesh.dof_count())
        throw ConfigError("embed_field: value vector has " + std::to_string(node_values.size()) +
                          " entries, mesh has " + std::to_string(mesh.dof_count()) + " dofs");
    FieldTensor f(pad.padded_dims);
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& ijk = mesh.node_grid_index[n];
        const int x = ijk[0] + pad.offset[0];
        const int y = ijk[1] + pad.offset[1];
        const int z = ijk[2] + pad.offset[2];
        for (int c = 0; c < 3; ++c)
            f.at(c, x, y, z) = static_cast<float>(node_values[3 * n + c]);
    }
    return f;
}

Eigen::VectorXd extract_field(const FieldTensor& field, const HexMesh& mesh,
                              const PaddedShape& pad) {
    if (field.dims != pad.padded_dims)
        throw ConfigError("extract_field: tensor dims do not match the padded shape");
    Eigen::VectorXd v(mesh.dof_count());
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& ijk = mesh.node_grid_index[n];
        const int x = ijk[0] + pad.offset[0];
        const int y = ijk[1] + pad.offset[1];
        const int z = ijk[2] + pad.offset[2];
        for (int c = 0; c < 3; ++c)
            v[3 * n + c] = static_cast<double>(field.at(c, x, y, z));
    }
    return v;
}

std::vector<std::uint8_t> active_voxel_mask(const HexMesh& mesh, const PaddedShape& pad) {
    const auto& d = pad.padded_dims;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0);
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& ijk = mesh.node_grid_index[n];
        const std::size_t idx =
            (static_cast<std::size_t>(ijk[2] + pad.offset[2]) * d[1] + (ijk[1] + pad.offset[1])) *
                d[0] +
            (ijk[0] + pad.offset[0]);
        mask[idx] = 1;
    }
    return mask;
}

}  // namespace umesh
