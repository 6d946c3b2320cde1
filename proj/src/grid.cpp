#include "umesh/grid.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "umesh/errors.hpp"

namespace umesh {

RegularGrid build_grid(const Index3& dims, const Vec3d& spacing, const Vec3d& origin,
                       std::vector<std::uint8_t> cell_mask) {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 2)
            throw ConfigError("grid needs at least 2 nodes per axis (axis " +
                              std::to_string(a) + " has " + std::to_string(dims[a]) + ")");
        if (!(spacing[a] > 0.0))
            throw ConfigError("grid spacing must be positive on axis " + std::to_string(a));
    }
    RegularGrid g;
    g.dims = dims;
    g.spacing = spacing;
    g.origin = origin;
    if (cell_mask.empty()) {
        g.cell_mask.assign(g.cell_count(), 1);
    } else {
        if (cell_mask.size() != g.cell_count())
            throw ConfigError("cell mask has " + std::to_string(cell_mask.size()) +
                              " entries, grid has " + std::to_string(g.cell_count()) + " cells");
        g.cell_mask = std::move(cell_mask);
    }
    if (std::find(g.cell_mask.begin(), g.cell_mask.end(), std::uint8_t{1}) == g.cell_mask.end())
        throw ConfigError("cell mask leaves no active cells");
    return g;
}

PaddedShape padded_shape(const Index3& dims, int k) {
    if (k < 1) throw ConfigError("padding steps must be >= 1");
    PaddedShape p;
    const int align = 1 << k;
    for (int a = 0; a < 3; ++a) {
        const int n = dims[a];
        p.padded_dims[a] = ((n + align - 1) / align) * align;
        p.offset[a] = (p.padded_dims[a] - n) / 2;
    }
    return p;
}

std::vector<std::uint8_t> read_voxmask(const std::string& path, Index3& cell_dims) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open mask file: " + path);
    std::string tag, ver;
    in >> tag >> ver;
    if (tag != "VOXMASK" || ver != "v1")
        throw FormatError("bad mask header in " + path + " (expected 'VOXMASK v1')");
    std::string dims_kw;
    in >> dims_kw;
    if (dims_kw != "dims") throw FormatError("missing 'dims' line in " + path);
    in >> cell_dims[0] >> cell_dims[1] >> cell_dims[2];
    if (!in || cell_dims[0] < 1 || cell_dims[1] < 1 || cell_dims[2] < 1)
        throw FormatError("bad cell dims in " + path);
    const std::size_t n =
        static_cast<std::size_t>(cell_dims[0]) * cell_dims[1] * cell_dims[2];
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        int v;
        in >> v;
        if (!in) throw FormatError("mask file truncated: " + path);
        if (v != 0 && v != 1) throw FormatError("mask entries must be 0/1: " + path);
        mask[i] = static_cast<std::uint8_t>(v);
    }
    return mask;
}

void write_voxmask(const std::string& path, const Index3& cell_dims,
                   const std::vector<std::uint8_t>& mask) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write mask file: " + path);
    out << "VOXMASK v1\n";
    out << "dims " << cell_dims[0] << ' ' << cell_dims[1] << ' ' << cell_dims[2] << '\n';
    const int cx = cell_dims[0];
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out << int(mask[i]) << ((i % cx == static_cast<std::size_t>(cx) - 1) ? '\n' : ' ');
    }
    if (!out) throw FormatError("failed writing mask file: " + path);
}

}  // namespace umesh
