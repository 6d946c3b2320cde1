#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "umesh/errors.hpp"
#include "umesh/field.hpp"

namespace umesh::nn {

/// Dense (C, X, Y, Z) activation volume, same memory layout as FieldTensor:
/// channel-major, x fastest. Templated so gradient checks can run in double.
template <typename T>
struct Vol {
    int c = 0, x = 0, y = 0, z = 0;
    std::vector<T> data;

    Vol() = default;
    Vol(int c_, int x_, int y_, int z_)
        : c(c_), x(x_), y(y_), z(z_),
          data(static_cast<std::size_t>(c_) * x_ * y_ * z_, T(0)) {}

    std::size_t voxels() const { return static_cast<std::size_t>(x) * y * z; }
    std::size_t size() const { return data.size(); }
    std::size_t index(int cc, int xx, int yy, int zz) const {
        return ((static_cast<std::size_t>(cc) * z + zz) * y + yy) * x + xx;
    }
    T& at(int cc, int xx, int yy, int zz) { return data[index(cc, xx, yy, zz)]; }
    T at(int cc, int xx, int yy, int zz) const { return data[index(cc, xx, yy, zz)]; }
    bool same_shape(const Vol& o) const {
        return c == o.c && x == o.x && y == o.y && z == o.z;
    }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

template <typename T>
Vol<T> to_vol(const FieldTensor& f) {
    Vol<T> v(3, f.dims[0], f.dims[1], f.dims[2]);
    for (std::size_t i = 0; i < f.data.size(); ++i) v.data[i] = static_cast<T>(f.data[i]);
    return v;
}

template <typename T>
FieldTensor from_vol(const Vol<T>& v) {
    if (v.c != 3) throw ConfigError("field tensors carry exactly 3 channels");
    FieldTensor f({v.x, v.y, v.z});
    for (std::size_t i = 0; i < v.data.size(); ++i)
        f.data[i] = static_cast<float>(v.data[i]);
    return f;
}

}  // namespace umesh::nn
