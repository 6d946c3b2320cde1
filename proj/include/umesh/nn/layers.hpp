#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "umesh/errors.hpp"
#include "umesh/nn/vol.hpp"

namespace umesh::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MapRM =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMapRM = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Convolution parameters. ks 3 or 1 selects the padded 3x3x3 or the plain
/// 1x1x1 kernel; the 2x2x2 stride-2 transposed convolution uses its own
/// weight layout (ci, co, kz, ky, kx) instead of (co, ci, kz, ky, kx).
template <typename T>
struct ConvParam {
    int ci = 0, co = 0, ks = 3;
    std::vector<T> w;
    std::vector<T> b;

    static ConvParam conv(int ci, int co, int ks) {
        ConvParam p;
        p.ci = ci;
        p.co = co;
        p.ks = ks;
        p.w.assign(static_cast<std::size_t>(co) * ci * ks * ks * ks, T(0));
        p.b.assign(co, T(0));
        return p;
    }
    static ConvParam tconv(int ci, int co) {
        ConvParam p = conv(ci, co, 2);
        return p;
    }
};

namespace detail {

/// Receptive-field matrix for the padded 3x3x3 convolution: column n holds
/// the 27*ci inputs of output voxel n, rows ordered (ci, kz, ky, kx) with
/// kx fastest to match the weight layout.
template <typename T>
void im2col3(const Vol<T>& in, Mat<T>& cols) {
    const int X = in.x, Y = in.y, Z = in.z, C = in.c;
    const std::size_t nvox = in.voxels();
    cols.resize(static_cast<Eigen::Index>(C) * 27, static_cast<Eigen::Index>(nvox));
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                const std::size_t n = (static_cast<std::size_t>(z) * Y + y) * X + x;
                T* col = cols.data() + static_cast<std::size_t>(C) * 27 * n;
                for (int ci = 0; ci < C; ++ci) {
                    const T* chan = in.data.data() + ci * nvox;
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z + kz - 1;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (zz < 0 || zz >= Z || yy < 0 || yy >= Y) {
                                col[0] = col[1] = col[2] = T(0);
                                col += 3;
                                continue;
                            }
                            const T* row = chan + (static_cast<std::size_t>(zz) * Y + yy) * X;
                            col[0] = x > 0 ? row[x - 1] : T(0);
                            col[1] = row[x];
                            col[2] = x + 1 < X ? row[x + 1] : T(0);
                            col += 3;
                        }
                    }
                }
            }
}

/// Adjoint of im2col3: scatter-adds the column entries back onto the grid.
template <typename T>
void col2im3(const Mat<T>& cols, Vol<T>& out) {
    const int X = out.x, Y = out.y, Z = out.z, C = out.c;
    const std::size_t nvox = out.voxels();
    out.zero();
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                const std::size_t n = (static_cast<std::size_t>(z) * Y + y) * X + x;
                const T* col = cols.data() + static_cast<std::size_t>(C) * 27 * n;
                for (int ci = 0; ci < C; ++ci) {
                    T* chan = out.data.data() + ci * nvox;
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z + kz - 1;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (zz < 0 || zz >= Z || yy < 0 || yy >= Y) {
                                col += 3;
                                continue;
                            }
                            T* row = chan + (static_cast<std::size_t>(zz) * Y + yy) * X;
                            if (x > 0) row[x - 1] += col[0];
                            row[x] += col[1];
                            if (x + 1 < X) row[x + 1] += col[2];
                            col += 3;
                        }
                    }
                }
            }
}

inline void check_channels(int got, int want, const char* where) {
    if (got != want)
        throw ConfigError(std::string(where) + ": expected " + std::to_string(want) +
                          " input channels, got " + std::to_string(got));
}

}  // namespace detail

/// Cross-correlation with zero padding ks/2 and stride 1; spatial dims are
/// preserved. ks must be 3 or 1.
template <typename T>
void conv3d_forward(const Vol<T>& in, const ConvParam<T>& p, Vol<T>& out) {
    detail::check_channels(in.c, p.ci, "conv3d");
    const std::size_t nvox = in.voxels();
    out = Vol<T>(p.co, in.x, in.y, in.z);
    const Eigen::Index N = static_cast<Eigen::Index>(nvox);
    const Eigen::Index K = static_cast<Eigen::Index>(p.ci) * p.ks * p.ks * p.ks;
    CMapRM<T> W(p.w.data(), p.co, K);
    MapRM<T> O(out.data.data(), p.co, N);
    if (p.ks == 1) {
        CMapRM<T> I(in.data.data(), p.ci, N);
        O.noalias() = W * I;
    } else if (p.ks == 3) {
        Mat<T> cols;
        detail::im2col3(in, cols);
        O.noalias() = W * cols;
    } else {
        throw ConfigError("conv3d kernel size must be 1 or 3");
    }
    for (int co = 0; co < p.co; ++co) O.row(co).array() += p.b[co];
}

/// Exact gradients; grad_w/grad_b are accumulated into (callers zero them).
template <typename T>
void conv3d_backward(const Vol<T>& in, const ConvParam<T>& p, const Vol<T>& grad_out,
                     Vol<T>& grad_in, std::vector<T>& grad_w, std::vector<T>& grad_b) {
    detail::check_channels(in.c, p.ci, "conv3d backward");
    const Eigen::Index N = static_cast<Eigen::Index>(in.voxels());
    const Eigen::Index K = static_cast<Eigen::Index>(p.ci) * p.ks * p.ks * p.ks;
    CMapRM<T> W(p.w.data(), p.co, K);
    CMapRM<T> G(grad_out.data.data(), p.co, N);
    MapRM<T> GW(grad_w.data(), p.co, K);
    grad_in = Vol<T>(p.ci, in.x, in.y, in.z);
    if (p.ks == 1) {
        CMapRM<T> I(in.data.data(), p.ci, N);
        GW.noalias() += G * I.transpose();
        MapRM<T> GI(grad_in.data.data(), p.ci, N);
        GI.noalias() = W.transpose() * G;
    } else {
        Mat<T> cols;
        detail::im2col3(in, cols);
        GW.noalias() += G * cols.transpose();
        Mat<T> gcols(K, N);
        gcols.noalias() = W.transpose() * G;
        detail::col2im3(gcols, grad_in);
    }
    // scalar loop: Eigen redux groups terms by buffer alignment, which would
    // make the sum depend on the heap address
    for (int co = 0; co < p.co; ++co) {
        T s{};
        const T* row = grad_out.data.data() + static_cast<std::size_t>(co) * N;
        for (Eigen::Index i = 0; i < N; ++i) s += row[i];
        grad_b[co] += s;
    }
}

/// Non-overlapping 2x2x2 max pooling. argmax records the flat input index of
/// each output entry; ties go to the lowest linear index.
template <typename T>
void maxpool3d_forward(const Vol<T>& in, Vol<T>& out, std::vector<std::size_t>& argmax) {
    if (in.x % 2 || in.y % 2 || in.z % 2)
        throw ConfigError("maxpool3d needs even spatial dims");
    out = Vol<T>(in.c, in.x / 2, in.y / 2, in.z / 2);
    argmax.assign(out.size(), 0);
    std::size_t o = 0;
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < out.z; ++z)
            for (int y = 0; y < out.y; ++y)
                for (int x = 0; x < out.x; ++x, ++o) {
                    T best{};
                    std::size_t arg = 0;
                    bool first = true;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    in.index(c, 2 * x + dx, 2 * y + dy, 2 * z + dz);
                                const T v = in.data[idx];
                                if (first || v > best) {
                                    best = v;
                                    arg = idx;
                                    first = false;
                                }
                            }
                    out.data[o] = best;
                    argmax[o] = arg;
                }
}

template <typename T>
void maxpool3d_backward(const Vol<T>& grad_out, const std::vector<std::size_t>& argmax,
                        Vol<T>& grad_in) {
    grad_in.zero();
    for (std::size_t o = 0; o < grad_out.size(); ++o)
        grad_in.data[argmax[o]] += grad_out.data[o];
}

/// Stride-2 2x2x2 transposed convolution: every output 2x2x2 block comes from
/// exactly one input voxel, so spatial dims double. Weight layout is
/// (ci, co, kz, ky, kx), kx fastest.
template <typename T>
void tconv3d_forward(const Vol<T>& in, const ConvParam<T>& p, Vol<T>& out) {
    detail::check_channels(in.c, p.ci, "tconv3d");
    if (p.ks != 2) throw ConfigError("tconv3d kernel size must be 2");
    const Eigen::Index N = static_cast<Eigen::Index>(in.voxels());
    out = Vol<T>(p.co, 2 * in.x, 2 * in.y, 2 * in.z);

    Mat<T> W8(static_cast<Eigen::Index>(p.co) * 8, p.ci);
    for (int ci = 0; ci < p.ci; ++ci)
        for (int co = 0; co < p.co; ++co)
            for (int off = 0; off < 8; ++off)
                W8(static_cast<Eigen::Index>(co) * 8 + off, ci) =
                    p.w[(static_cast<std::size_t>(ci) * p.co + co) * 8 + off];

    CMapRM<T> I(in.data.data(), p.ci, N);
    Mat<T> B(static_cast<Eigen::Index>(p.co) * 8, N);
    B.noalias() = W8 * I;

    std::size_t n = 0;
    for (int z = 0; z < in.z; ++z)
        for (int y = 0; y < in.y; ++y)
            for (int x = 0; x < in.x; ++x, ++n)
                for (int co = 0; co < p.co; ++co)
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                out.at(co, 2 * x + dx, 2 * y + dy, 2 * z + dz) =
                                    B(co * 8 + ((dz * 2 + dy) * 2 + dx), n) + p.b[co];
}

template <typename T>
void tconv3d_backward(const Vol<T>& in, const ConvParam<T>& p, const Vol<T>& grad_out,
                      Vol<T>& grad_in, std::vector<T>& grad_w, std::vector<T>& grad_b) {
    detail::check_channels(in.c, p.ci, "tconv3d backward");
    const Eigen::Index N = static_cast<Eigen::Index>(in.voxels());

    Mat<T> G8(static_cast<Eigen::Index>(p.co) * 8, N);
    std::size_t n = 0;
    for (int z = 0; z < in.z; ++z)
        for (int y = 0; y < in.y; ++y)
            for (int x = 0; x < in.x; ++x, ++n)
                for (int co = 0; co < p.co; ++co)
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                G8(co * 8 + ((dz * 2 + dy) * 2 + dx), n) = grad_out.at(
                                    co, 2 * x + dx, 2 * y + dy, 2 * z + dz);

    Mat<T> W8(static_cast<Eigen::Index>(p.co) * 8, p.ci);
    for (int ci = 0; ci < p.ci; ++ci)
        for (int co = 0; co < p.co; ++co)
            for (int off = 0; off < 8; ++off)
                W8(static_cast<Eigen::Index>(co) * 8 + off, ci) =
                    p.w[(static_cast<std::size_t>(ci) * p.co + co) * 8 + off];

    grad_in = Vol<T>(p.ci, in.x, in.y, in.z);
    MapRM<T> GI(grad_in.data.data(), p.ci, N);
    GI.noalias() = W8.transpose() * G8;

    CMapRM<T> I(in.data.data(), p.ci, N);
    Mat<T> GW8(static_cast<Eigen::Index>(p.co) * 8, p.ci);
    GW8.noalias() = G8 * I.transpose();
    for (int ci = 0; ci < p.ci; ++ci)
        for (int co = 0; co < p.co; ++co)
            for (int off = 0; off < 8; ++off)
                grad_w[(static_cast<std::size_t>(ci) * p.co + co) * 8 + off] +=
                    GW8(static_cast<Eigen::Index>(co) * 8 + off, ci);
    // scalar loop for bit-reproducibility (see conv3d_backward)
    for (int co = 0; co < p.co; ++co) {
        T s{};
        for (Eigen::Index i = 0; i < N; ++i)
            for (int off = 0; off < 8; ++off)
                s += G8(static_cast<Eigen::Index>(co) * 8 + off, i);
        grad_b[co] += s;
    }
}

template <typename T>
void relu_forward(Vol<T>& v) {
    for (T& e : v.data) e = e > T(0) ? e : T(0);
}

/// Gates the gradient on the post-activation output (out > 0 iff pre > 0).
template <typename T>
void relu_backward(const Vol<T>& out, Vol<T>& grad) {
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(out.data[i] > T(0))) grad.data[i] = T(0);
}

/// Concatenates b's channels after a's (layouts make this two block copies).
template <typename T>
Vol<T> concat_channels(const Vol<T>& a, const Vol<T>& b) {
    if (a.x != b.x || a.y != b.y || a.z != b.z)
        throw ConfigError("channel concat needs matching spatial dims");
    Vol<T> out(a.c + b.c, a.x, a.y, a.z);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

/// Mean squared error over the active entries only: every channel of every
/// voxel with a set mask bit. Gradient (if requested) is 2(pred-target)/count
/// there and exactly zero elsewhere.
template <typename T>
T mse_loss(const Vol<T>& pred, const Vol<T>& target,
           const std::vector<std::uint8_t>& voxel_mask, Vol<T>* grad = nullptr) {
    if (!pred.same_shape(target)) throw ConfigError("mse_loss shape mismatch");
    const std::size_t nvox = pred.voxels();
    if (voxel_mask.size() != nvox) throw ConfigError("mse_loss mask size mismatch");
    std::size_t active = 0;
    for (auto m : voxel_mask) active += m ? 1 : 0;
    const std::size_t count = static_cast<std::size_t>(pred.c) * active;
    if (grad) {
        *grad = Vol<T>(pred.c, pred.x, pred.y, pred.z);
    }
    if (count == 0) return T(0);
    T sum = T(0);
    for (int c = 0; c < pred.c; ++c)
        for (std::size_t v = 0; v < nvox; ++v) {
            if (!voxel_mask[v]) continue;
            const std::size_t i = c * nvox + v;
            const T d = pred.data[i] - target.data[i];
            sum += d * d;
            if (grad) grad->data[i] = T(2) * d / static_cast<T>(count);
        }
    return sum / static_cast<T>(count);
}

}  // namespace umesh::nn
