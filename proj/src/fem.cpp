#include "umesh/fem.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "umesh/errors.hpp"

namespace umesh {

const std::array<QuadPoint, 8>& gauss_2x2x2() {
    static const std::array<QuadPoint, 8> pts = [] {
        const double g = 1.0 / std::sqrt(3.0);
        std::array<QuadPoint, 8> p{};
        int n = 0;
        for (int k = 0; k < 2; ++k)
            for (int j = 0; j < 2; ++j)
                for (int i = 0; i < 2; ++i) {
                    p[n].xi = Vec3(i ? g : -g, j ? g : -g, k ? g : -g);
                    p[n].weight = 1.0;
                    ++n;
                }
        return p;
    }();
    return pts;
}

// Local corner coordinates in reference node order: bottom face counter-
// clockwise from (-1,-1,-1), then the top face in the same order.
static constexpr double kCorner[8][3] = {
    {-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
    {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1},
};

std::array<Vec3, 8> shape_gradients_local(const Vec3& xi) {
    std::array<Vec3, 8> g;
    for (int a = 0; a < 8; ++a) {
        const double sx = kCorner[a][0], sy = kCorner[a][1], sz = kCorner[a][2];
        const double fx = 1.0 + sx * xi[0];
        const double fy = 1.0 + sy * xi[1];
        const double fz = 1.0 + sz * xi[2];
        g[a] = 0.125 * Vec3(sx * fy * fz, fx * sy * fz, fx * fy * sz);
    }
    return g;
}

ElementGeometry element_geometry(const std::array<Vec3d, 8>& coords) {
    ElementGeometry geo;
    const auto& qps = gauss_2x2x2();
    for (int q = 0; q < 8; ++q) {
        const auto local = shape_gradients_local(qps[q].xi);
        Mat3 J = Mat3::Zero();  // J(i,j) = dx_i/dxi_j
        for (int a = 0; a < 8; ++a) {
            const Vec3 x(coords[a][0], coords[a][1], coords[a][2]);
            J += x * local[a].transpose();
        }
        const double detj = J.determinant();
        if (!(detj > 0.0))
            throw ConfigError("element jacobian is not positive");
        const Mat3 Jinv = J.inverse();
        for (int a = 0; a < 8; ++a)
            geo.grad[q][a] = Jinv.transpose() * local[a];
        geo.wdetj[q] = qps[q].weight * detj;
    }
    return geo;
}

Mat3 deformation_gradient(const ElementGeometry& geo, int qp, const ElemVec& u_elem) {
    Mat3 F = Mat3::Identity();
    for (int a = 0; a < 8; ++a)
        F += u_elem.segment<3>(3 * a) * geo.grad[qp][a].transpose();
    return F;
}

Mat3 green_lagrange(const Mat3& F) {
    return 0.5 * (F.transpose() * F - Mat3::Identity());
}

double strain_energy_density(const Mat3& E, const MaterialParams& mat) {
    const double tr = E.trace();
    return 0.5 * mat.lame_lambda * tr * tr + mat.lame_mu * (E * E).trace();
}

Mat3 pk2_stress(const Mat3& E, const MaterialParams& mat) {
    return mat.lame_lambda * E.trace() * Mat3::Identity() + 2.0 * mat.lame_mu * E;
}

double element_energy(const ElementGeometry& geo, const ElemVec& u_elem,
                      const MaterialParams& mat) {
    double w = 0.0;
    for (int q = 0; q < 8; ++q) {
        const Mat3 F = deformation_gradient(geo, q, u_elem);
        w += geo.wdetj[q] * strain_energy_density(green_lagrange(F), mat);
    }
    return w;
}

ElemVec element_internal_force(const ElementGeometry& geo, const ElemVec& u_elem,
                               const MaterialParams& mat) {
    ElemVec f = ElemVec::Zero();
    for (int q = 0; q < 8; ++q) {
        const Mat3 F = deformation_gradient(geo, q, u_elem);
        const Mat3 P = F * pk2_stress(green_lagrange(F), mat);  // first Piola
        for (int a = 0; a < 8; ++a)
            f.segment<3>(3 * a) += geo.wdetj[q] * (P * geo.grad[q][a]);
    }
    return f;
}

ElemMat element_stiffness(const ElementGeometry& geo, const ElemVec& u_elem,
                          const MaterialParams& mat) {
    ElemMat K = ElemMat::Zero();
    const double lambda = mat.lame_lambda, mu = mat.lame_mu;
    for (int q = 0; q < 8; ++q) {
        const Mat3 F = deformation_gradient(geo, q, u_elem);
        const Mat3 S = pk2_stress(green_lagrange(F), mat);
        const Mat3 B = F * F.transpose();
        const double w = geo.wdetj[q];
        std::array<Vec3, 8> c;  // c_a = F g_a
        for (int a = 0; a < 8; ++a) c[a] = F * geo.grad[q][a];
        for (int b = 0; b < 8; ++b) {
            const Vec3 Sgb = S * geo.grad[q][b];
            for (int a = 0; a < 8; ++a) {
                const Vec3& ga = geo.grad[q][a];
                const Vec3& gb = geo.grad[q][b];
                const double geom = ga.dot(Sgb);       // geometric part
                const double gab = ga.dot(gb);
                Mat3 blk = lambda * (c[a] * c[b].transpose()) +
                           mu * (c[b] * c[a].transpose()) + (mu * gab) * B;
                blk.diagonal().array() += geom;
                K.block<3, 3>(3 * a, 3 * b) += w * blk;
            }
        }
    }
    return K;
}

// ---------------------------------------------------------------------------

static std::array<Vec3d, 8> element_coords(const HexMesh& mesh, int elem) {
    std::array<Vec3d, 8> c;
    for (int a = 0; a < 8; ++a) c[a] = mesh.node_coords[mesh.elements[elem][a]];
    return c;
}

FemContext::FemContext(const HexMesh& mesh, const MaterialParams& mat)
    : mesh_(&mesh), mat_(mat), geo_(element_geometry(element_coords(mesh, 0))) {
    const int n = ndof();
    const auto& elems = mesh.elements;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(elems.size() * 576);
    for (const auto& e : elems)
        for (int b = 0; b < 8; ++b)
            for (int a = 0; a < 8; ++a)
                for (int j = 0; j < 3; ++j)
                    for (int i = 0; i < 3; ++i)
                        trips.emplace_back(3 * e[a] + i, 3 * e[b] + j, 0.0);
    pattern_.resize(n, n);
    pattern_.setFromTriplets(trips.begin(), trips.end());
    pattern_.makeCompressed();

    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    slots_.resize(elems.size() * 576);
    for (size_t e = 0; e < elems.size(); ++e)
        for (int lc = 0; lc < 24; ++lc) {
            const int col = 3 * elems[e][lc / 3] + lc % 3;
            for (int lr = 0; lr < 24; ++lr) {
                const int row = 3 * elems[e][lr / 3] + lr % 3;
                const int* it = std::lower_bound(inner + outer[col],
                                                 inner + outer[col + 1], row);
                slots_[e * 576 + lc * 24 + lr] = static_cast<int>(it - inner);
            }
        }
}

void FemContext::gather(const Eigen::VectorXd& u, int elem, ElemVec& out) const {
    for (int a = 0; a < 8; ++a)
        out.segment<3>(3 * a) = u.segment<3>(3 * mesh_->elements[elem][a]);
}

double FemContext::total_energy(const Eigen::VectorXd& u) const {
    if (u.size() != ndof()) throw ConfigError("displacement size mismatch");
    double w = 0.0;
    ElemVec ue;
    for (size_t e = 0; e < mesh_->elements.size(); ++e) {
        gather(u, static_cast<int>(e), ue);
        w += element_energy(geo_, ue, mat_);
    }
    return w;
}

Eigen::VectorXd FemContext::internal_forces(const Eigen::VectorXd& u) const {
    if (u.size() != ndof()) throw ConfigError("displacement size mismatch");
    Eigen::VectorXd r = Eigen::VectorXd::Zero(ndof());
    ElemVec ue;
    for (size_t e = 0; e < mesh_->elements.size(); ++e) {
        gather(u, static_cast<int>(e), ue);
        const ElemVec fe = element_internal_force(geo_, ue, mat_);
        for (int a = 0; a < 8; ++a)
            r.segment<3>(3 * mesh_->elements[e][a]) += fe.segment<3>(3 * a);
    }
    return r;
}

const SpMat& FemContext::tangent_stiffness(const Eigen::VectorXd& u) {
    if (u.size() != ndof()) throw ConfigError("displacement size mismatch");
    double* vals = pattern_.valuePtr();
    std::fill(vals, vals + pattern_.nonZeros(), 0.0);
    ElemVec ue;
    for (size_t e = 0; e < mesh_->elements.size(); ++e) {
        gather(u, static_cast<int>(e), ue);
        const ElemMat Ke = element_stiffness(geo_, ue, mat_);
        const int* slot = slots_.data() + e * 576;
        for (int lc = 0; lc < 24; ++lc)
            for (int lr = 0; lr < 24; ++lr)
                vals[slot[lc * 24 + lr]] += Ke(lr, lc);
    }
    return pattern_;
}

bool FemContext::has_inverted_elements(const Eigen::VectorXd& u) const {
    ElemVec ue;
    for (size_t e = 0; e < mesh_->elements.size(); ++e) {
        gather(u, static_cast<int>(e), ue);
        for (int q = 0; q < 8; ++q)
            if (deformation_gradient(geo_, q, ue).determinant() <= 0.0)
                return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

void apply_dirichlet(SpMat& A, Eigen::VectorXd& rhs, const std::vector<int>& fixed_dofs) {
    std::vector<char> fixed(A.rows(), 0);
    for (int d : fixed_dofs) {
        if (d < 0 || d >= A.rows()) throw ConfigError("fixed dof out of range");
        fixed[d] = 1;
        rhs[d] = 0.0;
    }
    for (int c = 0; c < A.outerSize(); ++c) {
        const bool cf = fixed[c];
        for (SpMat::InnerIterator it(A, c); it; ++it) {
            if (cf || fixed[it.row()])
                it.valueRef() = (it.row() == c) ? 1.0 : 0.0;
        }
    }
}

PcgResult solve_pcg(const SpMat& A, const Eigen::VectorXd& b, double tol,
                    int max_iters,
                    const std::function<void(int, const Eigen::VectorXd&)>& on_iterate) {
    const int n = static_cast<int>(b.size());
    if (A.rows() != n || A.cols() != n) throw ConfigError("pcg dimension mismatch");
    if (max_iters <= 0) max_iters = 10 * n;

    PcgResult res;
    res.x = Eigen::VectorXd::Zero(n);
    const double bnorm = b.norm();
    if (bnorm == 0.0) return res;

    Eigen::VectorXd minv(n);
    for (int i = 0; i < n; ++i) {
        const double d = A.coeff(i, i);
        if (!(d > 0.0)) {
            res.status = PcgStatus::Breakdown;
            res.rel_residual = 1.0;
            return res;
        }
        minv[i] = 1.0 / d;
    }

    Eigen::VectorXd r = b;
    Eigen::VectorXd z = minv.cwiseProduct(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    Eigen::VectorXd Ap(n);
    for (int k = 1; k <= max_iters; ++k) {
        Ap.noalias() = A * p;
        const double pAp = p.dot(Ap);
        if (!(pAp > 0.0)) {
            res.status = PcgStatus::Breakdown;
            res.rel_residual = r.norm() / bnorm;
            return res;
        }
        const double alpha = rz / pAp;
        res.x += alpha * p;
        r -= alpha * Ap;
        res.iterations = k;
        if (on_iterate) on_iterate(k, res.x);
        res.rel_residual = r.norm() / bnorm;
        if (res.rel_residual <= tol) {
            res.status = PcgStatus::Converged;
            return res;
        }
        z = minv.cwiseProduct(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    res.status = PcgStatus::MaxIterations;
    return res;
}

// ---------------------------------------------------------------------------

NewtonResult newton_solve(FemContext& ctx, const Eigen::VectorXd& f_ext,
                          const NewtonOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = ctx.ndof();
    if (f_ext.size() != n) throw ConfigError("external force size mismatch");
    const std::vector<int> fixed = ctx.mesh().dirichlet_dofs();
    std::vector<char> is_fixed(n, 0);
    for (int d : fixed) is_fixed[d] = 1;

    const double fnorm = f_ext.norm();
    NewtonResult out;
    out.u = Eigen::VectorXd::Zero(n);
    SolveReport& rep = out.report;

    if (!(opts.initial_increment > 0.0 && opts.initial_increment <= 1.0))
        throw ConfigError("initial_increment must be in (0, 1]");
    Eigen::VectorXd u_last = out.u;
    double lam_done = 0.0, step = opts.initial_increment;
    int halvings = 0;
    double best_rel = std::numeric_limits<double>::infinity();

    auto residual_vec = [&](const Eigen::VectorXd& u, double lam) {
        Eigen::VectorXd rv = lam * f_ext - ctx.internal_forces(u);
        for (int d : fixed) rv[d] = 0.0;
        return rv;
    };

    while (lam_done < 1.0 - 1e-12) {
        const double lam = std::min(1.0, lam_done + step);
        const double scale = std::max(lam * fnorm, opts.force_floor);

        Eigen::VectorXd rv = residual_vec(out.u, lam);
        double res = rv.norm();
        double prev = res;
        int streak = 0;
        bool converged = res <= opts.newton_tol * scale;
        bool diverged = false;

        for (int it = 0; it < opts.max_newton_iters && !converged && !diverged; ++it) {
            SpMat K = ctx.tangent_stiffness(out.u);  // copy; dirichlet edits follow
            apply_dirichlet(K, rv, fixed);
            const PcgResult lin = solve_pcg(K, rv, opts.cg_tol, opts.max_cg_iters);
            rep.cg_iterations += lin.iterations;
            if (lin.status == PcgStatus::Breakdown) {
                if (lam_done == 0.0 && it == 0)
                    throw ConfigError(
                        "tangent stiffness is singular at the reference state; "
                        "check dirichlet constraints");
                diverged = true;
                break;
            }
            out.u += lin.x;
            ++rep.newton_iterations;

            rv = residual_vec(out.u, lam);
            res = rv.norm();
            rep.residual_history.push_back(res / scale);
            best_rel = std::min(best_rel, res / scale);
            converged = res <= opts.newton_tol * scale;
            if (res > prev) {
                if (++streak >= opts.divergence_streak) diverged = true;
            } else {
                streak = 0;
            }
            prev = res;
        }

        if (converged) {
            lam_done = lam;
            u_last = out.u;
            ++rep.load_increments;
            rep.final_residual = res / std::max(fnorm, opts.force_floor);
        } else {
            if (++halvings > opts.max_increment_halvings) {
                ConvergenceError err(
                    "newton solver failed at load fraction " + std::to_string(lam) +
                        " after " + std::to_string(halvings - 1) + " step halvings",
                    best_rel);
                throw err;
            }
            ++rep.increment_cutbacks;
            step *= 0.5;
            out.u = u_last;
        }
    }

    rep.inverted_elements = ctx.has_inverted_elements(out.u);
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd internal_forces(const HexMesh& mesh, const Eigen::VectorXd& u,
                                const MaterialParams& mat) {
    return FemContext(mesh, mat).internal_forces(u);
}

SpMat tangent_stiffness(const HexMesh& mesh, const Eigen::VectorXd& u,
                        const MaterialParams& mat) {
    FemContext ctx(mesh, mat);
    return ctx.tangent_stiffness(u);
}

double total_energy(const HexMesh& mesh, const Eigen::VectorXd& u,
                    const MaterialParams& mat) {
    return FemContext(mesh, mat).total_energy(u);
}

}  // namespace umesh
