#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <functional>
#include <vector>

#include "umesh/material.hpp"
#include "umesh/mesh.hpp"

namespace umesh {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using SpMat = Eigen::SparseMatrix<double>;

// ---------------------------------------------------------------------------
// Element kernels (8-node trilinear hexahedron, total-Lagrangian SVK).

struct QuadPoint {
    Vec3 xi;
    double weight;
};

/// 2x2x2 Gauss rule on [-1,1]^3; points at +-1/sqrt(3), unit weights.
const std::array<QuadPoint, 8>& gauss_2x2x2();

/// Shape-function gradients dN_a/dxi at a local point, reference node order.
std::array<Vec3, 8> shape_gradients_local(const Vec3& xi);

/// Per-quadrature-point reference data for one element: material gradients
/// g_a = J^{-T} dN_a/dxi and the integration factor w * det(J).
struct ElementGeometry {
    std::array<std::array<Vec3, 8>, 8> grad;  // [qp][node]
    std::array<double, 8> wdetj;              // [qp]
};

ElementGeometry element_geometry(const std::array<Vec3d, 8>& coords);

using ElemVec = Eigen::Matrix<double, 24, 1>;
using ElemMat = Eigen::Matrix<double, 24, 24>;

/// F = I + sum_a u_a (x) g_a at quadrature point qp.
Mat3 deformation_gradient(const ElementGeometry& geo, int qp, const ElemVec& u_elem);

/// E = (F^T F - I) / 2.
Mat3 green_lagrange(const Mat3& F);

/// W(E) = lambda/2 tr(E)^2 + mu tr(E^2).
double strain_energy_density(const Mat3& E, const MaterialParams& mat);

/// S = lambda tr(E) I + 2 mu E.
Mat3 pk2_stress(const Mat3& E, const MaterialParams& mat);

double element_energy(const ElementGeometry& geo, const ElemVec& u_elem,
                      const MaterialParams& mat);
ElemVec element_internal_force(const ElementGeometry& geo, const ElemVec& u_elem,
                               const MaterialParams& mat);
ElemMat element_stiffness(const ElementGeometry& geo, const ElemVec& u_elem,
                          const MaterialParams& mat);

// ---------------------------------------------------------------------------
// Assembly context. Holds per-mesh precomputed data so repeated assemblies
// reuse the sparsity pattern and shared element geometry (uniform spacing
// makes every element congruent). Not safe for concurrent use; clone per
// worker thread instead.

class FemContext {
  public:
    FemContext(const HexMesh& mesh, const MaterialParams& mat);

    const HexMesh& mesh() const { return *mesh_; }
    const MaterialParams& material() const { return mat_; }
    int ndof() const { return static_cast<int>(mesh_->dof_count()); }

    double total_energy(const Eigen::VectorXd& u) const;
    Eigen::VectorXd internal_forces(const Eigen::VectorXd& u) const;

    /// Assembles K(u) into internal storage and returns a reference valid
    /// until the next call. Row/col order is fixed by mesh numbering, so
    /// repeated assembly at the same state is bit-identical.
    const SpMat& tangent_stiffness(const Eigen::VectorXd& u);

    /// True if det(F) <= 0 at any quadrature point.
    bool has_inverted_elements(const Eigen::VectorXd& u) const;

  private:
    void gather(const Eigen::VectorXd& u, int elem, ElemVec& out) const;

    const HexMesh* mesh_;
    MaterialParams mat_;
    ElementGeometry geo_;              // shared by all elements
    SpMat pattern_;                    // compressed; values rewritten per assembly
    std::vector<int> slots_;           // element-local (24x24) -> value index
};

// ---------------------------------------------------------------------------
// Linear algebra.

/// Symmetric elimination of constrained dofs: zero rows and columns, unit
/// diagonal, zero right-hand side entries. Keeps the operator SPD.
void apply_dirichlet(SpMat& A, Eigen::VectorXd& rhs, const std::vector<int>& fixed_dofs);

enum class PcgStatus { Converged, MaxIterations, Breakdown };

struct PcgResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double rel_residual = 0.0;
    PcgStatus status = PcgStatus::Converged;
};

/// Jacobi-preconditioned conjugate gradients. Stops when
/// ||b - Ax|| <= tol * ||b||; breakdown reported when p^T A p <= 0.
/// max_iters <= 0 selects the default cap of 10 * n.
/// `on_iterate(k, x)` is invoked after each accepted update when provided.
PcgResult solve_pcg(const SpMat& A, const Eigen::VectorXd& b, double tol,
                    int max_iters = 0,
                    const std::function<void(int, const Eigen::VectorXd&)>& on_iterate = {});

// ---------------------------------------------------------------------------
// Newton solver with load continuation.

struct NewtonOptions {
    double newton_tol = 1e-6;        // relative residual target
    int max_newton_iters = 50;       // per load increment
    double cg_tol = 1e-8;
    int max_cg_iters = 0;            // 0 -> 10 * ndof
    double initial_increment = 1.0;  // first load step as a fraction of full load
    int max_increment_halvings = 6;  // smallest step 2^-6 of the initial one
    int divergence_streak = 3;       // residual increases before cutback
    double force_floor = 1e-12;      // convergence floor for tiny loads
};

struct SolveReport {
    int newton_iterations = 0;       // total across increments
    int load_increments = 0;         // increments advanced to completion
    int increment_cutbacks = 0;
    long cg_iterations = 0;
    double final_residual = 0.0;     // relative to final ||f_ext||
    double wall_time_s = 0.0;
    bool inverted_elements = false;  // at the converged state
    std::vector<double> residual_history;  // per accepted Newton iterate
};

struct NewtonResult {
    Eigen::VectorXd u;
    SolveReport report;
};

/// Solves r(u) = f_ext with Dirichlet dofs pinned to zero. Starts with a
/// single load increment; a diverging increment is retried at half the step
/// from the last converged state. Throws ConvergenceError (carrying the best
/// residual) once the step floor is exhausted, and ConfigError if the tangent
/// at u = 0 is singular, which indicates missing or inconsistent constraints.
NewtonResult newton_solve(FemContext& ctx, const Eigen::VectorXd& f_ext,
                          const NewtonOptions& opts = {});

// Convenience wrappers used by tests and one-shot callers; they build a
// temporary context internally.
Eigen::VectorXd internal_forces(const HexMesh& mesh, const Eigen::VectorXd& u,
                                const MaterialParams& mat);
SpMat tangent_stiffness(const HexMesh& mesh, const Eigen::VectorXd& u,
                        const MaterialParams& mat);
double total_energy(const HexMesh& mesh, const Eigen::VectorXd& u,
                    const MaterialParams& mat);

}  // namespace umesh
