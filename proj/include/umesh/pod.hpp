#pragma once

#include <Eigen/Dense>
#include <string>

#include "umesh/dataset.hpp"
#include "umesh/fem.hpp"

namespace umesh {

/// Mode-count or energy-fraction truncation of a snapshot SVD. Exactly one
/// selector is active.
struct Truncation {
    int modes = 0;        // > 0: keep that many modes
    double energy = 0.0;  // in (0,1]: smallest r with cumulative sigma^2 >= energy

    static Truncation by_modes(int r);
    static Truncation by_energy(double eta);
};

struct PodBasis {
    Eigen::MatrixXd phi;    // ndof x r, orthonormal columns
    Eigen::VectorXd sigma;  // non-increasing, one per kept mode
    Sha256 scenario_digest{};
    Truncation requested;
    bool clamped = false;  // truncation asked for more modes than the rank

    int rank() const { return static_cast<int>(phi.cols()); }
};

/// Thin SVD of the snapshot columns, truncated. Modes beyond the numerical
/// rank are never kept: their directions are rounding noise, and dropping
/// them keeps the Dirichlet rows of phi at exact zero.
PodBasis build_basis(const Eigen::MatrixXd& snapshots, const Truncation& trunc);

/// Training-split displacement vectors of the dataset, one column per sample,
/// in dataset order. Validates the Dirichlet-zero column invariant.
Eigen::MatrixXd snapshot_matrix(const Dataset& ds, const Scenario& sc);

/// build_basis on snapshot_matrix with the scenario digest bound in.
PodBasis build_basis_from_dataset(const Dataset& ds, const Scenario& sc,
                                  const Truncation& trunc);

/// Galerkin-reduced Newton solve: iterates on q in R^r with the dense tangent
/// phi^T K(phi q) phi and residual phi^T (lambda f - r(phi q)), under the same
/// load continuation and non-convergence semantics as newton_solve. Returns
/// the full nodal field u = phi q.
NewtonResult reduced_newton_solve(const PodBasis& basis, FemContext& ctx,
                                  const Eigen::VectorXd& f_ext,
                                  const NewtonOptions& opts = {});

/// || u - phi phi^T u || / sqrt(n_nodes).
double projection_error(const PodBasis& basis, const Eigen::VectorXd& u);

void save_basis(const PodBasis& basis, const std::string& path);
PodBasis load_basis(const std::string& path);

}  // namespace umesh
