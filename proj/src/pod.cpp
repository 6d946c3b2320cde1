#include "umesh/pod.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "umesh/binio.hpp"
#include "umesh/errors.hpp"
#include "umesh/field.hpp"

namespace umesh {

Truncation Truncation::by_modes(int r) {
    if (r < 1) throw ConfigError("mode count must be >= 1");
    Truncation t;
    t.modes = r;
    return t;
}

Truncation Truncation::by_energy(double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("energy fraction must be in (0, 1]");
    Truncation t;
    t.energy = eta;
    return t;
}

PodBasis build_basis(const Eigen::MatrixXd& snapshots, const Truncation& trunc) {
    if ((trunc.modes > 0) == (trunc.energy > 0.0))
        throw ConfigError("truncation must set exactly one of modes or energy");
    if (snapshots.rows() < 1 || snapshots.cols() < 1)
        throw ConfigError("snapshot matrix is empty");
    if (!snapshots.allFinite()) throw ConfigError("snapshot matrix has non-finite entries");

    Eigen::BDCSVD<Eigen::MatrixXd> svd(snapshots, Eigen::ComputeThinU);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv[0] <= 0.0) throw ConfigError("snapshots are all zero");

    // numerical rank; directions past it are rounding noise and would leak
    // into the Dirichlet rows
    const double cut = std::max(snapshots.rows(), snapshots.cols()) *
                       std::numeric_limits<double>::epsilon() * sv[0];
    int rank = 0;
    while (rank < sv.size() && sv[rank] > cut) ++rank;

    int r;
    bool clamped = false;
    if (trunc.modes > 0) {
        r = trunc.modes;
    } else {
        double total = 0.0;
        for (int i = 0; i < sv.size(); ++i) total += sv[i] * sv[i];
        double cum = 0.0;
        r = static_cast<int>(sv.size());
        for (int i = 0; i < sv.size(); ++i) {
            cum += sv[i] * sv[i];
            if (cum >= trunc.energy * total) {
                r = i + 1;
                break;
            }
        }
    }
    if (r > rank) {
        r = rank;
        clamped = true;
    }

    PodBasis basis;
    basis.phi = svd.matrixU().leftCols(r);
    basis.sigma = sv.head(r);
    basis.requested = trunc;
    basis.clamped = clamped;
    return basis;
}

Eigen::MatrixXd snapshot_matrix(const Dataset& ds, const Scenario& sc) {
    if (ds.scenario_digest != sc.digest)
        throw ConfigError("dataset was generated from a different scenario");
    if (ds.padded_dims != sc.pad.padded_dims)
        throw ConfigError("dataset padded dims do not match the scenario");

    std::vector<const Sample*> train;
    for (const Sample& s : ds.samples)
        if (!s.is_test()) train.push_back(&s);
    if (train.empty()) throw ConfigError("dataset has no training samples for snapshots");

    const int n = static_cast<int>(sc.mesh.dof_count());
    Eigen::MatrixXd snaps(n, static_cast<int>(train.size()));
    for (std::size_t j = 0; j < train.size(); ++j) {
        Eigen::VectorXd u = extract_field(train[j]->displacement, sc.mesh, sc.pad);
        for (int node : sc.mesh.dirichlet_nodes)
            for (int c = 0; c < 3; ++c)
                if (u[3 * node + c] != 0.0)
                    throw ConfigError("snapshot violates Dirichlet zeros at node " +
                                      std::to_string(node));
        snaps.col(static_cast<int>(j)) = u;
    }
    return snaps;
}

PodBasis build_basis_from_dataset(const Dataset& ds, const Scenario& sc,
                                  const Truncation& trunc) {
    PodBasis basis = build_basis(snapshot_matrix(ds, sc), trunc);
    basis.scenario_digest = ds.scenario_digest;
    // the SVD leaves ~1e-17 noise in rows that are exactly zero in every
    // snapshot; pin them so u = phi q satisfies the constraints exactly
    for (int node : sc.mesh.dirichlet_nodes)
        for (int c = 0; c < 3; ++c) basis.phi.row(3 * node + c).setZero();
    return basis;
}

NewtonResult reduced_newton_solve(const PodBasis& basis, FemContext& ctx,
                                  const Eigen::VectorXd& f_ext,
                                  const NewtonOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = ctx.ndof();
    const int r = basis.rank();
    if (basis.phi.rows() != n) throw ConfigError("basis ndof does not match the mesh");
    if (r < 1) throw ConfigError("basis has no modes");
    if (f_ext.size() != n) throw ConfigError("external force size mismatch");
    if (!(opts.initial_increment > 0.0 && opts.initial_increment <= 1.0))
        throw ConfigError("initial_increment must be in (0, 1]");

    const Eigen::MatrixXd& phi = basis.phi;
    const Eigen::VectorXd fr = phi.transpose() * f_ext;
    const double fnorm = fr.norm();

    NewtonResult out;
    SolveReport& rep = out.report;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(r);
    Eigen::VectorXd q_last = q;
    double lam_done = 0.0, step = opts.initial_increment;
    int halvings = 0;
    double best_rel = std::numeric_limits<double>::infinity();

    auto residual_vec = [&](const Eigen::VectorXd& qv, double lam) -> Eigen::VectorXd {
        return lam * fr - phi.transpose() * ctx.internal_forces(phi * qv);
    };

    while (lam_done < 1.0 - 1e-12) {
        const double lam = std::min(1.0, lam_done + step);
        const double scale = std::max(lam * fnorm, opts.force_floor);

        Eigen::VectorXd rv = residual_vec(q, lam);
        double res = rv.norm();
        double prev = res;
        int streak = 0;
        bool converged = res <= opts.newton_tol * scale;
        bool diverged = false;

        for (int it = 0; it < opts.max_newton_iters && !converged && !diverged; ++it) {
            // Dirichlet rows of phi are zero, so the projection performs the
            // same symmetric elimination as the full solver
            const SpMat& K = ctx.tangent_stiffness(phi * q);
            const Eigen::MatrixXd Kr = phi.transpose() * (K * phi);
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(Kr);
            Eigen::VectorXd dq;
            bool bad = ldlt.info() != Eigen::Success;
            if (!bad) {
                dq = ldlt.solve(rv);
                bad = !dq.allFinite();
            }
            if (bad) {
                if (lam_done == 0.0 && it == 0)
                    throw ConfigError(
                        "reduced tangent is singular at the reference state; "
                        "check the basis and dirichlet constraints");
                diverged = true;
                break;
            }
            q += dq;
            ++rep.newton_iterations;

            rv = residual_vec(q, lam);
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
            q_last = q;
            ++rep.load_increments;
            rep.final_residual = res / std::max(fnorm, opts.force_floor);
        } else {
            if (++halvings > opts.max_increment_halvings) {
                throw ConvergenceError(
                    "reduced newton solver failed at load fraction " + std::to_string(lam) +
                        " after " + std::to_string(halvings - 1) + " step halvings",
                    best_rel);
            }
            ++rep.increment_cutbacks;
            step *= 0.5;
            q = q_last;
        }
    }

    out.u = phi * q;
    rep.inverted_elements = ctx.has_inverted_elements(out.u);
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

double projection_error(const PodBasis& basis, const Eigen::VectorXd& u) {
    if (u.size() != basis.phi.rows()) throw ConfigError("displacement size mismatch");
    if (u.size() % 3 != 0) throw ConfigError("displacement size is not a dof vector");
    const Eigen::VectorXd d = u - basis.phi * (basis.phi.transpose() * u);
    return d.norm() / std::sqrt(static_cast<double>(u.size() / 3));
}

namespace {
constexpr char kBasisMagic[4] = {'U', 'M', 'P', 'B'};
constexpr std::uint32_t kBasisVersion = 1;
}  // namespace

void save_basis(const PodBasis& basis, const std::string& path) {
    if (basis.rank() < 1) throw ConfigError("refusing to save an empty basis");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_bytes(os, kBasisMagic, 4);
    write_pod(os, kBasisVersion);
    write_bytes(os, basis.scenario_digest.data(), basis.scenario_digest.size());
    write_pod(os, static_cast<std::uint32_t>(basis.phi.rows()));
    write_pod(os, static_cast<std::uint32_t>(basis.phi.cols()));
    write_bytes(os, basis.sigma.data(), sizeof(double) * basis.sigma.size());
    write_bytes(os, basis.phi.data(), sizeof(double) * basis.phi.size());
    os.flush();
    if (!os) throw FormatError("write to '" + path + "' failed");
}

PodBasis load_basis(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    expect_magic(is, kBasisMagic, "basis file");
    const auto version = read_pod<std::uint32_t>(is, "basis version");
    if (version != kBasisVersion)
        throw FormatError("unsupported basis version " + std::to_string(version));

    PodBasis basis;
    read_bytes(is, basis.scenario_digest.data(), basis.scenario_digest.size(),
               "scenario digest");
    const auto ndof = read_pod<std::uint32_t>(is, "basis ndof");
    const auto r = read_pod<std::uint32_t>(is, "basis mode count");
    if (ndof == 0 || ndof % 3 != 0) throw FormatError("basis ndof is not a dof count");
    if (r == 0 || r > ndof) throw FormatError("basis mode count out of range");

    basis.sigma.resize(r);
    read_bytes(is, basis.sigma.data(), sizeof(double) * r, "singular values");
    basis.phi.resize(ndof, r);
    read_bytes(is, basis.phi.data(), sizeof(double) * basis.phi.size(), "basis columns");
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after basis data");

    if (!basis.sigma.allFinite() || !basis.phi.allFinite())
        throw FormatError("basis has non-finite entries");
    for (int i = 0; i + 1 < basis.sigma.size(); ++i)
        if (basis.sigma[i] < basis.sigma[i + 1])
            throw FormatError("singular values are not non-increasing");
    if (basis.sigma[basis.sigma.size() - 1] < 0.0)
        throw FormatError("negative singular value");
    const Eigen::MatrixXd gram = basis.phi.transpose() * basis.phi;
    const double ortho =
        (gram - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff();
    if (ortho >= 1e-10) throw FormatError("basis columns are not orthonormal");

    basis.requested = Truncation::by_modes(static_cast<int>(r));
    return basis;
}

}  // namespace umesh
