#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "umesh/errors.hpp"
#include "umesh/fem.hpp"
#include "umesh/mesh.hpp"
#include "umesh/rng.hpp"

using namespace umesh;

namespace {

HexMesh box_mesh(Index3 dims, Vec3d spacing, const BoundarySpec& diri,
                 const BoundarySpec& neu) {
    return mesh_from_grid(build_grid(dims, spacing, {0, 0, 0}), diri, neu);
}

// Small two-element strip with clamped x=0 face, handy for derivative checks.
HexMesh tiny_mesh() {
    return box_mesh({3, 2, 2}, {0.3, 0.25, 0.4}, BoundarySpec::plane(0, 0),
                    BoundarySpec::plane(0, -1));
}

Eigen::VectorXd random_displacement(const HexMesh& m, double amp, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd u(m.dof_count());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(-amp, amp);
    return u;
}

// Independent small-strain stiffness via the classic Voigt B-matrix route
// (order xx, yy, zz, xy, yz, zx with engineering shear).
ElemMat linear_elastic_stiffness(const ElementGeometry& geo, const MaterialParams& m) {
    Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) D(i, j) = m.lame_lambda;
        D(i, i) += 2.0 * m.lame_mu;
        D(3 + i, 3 + i) = m.lame_mu;
    }
    ElemMat K = ElemMat::Zero();
    for (int q = 0; q < 8; ++q) {
        Eigen::Matrix<double, 6, 24> B = Eigen::Matrix<double, 6, 24>::Zero();
        for (int a = 0; a < 8; ++a) {
            const Vec3& g = geo.grad[q][a];
            B(0, 3 * a + 0) = g[0];
            B(1, 3 * a + 1) = g[1];
            B(2, 3 * a + 2) = g[2];
            B(3, 3 * a + 0) = g[1];
            B(3, 3 * a + 1) = g[0];
            B(4, 3 * a + 1) = g[2];
            B(4, 3 * a + 2) = g[1];
            B(5, 3 * a + 0) = g[2];
            B(5, 3 * a + 2) = g[0];
        }
        K += geo.wdetj[q] * B.transpose() * D * B;
    }
    return K;
}

}  // namespace

TEST_CASE("lame_constants frozen values and rejections") {
    // Y=500, nu=0.4 -> lambda = 5000/7, mu = 1250/7
    auto [l1, m1] = lame_constants(500.0, 0.4);
    CHECK(l1 == doctest::Approx(714.2857142857143).epsilon(1e-13));
    CHECK(m1 == doctest::Approx(178.57142857142858).epsilon(1e-13));
    // Y=5000, nu=0.48
    auto [l2, m2] = lame_constants(5000.0, 0.48);
    CHECK(l2 == doctest::Approx(40540.54054054054).epsilon(1e-13));
    CHECK(m2 == doctest::Approx(1689.1891891891892).epsilon(1e-13));

    CHECK_THROWS_AS(lame_constants(0.0, 0.3), ConfigError);
    CHECK_THROWS_AS(lame_constants(-5.0, 0.3), ConfigError);
    CHECK_THROWS_AS(lame_constants(100.0, 0.5), ConfigError);
    CHECK_THROWS_AS(lame_constants(100.0, 0.7), ConfigError);
    CHECK_THROWS_AS(lame_constants(100.0, -1.0), ConfigError);

    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    CHECK(mat.lame_lambda == l1);
    CHECK(mat.lame_mu == m1);
}

TEST_CASE("quadrature covers the element volume") {
    const auto& qps = gauss_2x2x2();
    const double g = 1.0 / std::sqrt(3.0);
    for (const auto& q : qps) {
        CHECK(q.weight == 1.0);
        for (int a = 0; a < 3; ++a) CHECK(std::abs(q.xi[a]) == doctest::Approx(g));
    }
    const std::array<Vec3d, 8> coords = {{{0, 0, 0},
                                          {0.3, 0, 0},
                                          {0.3, 0.25, 0},
                                          {0, 0.25, 0},
                                          {0, 0, 0.4},
                                          {0.3, 0, 0.4},
                                          {0.3, 0.25, 0.4},
                                          {0, 0.25, 0.4}}};
    const auto geo = element_geometry(coords);
    double vol = 0.0;
    for (int q = 0; q < 8; ++q) {
        // uniform box: det J = hx*hy*hz/8 at every point
        CHECK(geo.wdetj[q] == doctest::Approx(0.3 * 0.25 * 0.4 / 8.0).epsilon(1e-13));
        vol += geo.wdetj[q];
        Vec3 sum = Vec3::Zero();
        for (int a = 0; a < 8; ++a) sum += geo.grad[q][a];
        CHECK(sum.norm() < 1e-14);  // gradients of a partition of unity
    }
    CHECK(vol == doctest::Approx(0.3 * 0.25 * 0.4).epsilon(1e-13));
}

TEST_CASE("deformation gradient reproduces affine fields exactly") {
    const std::array<Vec3d, 8> coords = {{{0, 0, 0},
                                          {0.7, 0, 0},
                                          {0.7, 0.3, 0},
                                          {0, 0.3, 0},
                                          {0, 0, 0.5},
                                          {0.7, 0, 0.5},
                                          {0.7, 0.3, 0.5},
                                          {0, 0.3, 0.5}}};
    const auto geo = element_geometry(coords);
    Mat3 A;
    A << 0.02, -0.01, 0.03, 0.05, 0.04, -0.02, 0.01, 0.00, -0.03;
    ElemVec u;
    for (int a = 0; a < 8; ++a) {
        const Vec3 X(coords[a][0], coords[a][1], coords[a][2]);
        u.segment<3>(3 * a) = A * X;
    }
    for (int q = 0; q < 8; ++q) {
        const Mat3 F = deformation_gradient(geo, q, u);
        CHECK((F - (Mat3::Identity() + A)).norm() < 1e-14);
    }
}

TEST_CASE("SVK kinematics and stress, frozen uniaxial case") {
    // F = diag(1.1, 1, 1), Y=500, nu=0.4: E = diag(0.105,0,0),
    // S = diag(112.5, 75, 75), W = 5.90625 (exact rationals)
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    Mat3 F = Mat3::Identity();
    F(0, 0) = 1.1;
    const Mat3 E = green_lagrange(F);
    CHECK(E(0, 0) == doctest::Approx(0.105).epsilon(1e-14));
    CHECK(E.norm() == doctest::Approx(0.105).epsilon(1e-14));
    const Mat3 S = pk2_stress(E, mat);
    CHECK(S(0, 0) == doctest::Approx(112.5).epsilon(1e-13));
    CHECK(S(1, 1) == doctest::Approx(75.0).epsilon(1e-13));
    CHECK(S(2, 2) == doctest::Approx(75.0).epsilon(1e-13));
    CHECK(std::abs(S(0, 1)) + std::abs(S(0, 2)) + std::abs(S(1, 2)) < 1e-14);
    CHECK(strain_energy_density(E, mat) == doctest::Approx(5.90625).epsilon(1e-13));
}

TEST_CASE("pk2 stress equals the energy gradient (finite differences)") {
    const auto mat = MaterialParams::from_young_poisson(2500.0, 0.33);
    Rng rng(7);
    Mat3 E;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) E(i, j) = rng.uniform(-0.1, 0.1);
    E = (0.5 * (E + E.transpose())).eval();
    const Mat3 S = pk2_stress(E, mat);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            Mat3 Ep = E, Em = E;
            Ep(i, j) += h;
            Em(i, j) -= h;
            const double fd =
                (strain_energy_density(Ep, mat) - strain_energy_density(Em, mat)) /
                (2.0 * h);
            CHECK(fd == doctest::Approx(S(i, j)).epsilon(1e-6).scale(mat.lame_mu));
        }
}

TEST_CASE("internal forces equal the energy gradient (finite differences)") {
    const HexMesh mesh = tiny_mesh();
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    FemContext ctx(mesh, mat);
    Eigen::VectorXd u = random_displacement(mesh, 0.04, 11);

    const Eigen::VectorXd r = ctx.internal_forces(u);
    const double h = 1e-6;
    const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
    for (int i = 0; i < u.size(); ++i) {
        Eigen::VectorXd up = u, um = u;
        up[i] += h;
        um[i] -= h;
        const double fd = (ctx.total_energy(up) - ctx.total_energy(um)) / (2.0 * h);
        CHECK(std::abs(fd - r[i]) <= 1e-6 * scale);
    }
}

TEST_CASE("tangent stiffness equals the force jacobian (finite differences)") {
    const HexMesh mesh = tiny_mesh();
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    FemContext ctx(mesh, mat);
    const Eigen::VectorXd u = random_displacement(mesh, 0.04, 23);

    const SpMat K = ctx.tangent_stiffness(u);
    const Eigen::MatrixXd Kd(K);
    CHECK((Kd - Kd.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * Kd.cwiseAbs().maxCoeff());

    const double h = 1e-6;
    for (std::uint64_t s : {31ull, 32ull, 33ull}) {
        const Eigen::VectorXd d = random_displacement(mesh, 1.0, s);
        const Eigen::VectorXd fd =
            (ctx.internal_forces(u + h * d) - ctx.internal_forces(u - h * d)) / (2.0 * h);
        const Eigen::VectorXd Kdlt = Kd * d;
        CHECK((fd - Kdlt).norm() <= 1e-5 * std::max(1.0, Kdlt.norm()));
    }
}

TEST_CASE("tangent at rest matches small-strain elasticity") {
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    const std::array<Vec3d, 8> coords = {{{0, 0, 0},
                                          {0.3, 0, 0},
                                          {0.3, 0.25, 0},
                                          {0, 0.25, 0},
                                          {0, 0, 0.4},
                                          {0.3, 0, 0.4},
                                          {0.3, 0.25, 0.4},
                                          {0, 0.25, 0.4}}};
    const auto geo = element_geometry(coords);
    const ElemMat K_svk = element_stiffness(geo, ElemVec::Zero(), mat);
    const ElemMat K_lin = linear_elastic_stiffness(geo, mat);
    CHECK((K_svk - K_lin).cwiseAbs().maxCoeff() <=
          1e-12 * K_lin.cwiseAbs().maxCoeff());
}

TEST_CASE("rigid translation stores no energy and no force") {
    const HexMesh mesh = tiny_mesh();
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    FemContext ctx(mesh, mat);
    Eigen::VectorXd u(mesh.dof_count());
    for (int n = 0; n < mesh.node_count(); ++n) {
        u[3 * n + 0] = 0.7;
        u[3 * n + 1] = -1.3;
        u[3 * n + 2] = 2.9;
    }
    CHECK(std::abs(ctx.total_energy(u)) <= 1e-10);
    CHECK(ctx.internal_forces(u).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK_FALSE(ctx.has_inverted_elements(u));
}

TEST_CASE("apply_dirichlet eliminates rows and columns symmetrically") {
    const HexMesh mesh = tiny_mesh();
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    FemContext ctx(mesh, mat);
    SpMat K = ctx.tangent_stiffness(Eigen::VectorXd::Zero(mesh.dof_count()));
    Eigen::VectorXd rhs = random_displacement(mesh, 1.0, 5);
    const auto fixed = mesh.dirichlet_dofs();
    apply_dirichlet(K, rhs, fixed);

    const Eigen::MatrixXd Kd(K);
    CHECK((Kd - Kd.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * Kd.cwiseAbs().maxCoeff());
    for (int d : fixed) {
        CHECK(rhs[d] == 0.0);
        for (int c = 0; c < Kd.cols(); ++c)
            CHECK(Kd(d, c) == ((c == d) ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(apply_dirichlet(K, rhs, std::vector<int>{-1}), ConfigError);
}

TEST_CASE("pcg matches a dense factorization on an SPD system") {
    const HexMesh mesh = tiny_mesh();
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    FemContext ctx(mesh, mat);
    SpMat K = ctx.tangent_stiffness(Eigen::VectorXd::Zero(mesh.dof_count()));
    Eigen::VectorXd b = random_displacement(mesh, 1.0, 17);
    apply_dirichlet(K, b, mesh.dirichlet_dofs());

    const Eigen::VectorXd x_ref = Eigen::MatrixXd(K).ldlt().solve(b);
    const auto res = solve_pcg(K, b, 1e-12);
    CHECK(res.status == PcgStatus::Converged);
    CHECK(res.rel_residual <= 1e-12);
    CHECK((res.x - x_ref).norm() <= 1e-8 * x_ref.norm());

    // the CG error is monotone in the A-norm
    std::vector<double> anorm;
    solve_pcg(K, b, 1e-12, 0, [&](int, const Eigen::VectorXd& xk) {
        const Eigen::VectorXd e = xk - x_ref;
        anorm.push_back(std::sqrt(e.dot(K * e)));
    });
    REQUIRE(anorm.size() >= 2);
    for (std::size_t i = 1; i < anorm.size(); ++i)
        CHECK(anorm[i] <= anorm[i - 1] * (1.0 + 1e-10) + 1e-14);
}

TEST_CASE("pcg reports breakdown and iteration caps") {
    SpMat A(2, 2);
    A.insert(0, 0) = 1.0;
    A.insert(0, 1) = 2.0;
    A.insert(1, 0) = 2.0;
    A.insert(1, 1) = 1.0;  // indefinite, positive diagonal
    A.makeCompressed();
    Eigen::Vector2d b(1.0, -1.0);
    const auto res = solve_pcg(A, b, 1e-10);
    CHECK(res.status == PcgStatus::Breakdown);

    SpMat D(2, 2);
    D.insert(0, 0) = 1.0;
    D.insert(1, 1) = -1.0;  // nonpositive diagonal rejected up front
    D.makeCompressed();
    CHECK(solve_pcg(D, b, 1e-10).status == PcgStatus::Breakdown);

    const HexMesh mesh = tiny_mesh();
    FemContext ctx(mesh, MaterialParams::from_young_poisson(500.0, 0.4));
    SpMat K = ctx.tangent_stiffness(Eigen::VectorXd::Zero(mesh.dof_count()));
    Eigen::VectorXd rhs = random_displacement(mesh, 1.0, 3);
    apply_dirichlet(K, rhs, mesh.dirichlet_dofs());
    const auto capped = solve_pcg(K, rhs, 1e-16, 3);
    CHECK(capped.status == PcgStatus::MaxIterations);
    CHECK(capped.iterations == 3);
    CHECK(capped.rel_residual > 0.0);

    const auto zero = solve_pcg(K, Eigen::VectorXd::Zero(rhs.size()), 1e-10);
    CHECK(zero.status == PcgStatus::Converged);
    CHECK(zero.iterations == 0);
    CHECK(zero.x.norm() == 0.0);
}

namespace {

Eigen::VectorXd tip_load(const HexMesh& mesh, double total, int axis) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.dof_count());
    const auto& tips = mesh.neumann_candidates;
    for (int n : tips) f[3 * n + axis] = total / static_cast<double>(tips.size());
    return f;
}

}  // namespace

TEST_CASE("newton converges instantly for zero load") {
    const HexMesh mesh = tiny_mesh();
    FemContext ctx(mesh, MaterialParams::from_young_poisson(500.0, 0.4));
    const auto out = newton_solve(ctx, Eigen::VectorXd::Zero(mesh.dof_count()));
    CHECK(out.u.norm() == 0.0);
    CHECK(out.report.newton_iterations == 0);
    CHECK(out.report.load_increments == 1);
    CHECK(out.report.final_residual == 0.0);
}

TEST_CASE("newton at small load agrees with the linearized solve") {
    const HexMesh mesh = tiny_mesh();
    FemContext ctx(mesh, MaterialParams::from_young_poisson(500.0, 0.4));
    const Eigen::VectorXd f = tip_load(mesh, 1e-4, 2);

    NewtonOptions opts;  // default tolerance; tighter targets sink below the
                         // double-precision noise floor of this tiny load
    const auto out = newton_solve(ctx, f, opts);

    SpMat K = ctx.tangent_stiffness(Eigen::VectorXd::Zero(mesh.dof_count()));
    Eigen::VectorXd rhs = f;
    apply_dirichlet(K, rhs, mesh.dirichlet_dofs());
    const Eigen::VectorXd u_lin = Eigen::MatrixXd(K).ldlt().solve(rhs);

    CHECK((out.u - u_lin).norm() <= 1e-2 * u_lin.norm());
    CHECK(out.report.final_residual <= opts.newton_tol);
    for (int n : mesh.dirichlet_nodes)
        for (int c = 0; c < 3; ++c) CHECK(out.u[3 * n + c] == 0.0);
}

TEST_CASE("newton result is invariant to the continuation path") {
    const HexMesh mesh = tiny_mesh();
    FemContext ctx(mesh, MaterialParams::from_young_poisson(500.0, 0.4));
    const Eigen::VectorXd f = tip_load(mesh, 0.5, 2);

    NewtonOptions one;
    one.newton_tol = 1e-10;
    const auto full = newton_solve(ctx, f, one);
    CHECK(full.report.load_increments >= 1);

    NewtonOptions quarters = one;
    quarters.initial_increment = 0.25;
    const auto stepped = newton_solve(ctx, f, quarters);
    CHECK(stepped.report.load_increments >= 4);

    CHECK((full.u - stepped.u).norm() <= 1e-8 * full.u.norm());
}

TEST_CASE("newton failure carries the best residual") {
    const HexMesh mesh = tiny_mesh();
    FemContext ctx(mesh, MaterialParams::from_young_poisson(500.0, 0.4));
    const Eigen::VectorXd f = tip_load(mesh, 0.5, 2);

    NewtonOptions opts;
    opts.newton_tol = 1e-14;  // unreachable in one iteration
    opts.max_newton_iters = 1;
    opts.max_increment_halvings = 0;
    CHECK_THROWS_AS(newton_solve(ctx, f, opts), ConvergenceError);
    try {
        newton_solve(ctx, f, opts);
    } catch (const ConvergenceError& e) {
        CHECK(e.residual() > 0.0);
        CHECK(std::isfinite(e.residual()));
    }

    CHECK_THROWS_AS(newton_solve(ctx, Eigen::VectorXd::Zero(5)), ConfigError);
}

TEST_CASE("cantilever tip deflection approaches beam theory") {
    // 4 m x 1 m x 1 m cantilever, Y=500 Pa, nu=0.4, tip load 0.1 N downward:
    // Euler-Bernoulli predicts PL^3/(3YI) = 0.0512 m at the tip.
    const double EB = 0.0512;
    const auto mat = MaterialParams::from_young_poisson(500.0, 0.4);
    const HexMesh mesh = box_mesh({16, 4, 4}, {4.0 / 15, 1.0 / 3, 1.0 / 3},
                                  BoundarySpec::plane(0, 0), BoundarySpec::plane(0, -1));
    FemContext ctx(mesh, mat);
    const Eigen::VectorXd f = tip_load(mesh, -0.1, 2);
    const auto out = newton_solve(ctx, f);

    double mean_tip = 0.0;
    for (int n : mesh.neumann_candidates) mean_tip += out.u[3 * n + 2];
    mean_tip /= static_cast<double>(mesh.neumann_candidates.size());
    CHECK(std::abs(-mean_tip - EB) <= 0.20 * EB);
}
