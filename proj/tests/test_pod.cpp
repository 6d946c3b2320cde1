#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "umesh/dataset.hpp"
#include "umesh/errors.hpp"
#include "umesh/fem.hpp"
#include "umesh/field.hpp"
#include "umesh/pod.hpp"
#include "umesh/rng.hpp"
#include "umesh/scenario.hpp"

using namespace umesh;

namespace {

// one active cell, face x=0 clamped, face x=max loadable: 24 dofs, 12 free
const char* kCellScenario = R"({
  "dims": [2, 2, 2],
  "spacing": [0.5, 0.5, 0.5],
  "dirichlet": {"plane": "x=0"},
  "neumann": {"plane": "x=max"},
  "young_modulus": 500.0,
  "poisson_ratio": 0.4,
  "pad_steps": 1
})";

// short cantilever strip used for dataset-backed tests
const char* kStripScenario = R"({
  "dims": [5, 3, 3],
  "spacing": [0.25, 0.25, 0.25],
  "dirichlet": {"plane": "x=0"},
  "neumann": {"plane": "x=max"},
  "young_modulus": 500.0,
  "poisson_ratio": 0.4,
  "pad_steps": 2
})";

Eigen::MatrixXd random_snapshots(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd a(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) a(i, j) = rng.uniform(-1.0, 1.0);
    return a;
}

std::filesystem::path temp_file(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("truncation selectors validate their arguments") {
    CHECK_THROWS_AS(Truncation::by_modes(0), ConfigError);
    CHECK_THROWS_AS(Truncation::by_modes(-2), ConfigError);
    CHECK_THROWS_AS(Truncation::by_energy(0.0), ConfigError);
    CHECK_THROWS_AS(Truncation::by_energy(-0.5), ConfigError);
    CHECK_THROWS_AS(Truncation::by_energy(1.0001), ConfigError);
    CHECK(Truncation::by_energy(1.0).energy == 1.0);
    CHECK(Truncation::by_modes(3).modes == 3);

    const Eigen::MatrixXd a = random_snapshots(6, 2, 1);
    CHECK_THROWS_AS(build_basis(a, Truncation{}), ConfigError);
    Truncation both;
    both.modes = 1;
    both.energy = 0.5;
    CHECK_THROWS_AS(build_basis(a, both), ConfigError);
}

TEST_CASE("build_basis rejects degenerate snapshot matrices") {
    CHECK_THROWS_AS(build_basis(Eigen::MatrixXd(), Truncation::by_modes(1)), ConfigError);
    CHECK_THROWS_AS(build_basis(Eigen::MatrixXd::Zero(5, 3), Truncation::by_modes(1)),
                    ConfigError);
    Eigen::MatrixXd bad = random_snapshots(4, 2, 2);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(build_basis(bad, Truncation::by_modes(1)), ConfigError);
}

TEST_CASE("identical snapshots give the normalized vector as the single mode") {
    Rng rng(7);
    Eigen::VectorXd v(9);
    for (int i = 0; i < 9; ++i) v[i] = rng.uniform(-2.0, 2.0);
    v[3] = 0.0;  // zero entries must survive
    Eigen::MatrixXd snaps(9, 5);
    for (int j = 0; j < 5; ++j) snaps.col(j) = v;

    const PodBasis b = build_basis(snaps, Truncation::by_energy(1.0));
    REQUIRE(b.rank() == 1);
    CHECK(b.sigma[0] == doctest::Approx(v.norm() * std::sqrt(5.0)).epsilon(1e-12));
    const double align = b.phi.col(0).dot(v / v.norm());
    CHECK(std::abs(std::abs(align) - 1.0) < 1e-12);

    // asking for more modes than the rank clamps and flags it
    const PodBasis c = build_basis(snaps, Truncation::by_modes(4));
    CHECK(c.rank() == 1);
    CHECK(c.clamped);
    CHECK_FALSE(b.clamped);
}

TEST_CASE("orthogonal snapshot pair spans its own plane with equal weights") {
    Eigen::MatrixXd snaps = Eigen::MatrixXd::Zero(6, 2);
    snaps(0, 0) = 1.5;
    snaps(2, 1) = 1.5;
    const PodBasis b = build_basis(snaps, Truncation::by_modes(2));
    REQUIRE(b.rank() == 2);
    CHECK(b.sigma[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(b.sigma[1] == doctest::Approx(1.5).epsilon(1e-12));
    const Eigen::MatrixXd proj = b.phi * b.phi.transpose();
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(6, 6);
    expect(0, 0) = 1.0;
    expect(2, 2) = 1.0;
    CHECK((proj - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("thin SVD matches a Gram-matrix eigendecomposition oracle") {
    const Eigen::MatrixXd a = random_snapshots(100, 20, 33);
    const PodBasis b = build_basis(a, Truncation::by_modes(20));
    REQUIRE(b.rank() == 20);

    // independent route: eigenvalues of A^T A give sigma^2 and right vectors,
    // left vectors follow from u_i = A v_i / sigma_i
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a.transpose() * a);
    REQUIRE(eig.info() == Eigen::Success);
    for (int i = 0; i < 20; ++i) {
        const double sig = std::sqrt(eig.eigenvalues()[19 - i]);
        CHECK(std::abs(b.sigma[i] - sig) < 1e-8 * b.sigma[0]);
        const Eigen::VectorXd u = a * eig.eigenvectors().col(19 - i) / sig;
        const double s = u.dot(b.phi.col(i)) < 0 ? -1.0 : 1.0;
        CHECK((b.phi.col(i) - s * u).norm() < 1e-7);
    }
    CHECK((b.phi.transpose() * b.phi - Eigen::MatrixXd::Identity(20, 20))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
}

TEST_CASE("energy truncation picks the smallest r reaching the fraction") {
    // plant singular values 4, 2, 1, 0.5 via orthonormal factors
    const Eigen::MatrixXd lq =
        Eigen::HouseholderQR<Eigen::MatrixXd>(random_snapshots(10, 4, 8))
            .householderQ() *
        Eigen::MatrixXd::Identity(10, 4);
    const Eigen::MatrixXd rq =
        Eigen::HouseholderQR<Eigen::MatrixXd>(random_snapshots(7, 4, 9))
            .householderQ() *
        Eigen::MatrixXd::Identity(7, 4);
    Eigen::VectorXd sv(4);
    sv << 4.0, 2.0, 1.0, 0.5;
    const Eigen::MatrixXd a = lq * sv.asDiagonal() * rq.transpose();

    // cumulative energy fractions: 0.7529, 0.9412, 0.9882, 1.0
    CHECK(build_basis(a, Truncation::by_energy(0.75)).rank() == 1);
    CHECK(build_basis(a, Truncation::by_energy(0.76)).rank() == 2);
    CHECK(build_basis(a, Truncation::by_energy(0.95)).rank() == 3);
    CHECK(build_basis(a, Truncation::by_energy(1.0)).rank() == 4);
    const PodBasis two = build_basis(a, Truncation::by_modes(2));
    CHECK(two.sigma[0] == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(two.sigma[1] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("orthonormality holds for every truncation of a random matrix") {
    const Eigen::MatrixXd a = random_snapshots(60, 25, 44);
    for (const Truncation& t :
         {Truncation::by_modes(5), Truncation::by_modes(25), Truncation::by_energy(0.9),
          Truncation::by_energy(1.0)}) {
        const PodBasis b = build_basis(a, t);
        const int r = b.rank();
        const double ortho =
            (b.phi.transpose() * b.phi - Eigen::MatrixXd::Identity(r, r))
                .cwiseAbs()
                .maxCoeff();
        CHECK(ortho < 1e-10);
    }
}

TEST_CASE("projection error is zero in span, full out of span, monotone in r") {
    const Eigen::MatrixXd a = random_snapshots(12, 6, 55);  // 12 dofs = 4 nodes
    const PodBasis full = build_basis(a, Truncation::by_modes(6));
    REQUIRE(full.rank() == 6);

    Eigen::VectorXd in_span = full.phi * Eigen::VectorXd::LinSpaced(6, 1.0, 2.0);
    CHECK(projection_error(full, in_span) < 1e-12);

    // complement direction: orthogonalize a random vector against the basis
    Rng rng(56);
    Eigen::VectorXd w(12);
    for (int i = 0; i < 12; ++i) w[i] = rng.uniform(-1.0, 1.0);
    w -= full.phi * (full.phi.transpose() * w);
    REQUIRE(w.norm() > 1e-6);
    CHECK(projection_error(full, w) ==
          doctest::Approx(w.norm() / std::sqrt(4.0)).epsilon(1e-10));

    Eigen::VectorXd u(12);
    for (int i = 0; i < 12; ++i) u[i] = rng.uniform(-1.0, 1.0);
    double prev = std::numeric_limits<double>::infinity();
    for (int r = 1; r <= 6; ++r) {
        PodBasis sub;  // nested truncations of the same SVD
        sub.phi = full.phi.leftCols(r);
        sub.sigma = full.sigma.head(r);
        const double e = projection_error(sub, u);
        CHECK(e <= prev + 1e-12);
        prev = e;
    }

    CHECK_THROWS_AS(projection_error(full, Eigen::VectorXd::Zero(9)), ConfigError);
}

TEST_CASE("snapshot matrix gathers train columns and enforces Dirichlet zeros") {
    const Scenario sc = parse_scenario(kStripScenario, ".");
    const int n = static_cast<int>(sc.mesh.dof_count());

    Rng rng(61);
    Dataset ds;
    ds.scenario_digest = sc.digest;
    ds.padded_dims = sc.pad.padded_dims;
    std::vector<Eigen::VectorXd> fields;
    for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd u(n);
        for (int i = 0; i < n; ++i) u[i] = rng.uniform(-0.1, 0.1);
        for (int node : sc.mesh.dirichlet_nodes)
            for (int c = 0; c < 3; ++c) u[3 * node + c] = 0.0;
        fields.push_back(u);
        Sample s;
        s.flags = (j == 2) ? 1u : 0u;  // one test sample, must be excluded
        s.force = FieldTensor(sc.pad.padded_dims);
        s.displacement = embed_field(u, sc.mesh, sc.pad);
        s.meta = "{}";
        ds.samples.push_back(std::move(s));
    }

    const Eigen::MatrixXd snaps = snapshot_matrix(ds, sc);
    REQUIRE(snaps.cols() == 3);
    REQUIRE(snaps.rows() == n);
    int col = 0;
    for (int j = 0; j < 4; ++j) {
        if (j == 2) continue;
        // float32 storage round-trips through the field tensor
        const Eigen::VectorXd back = snaps.col(col++);
        for (int i = 0; i < n; ++i)
            CHECK(back[i] == static_cast<double>(static_cast<float>(fields[j][i])));
    }

    const PodBasis b = build_basis_from_dataset(ds, sc, Truncation::by_modes(3));
    CHECK(b.scenario_digest == sc.digest);
    CHECK(b.rank() == 3);

    SUBCASE("a nonzero value at a clamped node is rejected") {
        Dataset bad = ds;
        const int node = sc.mesh.dirichlet_nodes.front();
        Eigen::VectorXd u = fields[0];
        u[3 * node + 1] = 1e-5;
        bad.samples[0].displacement = embed_field(u, sc.mesh, sc.pad);
        CHECK_THROWS_AS(snapshot_matrix(bad, sc), ConfigError);
    }
    SUBCASE("digest and dims mismatches are rejected") {
        Dataset bad = ds;
        bad.scenario_digest[0] ^= 0xff;
        CHECK_THROWS_AS(snapshot_matrix(bad, sc), ConfigError);
        Dataset bad2 = ds;
        bad2.scenario_digest = sc.digest;
        bad2.padded_dims = {1, 1, 1};
        CHECK_THROWS_AS(snapshot_matrix(bad2, sc), ConfigError);
    }
    SUBCASE("a dataset with no training samples is rejected") {
        Dataset bad = ds;
        for (auto& s : bad.samples) s.flags = 1u;
        CHECK_THROWS_AS(snapshot_matrix(bad, sc), ConfigError);
    }
}

TEST_CASE("full-rank reduced solve reproduces the full Newton solve") {
    const Scenario sc = parse_scenario(kCellScenario, ".");
    const int n = static_cast<int>(sc.mesh.dof_count());
    REQUIRE(n == 24);

    // synthetic snapshots spanning the whole free subspace (12 dofs)
    Eigen::MatrixXd snaps = random_snapshots(n, 18, 71);
    for (int node : sc.mesh.dirichlet_nodes)
        for (int c = 0; c < 3; ++c) snaps.row(3 * node + c).setZero();
    const PodBasis basis = build_basis(snaps, Truncation::by_modes(12));
    REQUIRE(basis.rank() == 12);
    CHECK_FALSE(basis.clamped);

    ForceSpec spec;
    spec.region = {sc.mesh.neumann_candidates.front()};
    spec.direction = {0.0, 0.0, -1.0};
    spec.magnitude = 2.0;
    FemContext ctx(sc.mesh, sc.material);
    const Eigen::VectorXd f = force_vector(sc.mesh, {spec});

    NewtonOptions opts = sc.solver;
    opts.newton_tol = 1e-10;
    opts.cg_tol = 1e-12;
    const NewtonResult full = newton_solve(ctx, f, opts);
    const NewtonResult red = reduced_newton_solve(basis, ctx, f, opts);

    const double rel = (red.u - full.u).norm() / full.u.norm();
    MESSAGE("full-rank reduced vs full: rel ", rel, ", |u| ", full.u.norm());
    CHECK(full.u.norm() > 1e-4);  // the load actually deforms the cell
    CHECK(rel < 1e-6);
    CHECK(red.report.newton_iterations >= 1);
    CHECK(red.report.load_increments >= 1);
}

TEST_CASE("a basis holding the exact solution recovers it with one mode") {
    const Scenario sc = parse_scenario(kCellScenario, ".");
    ForceSpec spec;
    spec.region = {sc.mesh.neumann_candidates.back()};
    spec.direction = {0.0, -1.0, 0.0};
    spec.magnitude = 1.5;
    FemContext ctx(sc.mesh, sc.material);
    const Eigen::VectorXd f = force_vector(sc.mesh, {spec});

    NewtonOptions opts = sc.solver;
    opts.newton_tol = 1e-10;
    opts.cg_tol = 1e-12;
    const NewtonResult full = newton_solve(ctx, f, opts);

    Eigen::MatrixXd snaps(full.u.size(), 1);
    snaps.col(0) = full.u;
    const PodBasis basis = build_basis(snaps, Truncation::by_modes(1));
    const NewtonResult red = reduced_newton_solve(basis, ctx, f, opts);
    CHECK((red.u - full.u).norm() / full.u.norm() < 1e-6);
}

TEST_CASE("reduced solve handles zero force and validates inputs") {
    const Scenario sc = parse_scenario(kCellScenario, ".");
    FemContext ctx(sc.mesh, sc.material);
    const int n = ctx.ndof();
    Eigen::MatrixXd snaps = random_snapshots(n, 6, 81);
    for (int node : sc.mesh.dirichlet_nodes)
        for (int c = 0; c < 3; ++c) snaps.row(3 * node + c).setZero();
    const PodBasis basis = build_basis(snaps, Truncation::by_modes(3));

    const NewtonResult red = reduced_newton_solve(basis, ctx, Eigen::VectorXd::Zero(n));
    CHECK(red.u.norm() == 0.0);
    CHECK(red.report.newton_iterations == 0);

    CHECK_THROWS_AS(reduced_newton_solve(basis, ctx, Eigen::VectorXd::Zero(n - 3)),
                    ConfigError);
    PodBasis wrong = basis;
    wrong.phi = basis.phi.topRows(n - 3);
    CHECK_THROWS_AS(reduced_newton_solve(wrong, ctx, Eigen::VectorXd::Zero(n)),
                    ConfigError);
}

TEST_CASE("basis file round-trips bit-exactly and rejects corruption") {
    const Eigen::MatrixXd a = random_snapshots(24, 7, 91);
    PodBasis b = build_basis(a, Truncation::by_modes(5));
    for (std::size_t i = 0; i < b.scenario_digest.size(); ++i)
        b.scenario_digest[i] = static_cast<std::uint8_t>(3 * i + 1);

    const auto path = temp_file("umesh_pod_roundtrip.umpb");
    save_basis(b, path.string());

    const auto size = std::filesystem::file_size(path);
    CHECK(size == 4 + 4 + 32 + 4 + 4 + 8ull * 5 + 8ull * 24 * 5);

    const PodBasis r = load_basis(path.string());
    CHECK(r.scenario_digest == b.scenario_digest);
    REQUIRE(r.rank() == 5);
    CHECK(r.sigma == b.sigma);
    CHECK(r.phi == b.phi);

    SUBCASE("truncated file") {
        auto bytes = [&] {
            std::ifstream is(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(is),
                               std::istreambuf_iterator<char>());
        }();
        const auto cut = temp_file("umesh_pod_cut.umpb");
        std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
        CHECK_THROWS_AS(load_basis(cut.string()), FormatError);
        const auto grown = temp_file("umesh_pod_grown.umpb");
        std::ofstream(grown, std::ios::binary) << bytes << "zz";
        CHECK_THROWS_AS(load_basis(grown.string()), FormatError);
    }
    SUBCASE("corrupt column data breaks orthonormality") {
        auto bytes = [&] {
            std::ifstream is(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(is),
                               std::istreambuf_iterator<char>());
        }();
        bytes[bytes.size() - 2] = static_cast<char>(0x7f);  // exponent of a phi entry
        const auto bad = temp_file("umesh_pod_bad.umpb");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(load_basis(bad.string()), FormatError);
    }
    SUBCASE("bad magic and version") {
        auto bytes = [&] {
            std::ifstream is(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(is),
                               std::istreambuf_iterator<char>());
        }();
        std::string m = bytes;
        m[0] = 'X';
        const auto p1 = temp_file("umesh_pod_magic.umpb");
        std::ofstream(p1, std::ios::binary) << m;
        CHECK_THROWS_AS(load_basis(p1.string()), FormatError);
        std::string v = bytes;
        v[4] = 9;
        const auto p2 = temp_file("umesh_pod_version.umpb");
        std::ofstream(p2, std::ios::binary) << v;
        CHECK_THROWS_AS(load_basis(p2.string()), FormatError);
        CHECK_THROWS_AS(load_basis("/nonexistent/umesh.umpb"), FormatError);
    }
}
