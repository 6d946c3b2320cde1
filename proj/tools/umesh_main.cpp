#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "umesh/dataset.hpp"
#include "umesh/errors.hpp"
#include "umesh/field.hpp"
#include "umesh/harness.hpp"
#include "umesh/nn/unet.hpp"
#include "umesh/pod.hpp"
#include "umesh/scenario.hpp"

namespace {

using namespace umesh;

// command-line misuse that CLI11 cannot see (missing --out, malformed --grid)
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    bool deterministic = false;
    std::string out;
};

std::string need_out(const Globals& g) {
    if (g.out.empty()) throw UsageError("--out is required");
    return g.out;
}

std::string file_digest_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return to_hex(sha256(ss.str()));
}

Dataset load_matching_dataset(const std::string& path, const Scenario& sc) {
    Dataset ds = read_dataset(path);
    if (ds.scenario_digest != sc.digest)
        throw ConfigError("dataset '" + path + "' was generated from a different scenario");
    if (ds.padded_dims != sc.pad.padded_dims)
        throw ConfigError("dataset padded dims do not match the scenario");
    return ds;
}

nn::UNetModel load_matching_model(const std::string& path, const Scenario& sc) {
    nn::UNetModel m = nn::load_model(path);
    if (m.cfg.dims != sc.pad.padded_dims)
        throw ConfigError("model '" + path + "' was trained for different padded dims");
    return m;
}

PodBasis load_matching_basis(const std::string& path, const Scenario& sc) {
    PodBasis b = load_basis(path);
    if (b.scenario_digest != sc.digest)
        throw ConfigError("basis '" + path + "' was built for a different scenario");
    if (b.phi.rows() != static_cast<Eigen::Index>(sc.mesh.dof_count()))
        throw ConfigError("basis ndof does not match the scenario mesh");
    return b;
}

std::map<std::string, std::vector<int>> parse_grid(const std::string& text) {
    std::map<std::string, std::vector<int>> grid;
    std::stringstream groups(text);
    std::string group;
    while (std::getline(groups, group, ';')) {
        const auto eq = group.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("--grid expects \"c=16,32;k=2,3\"");
        const std::string key = group.substr(0, eq);
        if (key != "c" && key != "k") throw UsageError("--grid keys must be c and k");
        std::stringstream vals(group.substr(eq + 1));
        std::string v;
        while (std::getline(vals, v, ',')) {
            try {
                grid[key].push_back(std::stoi(v));
            } catch (const std::exception&) {
                throw UsageError("--grid value '" + v + "' is not an integer");
            }
        }
        if (grid[key].empty()) throw UsageError("--grid group '" + key + "' is empty");
    }
    if (!grid.count("c") || !grid.count("k"))
        throw UsageError("--grid needs both c and k groups");
    return grid;
}

double minutes_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
           60.0;
}

// ---------------------------------------------------------------------------

void cmd_generate(const Globals& g, const std::string& scenario_path,
                  const std::string& protocol_path) {
    const std::string out = need_out(g);
    const Scenario sc = load_scenario(scenario_path);
    Protocol proto = load_protocol(protocol_path);
    if (g.seed_set) proto.seed = g.seed;
    GenerateStats stats;
    Dataset ds = generate_dataset(sc, proto, g.threads, &stats);
    split_dataset(ds, proto.test_fraction, proto.seed);
    write_dataset(ds, out);
    std::size_t n_test = 0;
    for (const Sample& s : ds.samples) n_test += s.is_test() ? 1 : 0;
    std::cout << "generated " << ds.samples.size() << " samples ("
              << ds.samples.size() - n_test << " train / " << n_test
              << " test, attempted " << stats.attempted << ", skipped " << stats.skipped
              << ", magnitude_max " << stats.magnitude_max << ") -> " << out << "\n";
}

void cmd_train(const Globals& g, const std::string& dataset_path,
               const std::string& scenario_path, int c, int k, long iterations,
               int batch, const std::string& trace_path, long checkpoint_every,
               const std::string& checkpoint_path) {
    const std::string out = need_out(g);
    const Scenario sc = load_scenario(scenario_path);
    const Dataset ds = load_matching_dataset(dataset_path, sc);
    const auto mask = active_voxel_mask(sc.mesh, sc.pad);

    nn::UNetConfig ucfg;
    ucfg.c = c;
    ucfg.k = k;
    ucfg.dims = ds.padded_dims;
    nn::TrainConfig tcfg;
    tcfg.batch_size = batch;
    tcfg.iterations = iterations;
    tcfg.seed = g.seed;
    tcfg.deterministic = g.deterministic;
    tcfg.checkpoint_every = checkpoint_every;
    tcfg.checkpoint_path = checkpoint_path;

    const nn::TrainResult r = nn::train(ds, mask, ucfg, tcfg);
    nn::save_model(r.model, out);
    if (!trace_path.empty()) nn::write_loss_trace(trace_path, r.trace);
    std::cout << "trained c=" << c << " k=" << k << " for " << iterations
              << " iterations, final loss " << r.trace.back().loss << " -> " << out
              << "\n";
}

void cmd_predict(const Globals& g, const std::string& model_path,
                 const std::string& scenario_path, const std::string& force_path) {
    const std::string out = need_out(g);
    const Scenario sc = load_scenario(scenario_path);
    const nn::UNetModel model = load_matching_model(model_path, sc);
    const auto specs = load_force_specs(force_path, sc.mesh);
    const Eigen::VectorXd f = force_vector(sc.mesh, specs);
    const FieldTensor force = embed_field(f, sc.mesh, sc.pad);
    const auto mask = active_voxel_mask(sc.mesh, sc.pad);
    const nn::PredictResult pr = nn::predict(model, force, mask);
    const Eigen::VectorXd u = extract_field(pr.displacement, sc.mesh, sc.pad);
    write_displacement_csv(u, sc.mesh, out);
    std::cout << "predicted in " << pr.wall_time_ms << " ms -> " << out << "\n";
}

void cmd_pod_build(const Globals& g, const std::string& dataset_path,
                   const std::string& scenario_path, int modes, double energy) {
    const std::string out = need_out(g);
    if ((modes > 0) == (energy > 0.0))
        throw UsageError("pass exactly one of --modes or --energy");
    const Scenario sc = load_scenario(scenario_path);
    const Dataset ds = load_matching_dataset(dataset_path, sc);
    const Truncation trunc =
        modes > 0 ? Truncation::by_modes(modes) : Truncation::by_energy(energy);
    const PodBasis basis = build_basis_from_dataset(ds, sc, trunc);
    if (basis.clamped)
        std::cerr << "warning: truncation clamped to the snapshot rank "
                  << basis.rank() << "\n";
    save_basis(basis, out);
    std::cout << "built basis with " << basis.rank() << " modes (sigma_1 "
              << basis.sigma[0] << ") -> " << out << "\n";
}

void cmd_pod_solve(const Globals& g, const std::string& basis_path,
                   const std::string& scenario_path, const std::string& force_path) {
    const std::string out = need_out(g);
    const Scenario sc = load_scenario(scenario_path);
    const PodBasis basis = load_matching_basis(basis_path, sc);
    const auto specs = load_force_specs(force_path, sc.mesh);
    const Eigen::VectorXd f = force_vector(sc.mesh, specs);
    FemContext ctx(sc.mesh, sc.material);
    const NewtonResult res = reduced_newton_solve(basis, ctx, f, sc.solver);
    write_displacement_csv(res.u, sc.mesh, out);
    std::cout << "reduced solve (" << basis.rank() << " modes) in "
              << res.report.wall_time_s * 1000.0 << " ms, "
              << res.report.newton_iterations << " newton iterations -> " << out << "\n";
}

void cmd_evaluate(const Globals& g, const std::string& dataset_path,
                  const std::string& scenario_path, const std::string& model_path,
                  const std::string& basis_path) {
    const std::string out = need_out(g);
    if (model_path.empty() == basis_path.empty())
        throw UsageError("pass exactly one of --model or --basis");
    const Scenario sc = load_scenario(scenario_path);
    const Dataset ds = load_matching_dataset(dataset_path, sc);
    const auto mask = active_voxel_mask(sc.mesh, sc.pad);

    std::map<std::string, std::string> meta;
    meta["scenario_digest"] = to_hex(sc.digest);
    meta["dataset"] = dataset_path;

    EvalReport rep;
    if (!model_path.empty()) {
        const nn::UNetModel model = load_matching_model(model_path, sc);
        meta["model_digest"] = file_digest_hex(model_path);
        rep = evaluate(
            ds, mask,
            [&](const Sample& s) { return nn::predict(model, s.force, mask).displacement; },
            "network", g.deterministic);
    } else {
        const PodBasis basis = load_matching_basis(basis_path, sc);
        meta["basis_digest"] = file_digest_hex(basis_path);
        meta["pod_modes"] = std::to_string(basis.rank());
        FemContext ctx(sc.mesh, sc.material);
        rep = evaluate(
            ds, mask,
            [&](const Sample& s) {
                const Eigen::VectorXd f = extract_field(s.force, sc.mesh, sc.pad);
                const NewtonResult res = reduced_newton_solve(basis, ctx, f, sc.solver);
                return embed_field(res.u, sc.mesh, sc.pad);
            },
            "pod", g.deterministic);
    }
    write_eval_csv(rep, meta, out);
    std::cout << "engine " << rep.engine << ": mean_e " << rep.mean_e << ", sigma_e "
              << rep.sigma_e << ", max_e " << rep.max_e << ", slope " << rep.slope
              << " -> " << out << "\n";
}

void cmd_bench(const Globals& g, const std::string& scenario_path,
               const std::string& dataset_path, const std::string& model_path,
               const std::string& basis_path, int n_cases, int repeats, int warmup) {
    const std::string out = need_out(g);
    const Scenario sc = load_scenario(scenario_path);
    const Dataset ds = load_matching_dataset(dataset_path, sc);
    const auto mask = active_voxel_mask(sc.mesh, sc.pad);

    std::vector<FieldTensor> cases;
    for (const Sample& s : ds.samples) {
        if (!s.is_test()) continue;
        cases.push_back(s.force);
        if (static_cast<int>(cases.size()) == n_cases) break;
    }
    if (cases.empty()) throw ConfigError("dataset has no test samples to benchmark");

    std::map<std::string, std::string> meta;
    meta["scenario_digest"] = to_hex(sc.digest);
    meta["cases"] = std::to_string(cases.size());
    meta["repeats"] = std::to_string(repeats);
    // timings from a Jacobi-PCG solver; direct sparse solvers publish very
    // different absolute numbers
    meta["fem_solver"] = "jacobi-pcg";

    FemContext fem_ctx(sc.mesh, sc.material);
    std::vector<BenchEngine> engines;
    engines.push_back({"fem", [&](const FieldTensor& force) {
                           const Eigen::VectorXd f = extract_field(force, sc.mesh, sc.pad);
                           const NewtonResult res = newton_solve(fem_ctx, f, sc.solver);
                           return embed_field(res.u, sc.mesh, sc.pad);
                       }});

    PodBasis basis;
    FemContext pod_ctx(sc.mesh, sc.material);
    if (!basis_path.empty()) {
        basis = load_matching_basis(basis_path, sc);
        meta["pod_modes"] = std::to_string(basis.rank());
        engines.push_back({"pod", [&](const FieldTensor& force) {
                               const Eigen::VectorXd f =
                                   extract_field(force, sc.mesh, sc.pad);
                               const NewtonResult res =
                                   reduced_newton_solve(basis, pod_ctx, f, sc.solver);
                               return embed_field(res.u, sc.mesh, sc.pad);
                           }});
    }
    nn::UNetModel model;
    if (!model_path.empty()) {
        model = load_matching_model(model_path, sc);
        meta["model_digest"] = file_digest_hex(model_path);
        engines.push_back({"network", [&](const FieldTensor& force) {
                               return nn::predict(model, force, mask).displacement;
                           }});
    }

    const auto rows = benchmark(engines, cases, mask, repeats, warmup);
    write_bench_csv(rows, meta, out);

    for (const BenchEngine& e : engines) {
        std::vector<double> medians;
        double worst_e = 0.0;
        for (const BenchRow& r : rows)
            if (r.engine == e.name) {
                medians.push_back(r.median_ms);
                worst_e = std::max(worst_e, r.e);
            }
        std::cout << e.name << ": median " << median(medians) << " ms, max e " << worst_e
                  << "\n";
    }
    std::cout << "-> " << out << "\n";
}

void cmd_model_select(const Globals& g, const std::string& dataset_path,
                      const std::string& scenario_path, const std::string& grid_text,
                      long iterations, int batch) {
    const std::string out = need_out(g);
    const auto grid = parse_grid(grid_text);
    const Scenario sc = load_scenario(scenario_path);
    const Dataset ds = load_matching_dataset(dataset_path, sc);
    const auto mask = active_voxel_mask(sc.mesh, sc.pad);

    std::ofstream os(out);
    if (!os) throw FormatError("cannot open '" + out + "' for writing");
    os << "# meta: scenario_digest=" << to_hex(sc.digest) << "\n";
    os << "# meta: dataset=" << dataset_path << "\n";
    os << "# meta: iterations=" << iterations << "\n";
    os << "# meta: seed=" << g.seed << "\n";
    os << "c,k,FSS,mean_e,sigma_e,pred_ms,train_min\n";

    for (int c : grid.at("c"))
        for (int k : grid.at("k")) {
            nn::UNetConfig ucfg;
            ucfg.c = c;
            ucfg.k = k;
            ucfg.dims = ds.padded_dims;
            nn::TrainConfig tcfg;
            tcfg.batch_size = batch;
            tcfg.iterations = iterations;
            tcfg.seed = g.seed;  // shared across cells to isolate architecture
            tcfg.deterministic = g.deterministic;

            const auto t0 = std::chrono::steady_clock::now();
            const nn::TrainResult r = nn::train(ds, mask, ucfg, tcfg);
            const double train_min = minutes_since(t0);
            const EvalReport rep = evaluate(
                ds, mask,
                [&](const Sample& s) {
                    return nn::predict(r.model, s.force, mask).displacement;
                },
                "network", false);
            os << c << "," << k << "," << ucfg.feature_space_size() << "," << rep.mean_e
               << "," << rep.sigma_e << "," << rep.median_predict_ms << "," << train_min
               << "\n";
            std::cout << "c=" << c << " k=" << k << " FSS=" << ucfg.feature_space_size()
                      << ": mean_e " << rep.mean_e << ", pred " << rep.median_predict_ms
                      << " ms, train " << train_min << " min\n";
        }
    os.flush();
    if (!os) throw FormatError("write to '" + out + "' failed");
    std::cout << "-> " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric hyperelastic FEM surrogate toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "master RNG seed");
    app.add_option("--threads", g.threads, "worker threads for generation")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", g.deterministic,
                 "bit-reproducible outputs: zeroed wall times");
    app.add_option("--out", g.out, "output file path");

    std::string scenario_path, protocol_path, dataset_path, model_path, basis_path;
    std::string force_path, trace_path, checkpoint_path, grid_text;
    int c = 8, k = 2, batch = 4, modes = 0, n_cases = 5, repeats = 5, warmup = 1;
    long iterations = 1000, checkpoint_every = 0;
    double energy = 0.0;

    auto* gen = app.add_subcommand("generate", "sample solved force/displacement pairs");
    gen->add_option("--scenario", scenario_path)->required();
    gen->add_option("--protocol", protocol_path)->required();
    gen->callback([&] {
        g.seed_set = seed_opt->count() > 0;
        cmd_generate(g, scenario_path, protocol_path);
    });

    auto* tr = app.add_subcommand("train", "fit the network to a dataset");
    tr->add_option("--dataset", dataset_path)->required();
    tr->add_option("--scenario", scenario_path)->required();
    tr->add_option("-c,--channels", c, "first-stage feature count");
    tr->add_option("-k,--depth", k, "encoder depth");
    tr->add_option("--iterations", iterations);
    tr->add_option("--batch", batch);
    tr->add_option("--trace", trace_path, "loss trace CSV path");
    tr->add_option("--checkpoint-every", checkpoint_every);
    tr->add_option("--checkpoint-path", checkpoint_path);
    tr->callback([&] {
        cmd_train(g, dataset_path, scenario_path, c, k, iterations, batch, trace_path,
                  checkpoint_every, checkpoint_path);
    });

    auto* pr = app.add_subcommand("predict", "network displacement for a force spec");
    pr->add_option("--model", model_path)->required();
    pr->add_option("--scenario", scenario_path)->required();
    pr->add_option("--force", force_path)->required();
    pr->callback([&] { cmd_predict(g, model_path, scenario_path, force_path); });

    auto* pb = app.add_subcommand("pod-build", "snapshot SVD basis from a dataset");
    pb->add_option("--dataset", dataset_path)->required();
    pb->add_option("--scenario", scenario_path)->required();
    pb->add_option("--modes", modes, "fixed mode count");
    pb->add_option("--energy", energy, "energy fraction in (0, 1]");
    pb->callback([&] { cmd_pod_build(g, dataset_path, scenario_path, modes, energy); });

    auto* ps = app.add_subcommand("pod-solve", "reduced Newton solve for a force spec");
    ps->add_option("--basis", basis_path)->required();
    ps->add_option("--scenario", scenario_path)->required();
    ps->add_option("--force", force_path)->required();
    ps->callback([&] { cmd_pod_solve(g, basis_path, scenario_path, force_path); });

    auto* ev = app.add_subcommand("evaluate", "error report over the test split");
    ev->add_option("--dataset", dataset_path)->required();
    ev->add_option("--scenario", scenario_path)->required();
    ev->add_option("--model", model_path);
    ev->add_option("--basis", basis_path);
    ev->callback([&] {
        cmd_evaluate(g, dataset_path, scenario_path, model_path, basis_path);
    });

    auto* be = app.add_subcommand("bench", "timing table over test-split cases");
    be->add_option("--scenario", scenario_path)->required();
    be->add_option("--dataset", dataset_path)->required();
    be->add_option("--model", model_path);
    be->add_option("--basis", basis_path);
    be->add_option("--cases", n_cases)->check(CLI::PositiveNumber);
    be->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
    be->add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
    be->callback([&] {
        cmd_bench(g, scenario_path, dataset_path, model_path, basis_path, n_cases,
                  repeats, warmup);
    });

    auto* ms = app.add_subcommand("model-select", "train and score a (c, k) grid");
    ms->add_option("--dataset", dataset_path)->required();
    ms->add_option("--scenario", scenario_path)->required();
    ms->add_option("--grid", grid_text, "e.g. \"c=16,32;k=2,3\"")->required();
    ms->add_option("--iterations", iterations);
    ms->add_option("--batch", batch);
    ms->callback([&] {
        cmd_model_select(g, dataset_path, scenario_path, grid_text, iterations, batch);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
