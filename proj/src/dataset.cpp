#include "umesh/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "umesh/binio.hpp"
#include "umesh/errors.hpp"
#include "umesh/fem.hpp"

namespace umesh {

using nlohmann::json;

namespace {

int chebyshev(const Index3& a, const Index3& b) {
    int m = 0;
    for (int i = 0; i < 3; ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

Eigen::VectorXd force_vector(const HexMesh& mesh, const std::vector<ForceSpec>& specs) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.dof_count());
    for (const auto& spec : specs) {
        if (spec.region.empty()) throw ConfigError("force region is empty");
        const double norm = std::sqrt(spec.direction[0] * spec.direction[0] +
                                      spec.direction[1] * spec.direction[1] +
                                      spec.direction[2] * spec.direction[2]);
        if (std::abs(norm - 1.0) > 1e-6)
            throw ConfigError("force direction must be a unit vector");
        if (spec.magnitude < 0.0) throw ConfigError("force magnitude must be >= 0");
        const double share = spec.magnitude / static_cast<double>(spec.region.size());
        for (int n : spec.region) {
            if (!std::binary_search(mesh.neumann_candidates.begin(),
                                    mesh.neumann_candidates.end(), n))
                throw ConfigError("force region node " + std::to_string(n) +
                                  " is not a loadable surface node");
            for (int c = 0; c < 3; ++c) f[3 * n + c] += share * spec.direction[c] / norm;
        }
    }
    return f;
}

std::vector<Region> enumerate_regions(const HexMesh& mesh, int region_radius) {
    if (region_radius < 0) throw ConfigError("region_radius must be >= 0");
    const auto& cands = mesh.neumann_candidates;
    if (cands.empty()) throw ConfigError("mesh has no loadable surface nodes");
    std::vector<Region> out;
    out.reserve(cands.size());
    for (int c : cands) {
        Region r;
        r.center = c;
        if (region_radius == 0) {
            r.nodes = {c};
        } else {
            for (int n : cands)
                if (chebyshev(mesh.node_grid_index[n], mesh.node_grid_index[c]) <=
                    region_radius)
                    r.nodes.push_back(n);
        }
        out.push_back(std::move(r));
    }
    return out;
}

long count_admissible_combinations(const std::vector<Region>& regions,
                                   const HexMesh& mesh, int n_forces,
                                   int min_separation) {
    const int n = static_cast<int>(regions.size());
    long count = 0;
    std::vector<int> picked;
    std::function<void(int)> rec = [&](int start) {
        if (static_cast<int>(picked.size()) == n_forces) {
            ++count;
            return;
        }
        for (int i = start; i < n; ++i) {
            bool ok = true;
            for (int j : picked)
                if (chebyshev(mesh.node_grid_index[regions[i].center],
                              mesh.node_grid_index[regions[j].center]) < min_separation) {
                    ok = false;
                    break;
                }
            if (ok) {
                picked.push_back(i);
                rec(i + 1);
                picked.pop_back();
            }
        }
    };
    rec(0);
    return count;
}

std::vector<int> sample_multi_regions(const std::vector<Region>& regions,
                                      const HexMesh& mesh, int n_forces,
                                      int min_separation, Rng& rng) {
    const int n = static_cast<int>(regions.size());
    if (n_forces < 1) throw ConfigError("n_forces must be >= 1");
    if (n_forces > n) throw ConfigError("n_forces exceeds the number of regions");
    if (n_forces == 1) return {static_cast<int>(rng.uniform_index(n))};
    if (min_separation < 1) throw ConfigError("min_separation must be >= 1");

    std::vector<int> pick(n_forces);
    for (int attempt = 0; attempt < 100000; ++attempt) {
        for (int i = 0; i < n_forces; ++i) {
            bool dup;
            do {
                pick[i] = static_cast<int>(rng.uniform_index(n));
                dup = false;
                for (int j = 0; j < i; ++j) dup = dup || pick[j] == pick[i];
            } while (dup);
        }
        bool ok = true;
        for (int i = 0; i < n_forces && ok; ++i)
            for (int j = i + 1; j < n_forces && ok; ++j)
                ok = chebyshev(mesh.node_grid_index[regions[pick[i]].center],
                               mesh.node_grid_index[regions[pick[j]].center]) >=
                     min_separation;
        if (ok) {
            std::sort(pick.begin(), pick.end());
            return pick;
        }
    }
    if (n_forces <= 3 &&
        count_admissible_combinations(regions, mesh, n_forces, min_separation) == 0)
        throw ConfigError("no admissible region combination for min_separation " +
                          std::to_string(min_separation));
    throw ConfigError("region combination sampling exceeded the rejection cap");
}

Protocol parse_protocol(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("protocol JSON is invalid: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("protocol JSON root must be an object");
    static const char* known[] = {"lambda",          "magnitude_max", "n_forces",
                                  "min_separation",  "region_radius", "test_fraction",
                                  "seed",            "sample_count"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw ConfigError("unknown protocol key '" + item.key() + "'");
    }
    Protocol p;
    try {
        p.lambda = j.value("lambda", p.lambda);
        if (j.contains("magnitude_max")) {
            if (j["magnitude_max"].is_string()) {
                if (j["magnitude_max"].get<std::string>() != "auto")
                    throw ConfigError("magnitude_max must be a number or \"auto\"");
                p.magnitude_max = 0.0;
            } else {
                p.magnitude_max = j["magnitude_max"].get<double>();
            }
        }
        p.n_forces = j.value("n_forces", p.n_forces);
        p.min_separation = j.value("min_separation", p.min_separation);
        p.region_radius = j.value("region_radius", p.region_radius);
        p.test_fraction = j.value("test_fraction", p.test_fraction);
        p.seed = j.value("seed", p.seed);
        p.sample_count = j.value("sample_count", p.sample_count);
    } catch (const json::exception&) {
        throw ConfigError("protocol key has the wrong type");
    }
    if (p.lambda < 0) throw ConfigError("lambda must be >= 0");
    if (p.magnitude_max < 0) throw ConfigError("magnitude_max must be >= 0");
    if (p.n_forces < 1) throw ConfigError("n_forces must be >= 1");
    if (p.min_separation < 1) throw ConfigError("min_separation must be >= 1");
    if (p.region_radius < 0) throw ConfigError("region_radius must be >= 0");
    if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    if (p.sample_count < 0) throw ConfigError("sample_count must be >= 0");
    return p;
}

Protocol load_protocol(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open protocol file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_protocol(buf.str());
}

double calibrate_magnitude(const Scenario& sc) {
    const HexMesh& mesh = sc.mesh;
    // most compliant probe: the loadable node farthest from the fixed set
    int probe = -1;
    double best = -1.0;
    for (int c : mesh.neumann_candidates) {
        double d2 = std::numeric_limits<double>::infinity();
        for (int d : mesh.dirichlet_nodes) {
            double s = 0;
            for (int a = 0; a < 3; ++a) {
                const double diff = mesh.node_coords[c][a] - mesh.node_coords[d][a];
                s += diff * diff;
            }
            d2 = std::min(d2, s);
        }
        if (d2 > best) {
            best = d2;
            probe = c;
        }
    }

    double extent = 0.0;
    for (int a = 0; a < 3; ++a)
        extent = std::max(extent, (sc.grid.dims[a] - 1) * sc.grid.spacing[a]);
    const double target = 0.25 * extent;

    FemContext ctx(mesh, sc.material);
    SpMat K = ctx.tangent_stiffness(Eigen::VectorXd::Zero(mesh.dof_count()));
    Eigen::VectorXd dummy = Eigen::VectorXd::Zero(mesh.dof_count());
    apply_dirichlet(K, dummy, mesh.dirichlet_dofs());

    int axis = 0;
    double compliance = 0.0;
    for (int a = 0; a < 3; ++a) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(mesh.dof_count());
        e[3 * probe + a] = 1.0;
        const auto lin = solve_pcg(K, e, sc.solver.cg_tol);
        if (lin.status != PcgStatus::Converged) continue;
        const double c = std::abs(lin.x[3 * probe + a]);
        if (c > compliance) {
            compliance = c;
            axis = a;
        }
    }
    if (compliance <= 0.0)
        throw ConvergenceError("magnitude calibration failed: degenerate compliance");

    double mag = target / compliance;
    ForceSpec spec;
    spec.region = {probe};
    spec.direction = {0, 0, 0};
    spec.direction[axis] = 1.0;
    for (int h = 0; h <= 6; ++h) {
        spec.magnitude = mag;
        try {
            newton_solve(ctx, force_vector(mesh, {spec}), sc.solver);
            return mag;
        } catch (const ConvergenceError&) {
            mag *= 0.5;
        }
    }
    throw ConvergenceError("magnitude calibration failed: pilot solve diverges");
}

namespace {

std::string sample_meta_json(std::uint64_t seed, int index,
                             const std::vector<ForceSpec>& specs, double magnitude_max,
                             int retries, const SolveReport& rep) {
    json forces = json::array();
    for (const auto& s : specs) {
        forces.push_back({{"region", s.region},
                          {"direction", {s.direction[0], s.direction[1], s.direction[2]}},
                          {"magnitude", s.magnitude}});
    }
    const json report = {{"newton_iterations", rep.newton_iterations},
                         {"load_increments", rep.load_increments},
                         {"increment_cutbacks", rep.increment_cutbacks},
                         {"cg_iterations", rep.cg_iterations},
                         {"final_residual", rep.final_residual},
                         {"inverted_elements", rep.inverted_elements}};
    const json meta = {{"forces", forces},
                       {"index", index},
                       {"seed", seed},
                       {"magnitude_max", magnitude_max},
                       {"retries", retries},
                       {"newton_iterations", rep.newton_iterations},
                       {"load_increments", rep.load_increments},
                       {"solve_digest", to_hex(sha256(report.dump()))}};
    return meta.dump();
}

}  // namespace

std::vector<ForceSpec> force_specs_from_meta(const std::string& meta_json) {
    json j;
    try {
        j = json::parse(meta_json);
    } catch (const json::exception& e) {
        throw FormatError(std::string("sample meta is invalid JSON: ") + e.what());
    }
    std::vector<ForceSpec> out;
    for (const auto& f : j.at("forces")) {
        ForceSpec s;
        s.region = f.at("region").get<std::vector<int>>();
        const auto d = f.at("direction");
        s.direction = {d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()};
        s.magnitude = f.at("magnitude").get<double>();
        out.push_back(std::move(s));
    }
    return out;
}

Dataset generate_dataset(const Scenario& sc, const Protocol& proto, int threads,
                         GenerateStats* stats) {
    Dataset ds;
    ds.scenario_digest = sc.digest;
    ds.padded_dims = sc.pad.padded_dims;

    const auto regions = enumerate_regions(sc.mesh, proto.region_radius);
    const bool single = proto.n_forces == 1;
    const int total = single ? static_cast<int>(regions.size()) * proto.lambda
                             : proto.sample_count;
    if (!single && proto.n_forces > static_cast<int>(regions.size()))
        throw ConfigError("n_forces exceeds the number of regions");
    if (!single && proto.n_forces <= 3 && regions.size() <= 512) {
        if (count_admissible_combinations(regions, sc.mesh, proto.n_forces,
                                          proto.min_separation) == 0)
            throw ConfigError("no admissible region combination for min_separation " +
                              std::to_string(proto.min_separation));
    }

    const double mag =
        proto.magnitude_max > 0.0 ? proto.magnitude_max : calibrate_magnitude(sc);
    if (stats) {
        stats->magnitude_max = mag;
        stats->attempted = total;
        stats->skipped = 0;
    }
    if (total == 0) return ds;

    std::vector<std::optional<Sample>> slots(total);
    std::atomic<int> next{0};
    std::atomic<int> skipped{0};
    std::atomic<bool> abort{false};
    const int skip_limit = static_cast<int>(std::floor(0.05 * total));
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&]() {
        try {
            FemContext ctx(sc.mesh, sc.material);
            for (;;) {
                const int s = next.fetch_add(1);
                if (s >= total || abort.load()) break;

                const std::uint64_t seed_s = derive_seed(proto.seed, s);
                Rng rng(seed_s);
                std::vector<int> chosen;
                if (single)
                    chosen = {s / proto.lambda};
                else
                    chosen = sample_multi_regions(regions, sc.mesh, proto.n_forces,
                                                  proto.min_separation, rng);
                std::vector<ForceSpec> specs;
                specs.reserve(chosen.size());
                for (int ri : chosen) {
                    ForceSpec fs;
                    fs.region = regions[ri].nodes;
                    fs.direction = rng.unit_vector();
                    fs.magnitude = rng.uniform(0.0, mag);
                    specs.push_back(std::move(fs));
                }

                bool solved = false;
                NewtonResult sol;
                Eigen::VectorXd f;
                int retries = 0;
                for (; retries <= 3; ++retries) {
                    f = force_vector(sc.mesh, specs);
                    try {
                        sol = newton_solve(ctx, f, sc.solver);
                        solved = true;
                        break;
                    } catch (const ConvergenceError&) {
                        for (auto& fs : specs) fs.magnitude *= 0.5;
                    }
                }
                if (!solved) {
                    if (skipped.fetch_add(1) + 1 > skip_limit) abort.store(true);
                    continue;
                }

                Sample smp;
                smp.force = embed_field(f, sc.mesh, sc.pad);
                smp.displacement = embed_field(sol.u, sc.mesh, sc.pad);
                smp.meta = sample_meta_json(seed_s, s, specs, mag, retries, sol.report);
                slots[s] = std::move(smp);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
            abort.store(true);
        }
    };

    const int nworkers = std::max(1, std::min(threads, total));
    if (nworkers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nworkers);
        for (int t = 0; t < nworkers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    if (error) std::rethrow_exception(error);
    const int nskip = skipped.load();
    if (stats) stats->skipped = nskip;
    if (nskip > skip_limit)
        throw ConvergenceError("generation aborted: " + std::to_string(nskip) + " of " +
                               std::to_string(total) + " samples failed to converge");
    for (auto& slot : slots)
        if (slot) ds.samples.push_back(std::move(*slot));
    return ds;
}

void split_dataset(Dataset& ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    const int n = static_cast<int>(ds.samples.size());
    const int n_test = static_cast<int>(std::floor(n * test_fraction + 0.5));
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    Rng rng(seed);
    for (int i = n - 1; i >= 1; --i) {
        const int j = static_cast<int>(rng.uniform_index(i + 1));
        std::swap(perm[i], perm[j]);
    }
    for (auto& s : ds.samples) s.flags &= ~1u;
    for (int i = 0; i < n_test; ++i) ds.samples[perm[i]].flags |= 1u;
}

namespace {

constexpr char kDatasetMagic[4] = {'U', 'M', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

void write_tensor(std::ostream& os, const FieldTensor& t, const Index3& dims) {
    if (t.dims != dims) throw ConfigError("sample tensor dims do not match the dataset");
    write_bytes(os, t.data.data(), t.data.size() * sizeof(float));
}

FieldTensor read_tensor(std::istream& is, const Index3& dims, const char* what) {
    FieldTensor t(dims);
    read_bytes(is, t.data.data(), t.data.size() * sizeof(float), what);
    return t;
}

void write_sample(std::ostream& os, const Sample& s, const Index3& dims) {
    write_pod<std::uint32_t>(os, s.flags);
    write_tensor(os, s.force, dims);
    write_tensor(os, s.displacement, dims);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.meta.size()));
    write_bytes(os, s.meta.data(), s.meta.size());
}

struct DatasetHeader {
    Sha256 digest{};
    std::uint32_t count = 0;
    Index3 dims{};
};

DatasetHeader read_header(std::istream& is) {
    expect_magic(is, kDatasetMagic, "dataset");
    const auto version = read_pod<std::uint32_t>(is, "dataset version");
    if (version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version));
    DatasetHeader h;
    read_bytes(is, h.digest.data(), h.digest.size(), "scenario digest");
    h.count = read_pod<std::uint32_t>(is, "sample count");
    for (int a = 0; a < 3; ++a) {
        const auto d = read_pod<std::uint32_t>(is, "padded dims");
        if (d == 0 || d > (1u << 20)) throw FormatError("corrupt padded dims");
        h.dims[a] = static_cast<int>(d);
    }
    return h;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write dataset file: " + path);
    write_bytes(os, kDatasetMagic, 4);
    write_pod<std::uint32_t>(os, kDatasetVersion);
    write_bytes(os, ds.scenario_digest.data(), ds.scenario_digest.size());
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.samples.size()));
    for (int a = 0; a < 3; ++a)
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.padded_dims[a]));
    for (const auto& s : ds.samples) write_sample(os, s, ds.padded_dims);
    os.flush();
    if (!os) throw FormatError("failed writing dataset file: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open dataset file: " + path);
    const DatasetHeader h = read_header(is);
    Dataset ds;
    ds.scenario_digest = h.digest;
    ds.padded_dims = h.dims;
    ds.samples.reserve(h.count);
    for (std::uint32_t i = 0; i < h.count; ++i) {
        Sample s;
        s.flags = read_pod<std::uint32_t>(is, "sample flags");
        s.force = read_tensor(is, h.dims, "force tensor");
        s.displacement = read_tensor(is, h.dims, "displacement tensor");
        const auto len = read_pod<std::uint32_t>(is, "meta length");
        if (len > (1u << 26)) throw FormatError("corrupt meta length");
        s.meta.resize(len);
        read_bytes(is, s.meta.data(), len, "sample meta");
        ds.samples.push_back(std::move(s));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after the last sample: " + path);
    return ds;
}

void append_samples(const std::string& path, const Dataset& extra) {
    DatasetHeader h;
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open dataset file: " + path);
        h = read_header(is);
    }
    if (h.digest != extra.scenario_digest)
        throw FormatError("append refused: scenario digest mismatch");
    if (h.dims != extra.padded_dims)
        throw FormatError("append refused: padded dims mismatch");

    std::fstream fs(path, std::ios::binary | std::ios::in | std::ios::out);
    if (!fs) throw FormatError("cannot open dataset file for append: " + path);
    fs.seekp(0, std::ios::end);
    for (const auto& s : extra.samples) write_sample(fs, s, h.dims);
    fs.seekp(40);  // magic(4) + version(4) + digest(32)
    write_pod<std::uint32_t>(
        fs, h.count + static_cast<std::uint32_t>(extra.samples.size()));
    fs.flush();
    if (!fs) throw FormatError("failed appending to dataset file: " + path);
}

std::pair<double, double> train_normalization_scales(const Dataset& ds) {
    double fmax = 0.0, dmax = 0.0;
    bool any = false;
    for (const auto& s : ds.samples) {
        if (s.is_test()) continue;
        any = true;
        for (float v : s.force.data) fmax = std::max(fmax, double(std::abs(v)));
        for (float v : s.displacement.data) dmax = std::max(dmax, double(std::abs(v)));
    }
    if (!any) throw ConfigError("dataset has no training samples");
    return {fmax, dmax};
}

}  // namespace umesh
