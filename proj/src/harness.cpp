#include "umesh/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "umesh/errors.hpp"

namespace umesh {

using nlohmann::json;

namespace {

void check_field_pair(const FieldTensor& a, const FieldTensor& b,
                      const std::vector<std::uint8_t>& mask) {
    if (a.dims != b.dims) throw ConfigError("field shapes differ");
    if (mask.size() != a.voxels()) throw ConfigError("active mask size mismatch");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double mean_norm_error(const FieldTensor& u_ref, const FieldTensor& u_pred,
                       const std::vector<std::uint8_t>& active_mask) {
    check_field_pair(u_ref, u_pred, active_mask);
    const std::size_t nv = u_ref.voxels();
    double sum = 0.0;
    std::size_t active = 0;
    for (std::size_t v = 0; v < nv; ++v) {
        if (!active_mask[v]) continue;
        ++active;
        for (int c = 0; c < 3; ++c) {
            const std::size_t at = static_cast<std::size_t>(c) * nv + v;
            sum += std::abs(static_cast<double>(u_ref.data[at]) -
                            static_cast<double>(u_pred.data[at]));
        }
    }
    if (active == 0) throw ConfigError("active mask selects no voxels");
    return sum / (3.0 * static_cast<double>(active));
}

std::pair<double, double> aggregate(const std::vector<double>& errors) {
    if (errors.empty()) throw ConfigError("aggregate needs at least one value");
    double sum = 0.0;
    for (double e : errors) sum += e;
    const double mean = sum / static_cast<double>(errors.size());
    if (errors.size() == 1)
        return {mean, std::numeric_limits<double>::quiet_NaN()};
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    return {mean, std::sqrt(ss / static_cast<double>(errors.size() - 1))};
}

double relative_l2_at_probe(const FieldTensor& u_ref, const FieldTensor& u_pred,
                            const Index3& voxel) {
    if (u_ref.dims != u_pred.dims) throw ConfigError("field shapes differ");
    for (int a = 0; a < 3; ++a)
        if (voxel[a] < 0 || voxel[a] >= u_ref.dims[a])
            throw ConfigError("probe voxel is outside the padded box");
    double dn = 0.0, rn = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double r = u_ref.at(c, voxel[0], voxel[1], voxel[2]);
        const double p = u_pred.at(c, voxel[0], voxel[1], voxel[2]);
        dn += (p - r) * (p - r);
        rn += r * r;
    }
    if (rn == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(dn / rn) * 100.0;
}

double fit_slope(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw ConfigError("fit_slope needs at least two points");
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [x, y] : points) {
        sxy += x * y;
        sxx += x * x;
    }
    if (sxx == 0.0) throw ConfigError("fit_slope needs a nonzero abscissa");
    return sxy / sxx;
}

double max_deformation(const FieldTensor& u, const std::vector<std::uint8_t>& active_mask) {
    if (active_mask.size() != u.voxels()) throw ConfigError("active mask size mismatch");
    const std::size_t nv = u.voxels();
    double best = 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
        if (!active_mask[v]) continue;
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double x = u.data[static_cast<std::size_t>(c) * nv + v];
            sq += x * x;
        }
        best = std::max(best, std::sqrt(sq));
    }
    return best;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw ConfigError("percentile of an empty list");
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile must be in [0, 100]");
    std::sort(v.begin(), v.end());
    // nearest rank
    const std::size_t n = v.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    if (rank == 0) rank = 1;
    return v[std::min(rank, n) - 1];
}

EvalReport evaluate(const Dataset& ds, const std::vector<std::uint8_t>& active_mask,
                    const Predictor& predict, const std::string& engine,
                    bool deterministic_times) {
    if (!predict) throw ConfigError("evaluate needs a predictor");
    EvalReport rep;
    rep.engine = engine;
    std::vector<double> errors, times;
    std::vector<std::pair<double, double>> points;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (!s.is_test()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        const FieldTensor pred = predict(s);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      t0)
                .count();
        EvalEntry entry;
        entry.index = static_cast<int>(i);
        entry.e = mean_norm_error(s.displacement, pred, active_mask);
        entry.max_deformation = max_deformation(s.displacement, active_mask);
        entry.predict_ms = deterministic_times ? 0.0 : ms;
        errors.push_back(entry.e);
        times.push_back(entry.predict_ms);
        points.emplace_back(entry.max_deformation, entry.e);
        rep.entries.push_back(entry);
    }
    if (rep.entries.empty()) throw ConfigError("dataset has no test samples");
    const auto [mean, sigma] = aggregate(errors);
    rep.mean_e = mean;
    rep.sigma_e = sigma;
    rep.max_e = *std::max_element(errors.begin(), errors.end());
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [x, y] : points) {
        sxy += x * y;
        sxx += x * x;
    }
    rep.slope = sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
    rep.median_predict_ms = median(times);
    return rep;
}

void write_eval_csv(const EvalReport& report,
                    const std::map<std::string, std::string>& meta,
                    const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << "# meta: engine=" << report.engine << "\n";
    for (const auto& [k, v] : meta) os << "# meta: " << k << "=" << v << "\n";
    os << "# aggregate: mean_e=" << fmt(report.mean_e) << "\n";
    os << "# aggregate: sigma_e=" << fmt(report.sigma_e) << "\n";
    os << "# aggregate: max_e=" << fmt(report.max_e) << "\n";
    os << "# aggregate: slope=" << fmt(report.slope) << "\n";
    os << "# aggregate: median_predict_ms=" << fmt(report.median_predict_ms) << "\n";
    os << "index,e,max_deformation,predict_ms\n";
    for (const EvalEntry& e : report.entries)
        os << e.index << "," << fmt(e.e) << "," << fmt(e.max_deformation) << ","
           << fmt(e.predict_ms) << "\n";
    os.flush();
    if (!os) throw FormatError("write to '" + path + "' failed");
}

std::vector<BenchRow> benchmark(const std::vector<BenchEngine>& engines,
                                const std::vector<FieldTensor>& cases,
                                const std::vector<std::uint8_t>& active_mask,
                                int repeats, int warmup,
                                const std::function<double()>& now_ms) {
    if (engines.empty()) throw ConfigError("benchmark needs at least one engine");
    if (cases.empty()) throw ConfigError("benchmark needs at least one case");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (warmup < 0) throw ConfigError("warmup must be >= 0");
    for (const BenchEngine& e : engines)
        if (!e.run) throw ConfigError("engine '" + e.name + "' has no runner");

    auto clock = [&]() -> double {
        if (now_ms) return now_ms();
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };

    std::vector<FieldTensor> reference(cases.size());
    std::vector<BenchRow> rows;
    for (std::size_t ei = 0; ei < engines.size(); ++ei) {
        for (std::size_t ci = 0; ci < cases.size(); ++ci) {
            for (int w = 0; w < warmup; ++w) engines[ei].run(cases[ci]);
            std::vector<double> times;
            FieldTensor out;
            for (int rep = 0; rep < repeats; ++rep) {
                const double t0 = clock();
                out = engines[ei].run(cases[ci]);
                times.push_back(clock() - t0);
            }
            if (ei == 0) reference[ci] = out;
            BenchRow row;
            row.engine = engines[ei].name;
            row.case_index = static_cast<int>(ci);
            row.median_ms = median(times);
            row.p95_ms = percentile(times, 95.0);
            row.e = mean_norm_error(reference[ci], out, active_mask);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::map<std::string, std::string>& meta,
                     const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    for (const auto& [k, v] : meta) os << "# meta: " << k << "=" << v << "\n";
    os << "engine,case,median_ms,p95_ms,e\n";
    for (const BenchRow& r : rows)
        os << r.engine << "," << r.case_index << "," << fmt(r.median_ms) << ","
           << fmt(r.p95_ms) << "," << fmt(r.e) << "\n";
    os.flush();
    if (!os) throw FormatError("write to '" + path + "' failed");
}

namespace {

int chebyshev(const Index3& a, const Index3& b) {
    int d = 0;
    for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

ForceSpec parse_one_force(const json& j, const HexMesh& mesh) {
    if (!j.is_object()) throw FormatError("force spec must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (key != "region_nodes" && key != "region_center" && key != "radius" &&
            key != "direction" && key != "magnitude")
            throw FormatError("unknown force spec key '" + key + "'");
    const bool has_nodes = j.contains("region_nodes");
    const bool has_center = j.contains("region_center");
    if (has_nodes == has_center)
        throw FormatError("force spec needs exactly one of region_nodes, region_center");
    if (has_nodes && j.contains("radius"))
        throw FormatError("radius only applies to region_center");

    ForceSpec spec;
    try {
        if (has_nodes) {
            spec.region = j.at("region_nodes").get<std::vector<int>>();
            std::sort(spec.region.begin(), spec.region.end());
            spec.region.erase(std::unique(spec.region.begin(), spec.region.end()),
                              spec.region.end());
        } else {
            const auto c = j.at("region_center").get<std::vector<int>>();
            if (c.size() != 3) throw FormatError("region_center must be [i, j, k]");
            const Index3 center{c[0], c[1], c[2]};
            const int radius = j.value("radius", 0);
            if (radius < 0) throw FormatError("radius must be >= 0");
            int center_node = -1;
            for (int n : mesh.neumann_candidates)
                if (mesh.node_grid_index[n] == center) {
                    center_node = n;
                    break;
                }
            if (center_node < 0)
                throw ConfigError("region_center is not a loadable node");
            for (int n : mesh.neumann_candidates)
                if (chebyshev(mesh.node_grid_index[n], center) <= radius)
                    spec.region.push_back(n);
        }
        const auto d = j.at("direction").get<std::vector<double>>();
        if (d.size() != 3) throw FormatError("direction must be [x, y, z]");
        const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (!(len > 0.0) || !std::isfinite(len))
            throw FormatError("direction must be a nonzero vector");
        spec.direction = {d[0] / len, d[1] / len, d[2] / len};
        spec.magnitude = j.at("magnitude").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed force spec: ") + e.what());
    }
    if (spec.region.empty()) throw ConfigError("force spec selects no nodes");
    return spec;
}

}  // namespace

std::vector<ForceSpec> parse_force_specs(const std::string& json_text,
                                         const HexMesh& mesh) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("force spec is invalid JSON: ") + e.what());
    }
    std::vector<ForceSpec> specs;
    if (j.is_array()) {
        for (const auto& item : j) specs.push_back(parse_one_force(item, mesh));
    } else {
        specs.push_back(parse_one_force(j, mesh));
    }
    if (specs.empty()) throw FormatError("force spec file holds no forces");
    return specs;
}

std::vector<ForceSpec> load_force_specs(const std::string& path, const HexMesh& mesh) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_force_specs(ss.str(), mesh);
}

void write_displacement_csv(const Eigen::VectorXd& u, const HexMesh& mesh,
                            const std::string& path) {
    if (u.size() != static_cast<Eigen::Index>(mesh.dof_count()))
        throw ConfigError("displacement size does not match the mesh");
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << "node_i,node_j,node_k,ux,uy,uz\n";
    for (int n = 0; n < mesh.node_count(); ++n) {
        const Index3& g = mesh.node_grid_index[n];
        os << g[0] << "," << g[1] << "," << g[2] << "," << fmt(u[3 * n + 0]) << ","
           << fmt(u[3 * n + 1]) << "," << fmt(u[3 * n + 2]) << "\n";
    }
    os.flush();
    if (!os) throw FormatError("write to '" + path + "' failed");
}

}  // namespace umesh
