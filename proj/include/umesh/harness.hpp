#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "umesh/dataset.hpp"
#include "umesh/field.hpp"

namespace umesh {

// ---------------------------------------------------------------------------
// Error metrics.

/// Mean over active degrees of freedom of the absolute component difference.
double mean_norm_error(const FieldTensor& u_ref, const FieldTensor& u_pred,
                       const std::vector<std::uint8_t>& active_mask);

/// (mean, sample standard deviation). With one value the deviation is not
/// applicable and comes back as NaN.
std::pair<double, double> aggregate(const std::vector<double>& errors);

/// || u_pred - u_ref ||_2 / || u_ref ||_2 * 100 at one padded voxel. A zero
/// reference displacement leaves the ratio undefined: NaN.
double relative_l2_at_probe(const FieldTensor& u_ref, const FieldTensor& u_pred,
                            const Index3& voxel);

/// Through-origin least squares slope a = sum(xy) / sum(x^2) of
/// (max deformation, error) points.
double fit_slope(const std::vector<std::pair<double, double>>& points);

/// Largest nodal displacement magnitude over active voxels.
double max_deformation(const FieldTensor& u, const std::vector<std::uint8_t>& active_mask);

double median(std::vector<double> v);
/// Nearest-rank percentile, p in [0, 100].
double percentile(std::vector<double> v, double p);

// ---------------------------------------------------------------------------
// Evaluation over a dataset's test split.

using Predictor = std::function<FieldTensor(const Sample&)>;

struct EvalEntry {
    int index = 0;  // position in the dataset
    double e = 0.0;
    double max_deformation = 0.0;  // of the reference field (m)
    double predict_ms = 0.0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    double mean_e = 0.0;
    double sigma_e = 0.0;  // NaN when only one sample
    double max_e = 0.0;
    double slope = 0.0;           // e vs max deformation, through origin
    double median_predict_ms = 0.0;
    std::string engine;
};

/// Runs the predictor over the test split. Timing is measured around each
/// predictor call; deterministic_times zeroes it for bit-stable reports.
EvalReport evaluate(const Dataset& ds, const std::vector<std::uint8_t>& active_mask,
                    const Predictor& predict, const std::string& engine,
                    bool deterministic_times = false);

/// CSV with a `# meta:` comment block, full-precision per-sample rows, and
/// the aggregates recomputable from the rows.
void write_eval_csv(const EvalReport& report,
                    const std::map<std::string, std::string>& meta,
                    const std::string& path);

// ---------------------------------------------------------------------------
// Benchmark table.

struct BenchEngine {
    std::string name;
    std::function<FieldTensor(const FieldTensor&)> run;  // force -> displacement
};

struct BenchRow {
    std::string engine;
    int case_index = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double e = 0.0;  // vs the first engine's output on the same case
};

/// Times every engine on every case: `warmup` unrecorded runs, then `repeats`
/// recorded ones. The first engine is the accuracy reference. `now_ms` is the
/// clock hook (steady_clock when empty); rows come back sorted by
/// (engine list order, case index) independent of timing.
std::vector<BenchRow> benchmark(const std::vector<BenchEngine>& engines,
                                const std::vector<FieldTensor>& cases,
                                const std::vector<std::uint8_t>& active_mask,
                                int repeats = 5, int warmup = 1,
                                const std::function<double()>& now_ms = {});

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::map<std::string, std::string>& meta,
                     const std::string& path);

// ---------------------------------------------------------------------------
// CLI-facing file helpers.

/// Force-spec JSON: one object or an array of objects, each holding
/// `region_nodes` (mesh node ids) or `region_center` [i,j,k] with an optional
/// Chebyshev `radius` (clipped to the loadable set), plus `direction` and
/// `magnitude`.
std::vector<ForceSpec> parse_force_specs(const std::string& json_text,
                                         const HexMesh& mesh);
std::vector<ForceSpec> load_force_specs(const std::string& path, const HexMesh& mesh);

/// `node_i,node_j,node_k,ux,uy,uz` over active nodes in mesh order.
void write_displacement_csv(const Eigen::VectorXd& u, const HexMesh& mesh,
                            const std::string& path);

}  // namespace umesh
