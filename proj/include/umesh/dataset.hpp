#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "umesh/digest.hpp"
#include "umesh/field.hpp"
#include "umesh/rng.hpp"
#include "umesh/scenario.hpp"

namespace umesh {

/// One applied load: the total magnitude is split equally across the region
/// nodes along a unit direction.
struct ForceSpec {
    std::vector<int> region;  // sorted mesh node ids, subset of neumann candidates
    Vec3d direction{0, 0, 0};
    double magnitude = 0.0;  // N
};

/// Scatters the specs into a nodal force vector. Validates the unit-direction
/// and region-membership invariants.
Eigen::VectorXd force_vector(const HexMesh& mesh, const std::vector<ForceSpec>& specs);

struct Region {
    int center = 0;           // mesh node id
    std::vector<int> nodes;   // sorted, includes center
};

/// One region per Neumann candidate: the node itself (radius 0) or its grid
/// neighborhood within the given Chebyshev radius, clipped to the candidate
/// set. Regions collectively cover all candidates.
std::vector<Region> enumerate_regions(const HexMesh& mesh, int region_radius);

/// Uniformly draws n_forces distinct regions whose centers are pairwise at
/// least min_separation apart (Chebyshev distance on grid indices). Returns
/// sorted region indices. Throws ConfigError when no admissible combination
/// exists (exhaustively checked for small systems, else a rejection cap).
std::vector<int> sample_multi_regions(const std::vector<Region>& regions,
                                      const HexMesh& mesh, int n_forces,
                                      int min_separation, Rng& rng);

/// Exhaustive count of admissible combinations; intended for small inputs.
long count_admissible_combinations(const std::vector<Region>& regions,
                                   const HexMesh& mesh, int n_forces,
                                   int min_separation);

/// Sampling protocol (JSON keys match the field names).
struct Protocol {
    int lambda = 1;              // samples per region, single-force mode
    double magnitude_max = 0.0;  // N; <= 0 requests pilot calibration
    int n_forces = 1;
    int min_separation = 3;      // grid cells between region centers
    int region_radius = 0;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
    int sample_count = 0;        // total samples, multi-force mode
};

Protocol parse_protocol(const std::string& json_text);
Protocol load_protocol(const std::string& path);

struct Sample {
    std::uint32_t flags = 0;  // bit 0 set = test split
    FieldTensor force;
    FieldTensor displacement;
    std::string meta;  // canonical JSON: forces, seed, solve digest
    bool is_test() const { return (flags & 1u) != 0; }
};

struct Dataset {
    Sha256 scenario_digest{};
    Index3 padded_dims{0, 0, 0};
    std::vector<Sample> samples;
};

struct GenerateStats {
    int attempted = 0;
    int skipped = 0;
    double magnitude_max = 0.0;  // resolved value actually used
};

/// Runs the sampling protocol: Lambda samples per region (single-force) or
/// sample_count drawn combinations (multi-force). Failed solves retry at
/// half magnitude up to 3 times, then the sample is skipped; generation
/// aborts once the skip ratio exceeds 5%. Bit-reproducible from
/// (scenario, protocol, seed) for any worker count.
Dataset generate_dataset(const Scenario& sc, const Protocol& proto, int threads = 1,
                         GenerateStats* stats = nullptr);

/// Pilot calibration: picks the most compliant loadable node, estimates the
/// force giving a deflection of a quarter of the largest bounding-box extent
/// from the linearized model, then backs off until the nonlinear solve
/// converges.
double calibrate_magnitude(const Scenario& sc);

/// Marks floor(n * test_fraction + 0.5) samples as test via a seeded shuffle.
void split_dataset(Dataset& ds, double test_fraction, std::uint64_t seed);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Appends extra.samples to the file after verifying digest and dims match.
void append_samples(const std::string& path, const Dataset& extra);

/// (max |force|, max |displacement|) over train-split samples.
std::pair<double, double> train_normalization_scales(const Dataset& ds);

/// Recovers the ForceSpec list from a sample's meta JSON (for re-solving).
std::vector<ForceSpec> force_specs_from_meta(const std::string& meta_json);

}  // namespace umesh
