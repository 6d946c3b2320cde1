#include "umesh/scenario.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "umesh/errors.hpp"

namespace umesh {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(std::string("scenario is missing required key '") + key + "'");
    return *it;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("scenario key '") + key + "' has the wrong type");
    }
}

template <typename T, std::size_t N>
std::array<T, N> fixed_array(const json& j, const char* key) {
    const json& v = require(j, key);
    if (!v.is_array() || v.size() != N)
        throw ConfigError(std::string("scenario key '") + key + "' must be an array of " +
                          std::to_string(N) + " values");
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        try {
            out[i] = v[i].get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("scenario key '") + key + "' has the wrong type");
        }
    }
    return out;
}

BoundarySpec parse_boundary(const json& v, const char* side) {
    if (v.is_string()) {
        if (v.get<std::string>() == "surface") return BoundarySpec::surface();
        throw ConfigError(std::string(side) +
                          " must be \"surface\", {\"plane\": ...} or {\"nodes\": ...}");
    }
    if (v.is_object()) {
        if (v.contains("plane")) {
            if (!v["plane"].is_string())
                throw ConfigError(std::string(side) + " plane must be a string like \"x=0\"");
            return BoundarySpec::parse_plane(v["plane"].get<std::string>());
        }
        if (v.contains("nodes")) {
            const json& arr = v["nodes"];
            if (!arr.is_array())
                throw ConfigError(std::string(side) + " nodes must be an array of [i,j,k]");
            std::vector<Index3> nodes;
            for (const auto& n : arr) {
                if (!n.is_array() || n.size() != 3)
                    throw ConfigError(std::string(side) + " nodes must be [i,j,k] triples");
                nodes.push_back({n[0].get<int>(), n[1].get<int>(), n[2].get<int>()});
            }
            return BoundarySpec::node_list(std::move(nodes));
        }
    }
    throw ConfigError(std::string(side) +
                      " must be \"surface\", {\"plane\": ...} or {\"nodes\": ...}");
}

json boundary_to_json(const BoundarySpec& s) {
    switch (s.kind) {
        case BoundarySpec::Kind::Surface:
            return "surface";
        case BoundarySpec::Kind::Plane: {
            const char axis = "xyz"[s.axis];
            const std::string rhs = s.index == -1 ? "max" : std::to_string(s.index);
            return json{{"plane", std::string(1, axis) + "=" + rhs}};
        }
        case BoundarySpec::Kind::Nodes: {
            auto nodes = s.nodes;
            std::sort(nodes.begin(), nodes.end());
            nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
            json arr = json::array();
            for (const auto& n : nodes) arr.push_back({n[0], n[1], n[2]});
            return json{{"nodes", arr}};
        }
        case BoundarySpec::Kind::None:
            break;
    }
    throw ConfigError("boundary spec cannot be canonicalized");
}

}  // namespace

Scenario parse_scenario(const std::string& json_text, const std::string& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("scenario JSON is invalid: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("scenario JSON root must be an object");
    static const char* known[] = {"name",          "dims",          "spacing",
                                  "origin",        "mask",          "mask_path",
                                  "dirichlet",     "neumann",       "young_modulus",
                                  "poisson_ratio", "pad_steps",     "newton_tol",
                                  "cg_tol",        "max_newton_iters",
                                  "max_increment_halvings"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw ConfigError("unknown scenario key '" + item.key() + "'");
    }

    Scenario s;
    s.name = get_or<std::string>(j, "name", "");
    const auto dims = fixed_array<int, 3>(j, "dims");
    const auto spacing = fixed_array<double, 3>(j, "spacing");
    Vec3d origin{0, 0, 0};
    if (j.contains("origin")) origin = fixed_array<double, 3>(j, "origin");

    std::vector<std::uint8_t> mask;
    if (j.contains("mask_path")) {
        std::filesystem::path p = j["mask_path"].get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        Index3 cell_dims{};
        mask = read_voxmask(p.string(), cell_dims);
        for (int a = 0; a < 3; ++a)
            if (cell_dims[a] != dims[a] - 1)
                throw ConfigError("mask dims do not match the scenario grid");
    } else if (j.contains("mask")) {
        for (const auto& v : j["mask"]) mask.push_back(v.get<int>() != 0 ? 1 : 0);
    }

    s.grid = build_grid(dims, spacing, origin, mask);
    json mask_json = json::array();
    for (auto m : s.grid.cell_mask) mask_json.push_back(int(m));
    const BoundarySpec diri = parse_boundary(require(j, "dirichlet"), "dirichlet");
    const BoundarySpec neu = parse_boundary(require(j, "neumann"), "neumann");
    s.mesh = mesh_from_grid(s.grid, diri, neu);
    if (s.mesh.neumann_candidates.empty())
        throw ConfigError("scenario has no loadable (neumann) nodes");

    s.material = MaterialParams::from_young_poisson(
        require(j, "young_modulus").get<double>(),
        require(j, "poisson_ratio").get<double>());

    s.pad_steps = get_or<int>(j, "pad_steps", 3);
    s.pad = padded_shape(s.grid.dims, s.pad_steps);

    s.solver.newton_tol = get_or<double>(j, "newton_tol", s.solver.newton_tol);
    s.solver.cg_tol = get_or<double>(j, "cg_tol", s.solver.cg_tol);
    s.solver.max_newton_iters =
        get_or<int>(j, "max_newton_iters", s.solver.max_newton_iters);
    s.solver.max_increment_halvings =
        get_or<int>(j, "max_increment_halvings", s.solver.max_increment_halvings);
    if (!(s.solver.newton_tol > 0) || !(s.solver.cg_tol > 0) ||
        s.solver.max_newton_iters < 1 || s.solver.max_increment_halvings < 0)
        throw ConfigError("scenario solver settings out of range");

    // Canonical form: fixed key set, defaults filled, mask inlined. nlohmann
    // objects are key-sorted, so dump() is a stable digest input.
    json c;
    c["name"] = s.name;
    c["dims"] = dims;
    c["spacing"] = spacing;
    c["origin"] = origin;
    c["mask"] = mask_json;
    c["dirichlet"] = boundary_to_json(diri);
    c["neumann"] = boundary_to_json(neu);
    c["young_modulus"] = s.material.young_modulus;
    c["poisson_ratio"] = s.material.poisson_ratio;
    c["pad_steps"] = s.pad_steps;
    c["newton_tol"] = s.solver.newton_tol;
    c["cg_tol"] = s.solver.cg_tol;
    c["max_newton_iters"] = s.solver.max_newton_iters;
    c["max_increment_halvings"] = s.solver.max_increment_halvings;
    s.canonical_json = c.dump();
    s.digest = sha256(s.canonical_json);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open scenario file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str(), std::filesystem::path(path).parent_path().string());
}

}  // namespace umesh
