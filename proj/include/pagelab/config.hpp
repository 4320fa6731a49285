#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pagelab/entanglement.hpp"
#include "pagelab/hydro.hpp"
#include "pagelab/io.hpp"
#include "pagelab/krylov.hpp"
#include "pagelab/lattice.hpp"
#include "pagelab/lindblad.hpp"

namespace pagelab {

inline constexpr const char* kPagelabVersion = "1.0.0";

enum class Scenario {
    page_curve_full,
    page_curve_lindblad,
    gap_scaling,
    beta_fit,
    reconstruct,
    finite_size,
    excited_init,
    ipr,
};

enum class Dynamics { full, lindblad };

inline const std::vector<std::pair<Scenario, std::string>>& scenario_names()
{
    static const std::vector<std::pair<Scenario, std::string>> names = {
        {Scenario::page_curve_full, "page-curve-full"},
        {Scenario::page_curve_lindblad, "page-curve-lindblad"},
        {Scenario::gap_scaling, "gap-scaling"},
        {Scenario::beta_fit, "beta-fit"},
        {Scenario::reconstruct, "reconstruct"},
        {Scenario::finite_size, "finite-size"},
        {Scenario::excited_init, "excited-init"},
        {Scenario::ipr, "ipr"},
    };
    return names;
}

inline std::string to_string(Scenario s)
{
    for (const auto& [k, v] : scenario_names())
        if (k == s)
            return v;
    return "unknown";
}

inline std::string to_string(Dynamics d) { return d == Dynamics::full ? "full" : "lindblad"; }

/// Process exit status for each failure class.
inline int exit_code_for(ErrorCode code)
{
    switch (code) {
    case ErrorCode::config:
    case ErrorCode::invalid_size:
    case ErrorCode::invalid_argument:
    case ErrorCode::dimension_mismatch:
        return 2;
    case ErrorCode::numerical:
    case ErrorCode::integration:
    case ErrorCode::degeneracy:
    case ErrorCode::step_too_large:
        return 3;
    case ErrorCode::convergence:
    case ErrorCode::not_converged:
        return 4;
    case ErrorCode::io:
        return 1;
    }
    return 1;
}

/// Everything a run needs. After `parse_config` every field holds a concrete
/// value and `defaults_applied` lists the keys that were not in the file.
struct ScenarioConfig {
    Scenario scenario = Scenario::page_curve_lindblad;
    Dynamics dynamics = Dynamics::lindblad;
    ModelParams model{};
    double t_max = 0.0;
    double sample_dt = 0.2;
    std::vector<double> alphas = {1.0, 2.0, kInfinity};
    int initial_rank_from_top = 1;
    bool with_currents = true;
    std::int64_t seed = 0;
    std::string output_dir;

    Splitting splitting = Splitting::first_order;
    KrylovConfig krylov{};
    int spectrum_levels = 8;
    int ipr_levels = 16;
    CrossingOptions crossing{};
    bool refine = true;
    FitOptimizer optimizer = FitOptimizer::newton;
    int fit_max_iterations = 200;
    bool compare_currents = true;
    std::vector<int> energy_levels = {0, 1};
    std::vector<int> ranks = {2, 18, 32};
    std::vector<std::pair<int, int>> sizes;
    std::string snapshots = "auto"; // auto | all | none
    int checkpoint_every = 1;
    std::string source_run;

    std::vector<std::string> defaults_applied;

    bool fits() const { return scenario == Scenario::beta_fit || scenario == Scenario::reconstruct; }
    bool multi_run() const { return scenario == Scenario::finite_size || scenario == Scenario::excited_init; }

    /// PGS1 snapshots of rho_A are written for every sample when this holds.
    bool writes_snapshots(int M) const
    {
        if (snapshots == "all")
            return true;
        if (snapshots == "none")
            return false;
        return M <= 8;
    }
};

/// Page times grow roughly like M^2 for the Lindblad model; twice that puts
/// the peak near the middle of the window.
inline double default_t_max(Dynamics d, int M, int N, double sample_dt)
{
    double t = 0.0;
    if (d == Dynamics::lindblad)
        t = 2.0 * M * M;
    else
        t = std::max(20.0, 1.5 * M * M) + 0.5 * std::max(0, N - 3 * M);
    return std::ceil(t / sample_dt - 1e-9) * sample_dt;
}

namespace detail {

/// Strict reader for one JSON object: every key must be consumed.
class StrictObject {
public:
    StrictObject(const json& j, std::string where, std::vector<std::string>* defaults)
        : j_(j)
        , where_(std::move(where))
        , defaults_(defaults)
    {
        require(j.is_object(), ErrorCode::config, where_ + " must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json* raw(const std::string& key)
    {
        used_.insert(key);
        if (!j_.contains(key)) {
            if (defaults_)
                defaults_->push_back(path(key));
            return nullptr;
        }
        return &j_.at(key);
    }

    void number(const std::string& key, double& out)
    {
        if (const json* v = raw(key)) {
            require(v->is_number(), ErrorCode::config, path(key) + " must be a number");
            out = v->get<double>();
            require(std::isfinite(out), ErrorCode::config, path(key) + " must be finite");
        }
    }

    template <typename Int>
    void integer(const std::string& key, Int& out)
    {
        if (const json* v = raw(key)) {
            require(v->is_number_integer(), ErrorCode::config, path(key) + " must be an integer");
            out = static_cast<Int>(v->get<std::int64_t>());
        }
    }

    void boolean(const std::string& key, bool& out)
    {
        if (const json* v = raw(key)) {
            require(v->is_boolean(), ErrorCode::config, path(key) + " must be true or false");
            out = v->get<bool>();
        }
    }

    void string(const std::string& key, std::string& out)
    {
        if (const json* v = raw(key)) {
            require(v->is_string(), ErrorCode::config, path(key) + " must be a string");
            out = v->get<std::string>();
        }
    }

    void forbid(const std::string& key, const std::string& why)
    {
        require(!j_.contains(key), ErrorCode::config, path(key) + " is not allowed here: " + why);
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            require(used_.count(it.key()) > 0, ErrorCode::config, "unknown key " + path(it.key()));
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

private:
    const json& j_;
    std::string where_;
    std::vector<std::string>* defaults_;
    std::set<std::string> used_;
};

inline std::vector<int> int_list(const json& v, const std::string& what)
{
    require(v.is_array(), ErrorCode::config, what + " must be an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
        require(e.is_number_integer(), ErrorCode::config, what + " must be an array of integers");
        out.push_back(e.get<int>());
    }
    return out;
}

inline json alpha_to_json(double a) { return a == kInfinity ? json("inf") : json(a); }

} // namespace detail

/// Column name of an entropy order: S_1, S_2, S_0.5, S_inf.
inline std::string entropy_label(double alpha)
{
    if (alpha == kInfinity)
        return "S_inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "S_%.15g", alpha);
    return buf;
}

/// Parses and validates a config. `base_dir` resolves relative paths.
inline ScenarioConfig parse_config(const json& j, const fs::path& base_dir = ".")
{
    ScenarioConfig c;
    auto& dflt = c.defaults_applied;
    detail::StrictObject top(j, "", &dflt);

    std::string name;
    require(top.has("scenario"), ErrorCode::config, "missing required key scenario");
    top.string("scenario", name);
    bool known = false;
    for (const auto& [s, n] : scenario_names())
        if (n == name) {
            c.scenario = s;
            known = true;
        }
    require(known, ErrorCode::config, "unknown scenario '" + name + "'");
    const Scenario sc = c.scenario;

    // Scenario defaults, overridden below by anything in the file.
    switch (sc) {
    case Scenario::page_curve_full:
    case Scenario::reconstruct:
    case Scenario::excited_init:
        c.dynamics = Dynamics::full;
        c.model.M = 6;
        c.model.N = 18;
        break;
    case Scenario::finite_size:
        c.dynamics = Dynamics::full;
        c.model.M = 4;
        c.model.N = 12;
        c.sizes = {{4, 8}, {4, 12}, {4, 16}};
        break;
    case Scenario::page_curve_lindblad:
        c.model.M = 12;
        break;
    case Scenario::gap_scaling:
    case Scenario::beta_fit:
    case Scenario::ipr:
        c.model.M = 8;
        break;
    }

    if (const json* d = top.raw("dynamics")) {
        require(d->is_string() && (*d == "full" || *d == "lindblad"), ErrorCode::config,
                "dynamics must be \"full\" or \"lindblad\"");
        c.dynamics = *d == "full" ? Dynamics::full : Dynamics::lindblad;
        require(sc != Scenario::page_curve_full || c.dynamics == Dynamics::full, ErrorCode::config,
                "page-curve-full always uses full dynamics");
        require(sc != Scenario::page_curve_lindblad || c.dynamics == Dynamics::lindblad, ErrorCode::config,
                "page-curve-lindblad always uses Lindblad dynamics");
        require(!c.multi_run() || c.dynamics == Dynamics::full, ErrorCode::config,
                "finite-size and excited-init use full dynamics");
    }
    if (c.dynamics == Dynamics::lindblad)
        c.model.N = 0;

    if (const json* m = top.raw("model")) {
        detail::StrictObject mo(*m, "model", &dflt);
        mo.number("g", c.model.g);
        mo.number("h", c.model.h);
        mo.number("J", c.model.J);
        if (sc == Scenario::finite_size) {
            mo.forbid("M", "finite-size takes its sizes from the sizes list");
            mo.forbid("N", "finite-size takes its sizes from the sizes list");
        } else {
            mo.integer("M", c.model.M);
            if (c.dynamics == Dynamics::full)
                mo.integer("N", c.model.N);
            else
                mo.forbid("N", "Lindblad dynamics has no explicit bath");
        }
        if (c.dynamics == Dynamics::lindblad) {
            mo.number("gamma", c.model.gamma);
            mo.number("dt", c.model.dt);
            mo.boolean("include_ground_jump", c.model.include_ground_jump);
        } else {
            mo.forbid("gamma", "only Lindblad dynamics has a bath coupling");
            mo.forbid("dt", "only Lindblad dynamics has a Trotter step");
            mo.forbid("include_ground_jump", "only Lindblad dynamics has jump operators");
        }
        mo.finish();
    } else {
        for (const char* k : {"g", "h", "J", "M", "N", "gamma", "dt", "include_ground_jump"})
            dflt.push_back(std::string("model.") + k);
    }

    top.number("sample_dt", c.sample_dt);
    require(c.sample_dt > 0.0, ErrorCode::config, "sample_dt must be positive", c.sample_dt);

    if (const json* a = top.raw("alphas")) {
        require(a->is_array() && !a->empty(), ErrorCode::config, "alphas must be a nonempty array");
        c.alphas.clear();
        for (const auto& e : *a) {
            if (e.is_string()) {
                require(e == "inf", ErrorCode::config, "the only string allowed in alphas is \"inf\"");
                c.alphas.push_back(kInfinity);
            } else {
                require(e.is_number(), ErrorCode::config, "alphas entries must be numbers or \"inf\"");
                c.alphas.push_back(e.get<double>());
            }
        }
        validate_alphas(c.alphas);
        std::set<double> seen(c.alphas.begin(), c.alphas.end());
        require(seen.size() == c.alphas.size(), ErrorCode::config, "alphas contains duplicates");
    }

    if (sc == Scenario::excited_init)
        top.forbid("initial_rank_from_top", "excited-init takes its ranks from the ranks list");
    else
        top.integer("initial_rank_from_top", c.initial_rank_from_top);
    top.boolean("with_currents", c.with_currents);
    top.integer("seed", c.seed);
    top.string("output_dir", c.output_dir);
    if (!c.output_dir.empty() && fs::path(c.output_dir).is_relative())
        c.output_dir = (base_dir / c.output_dir).lexically_normal().string();

    if (const json* s = top.raw("splitting")) {
        require(c.dynamics == Dynamics::lindblad, ErrorCode::config, "splitting applies to Lindblad dynamics only");
        require(s->is_string() && (*s == "first-order" || *s == "strang"), ErrorCode::config,
                "splitting must be \"first-order\" or \"strang\"");
        c.splitting = *s == "strang" ? Splitting::strang : Splitting::first_order;
    }
    if (const json* k = top.raw("krylov")) {
        require(c.dynamics == Dynamics::full, ErrorCode::config, "krylov applies to full dynamics only");
        detail::StrictObject ko(*k, "krylov", &dflt);
        ko.integer("krylov_dim", c.krylov.krylov_dim);
        ko.number("step_dt", c.krylov.step_dt);
        ko.number("error_tol", c.krylov.error_tol);
        ko.number("basis_memory_budget", c.krylov.basis_memory_budget);
        ko.finish();
    }
    top.integer("spectrum_levels", c.spectrum_levels);

    // Refinement re-runs dynamics from saved states; it is cheap for the
    // Lindblad model and expensive for 24-site closed chains.
    c.refine = c.dynamics == Dynamics::lindblad;
    if (const json* cr = top.raw("crossings")) {
        detail::StrictObject co(*cr, "crossings", &dflt);
        co.number("prominence", c.crossing.prominence);
        co.number("refine_tol", c.crossing.refine_tol);
        co.boolean("refine", c.refine);
        co.integer("level", c.crossing.level);
        co.finish();
    }
    require(c.crossing.prominence >= 0.0, ErrorCode::config, "crossings.prominence must be nonnegative");
    require(c.crossing.refine_tol > 0.0, ErrorCode::config, "crossings.refine_tol must be positive");
    require(c.crossing.level >= 0, ErrorCode::config, "crossings.level must be nonnegative");

    if (sc == Scenario::ipr)
        top.integer("ipr_levels", c.ipr_levels);
    else
        top.forbid("ipr_levels", "only the ipr scenario records IPR rows");

    if (c.fits()) {
        if (const json* f = top.raw("fit")) {
            detail::StrictObject fo(*f, "fit", &dflt);
            std::string opt = "newton";
            fo.string("optimizer", opt);
            require(opt == "newton" || opt == "nelder-mead", ErrorCode::config,
                    "fit.optimizer must be \"newton\" or \"nelder-mead\"");
            c.optimizer = opt == "newton" ? FitOptimizer::newton : FitOptimizer::nelder_mead;
            fo.integer("max_iterations", c.fit_max_iterations);
            fo.boolean("compare_currents", c.compare_currents);
            fo.finish();
        }
        top.string("source_run", c.source_run);
        if (!c.source_run.empty() && fs::path(c.source_run).is_relative())
            c.source_run = (base_dir / c.source_run).lexically_normal().string();
    } else {
        top.forbid("fit", "only beta-fit and reconstruct fit the ansatz");
        top.forbid("source_run", "only beta-fit and reconstruct can reuse snapshots");
    }
    if (sc == Scenario::beta_fit) {
        if (const json* e = top.raw("energy_levels"))
            c.energy_levels = detail::int_list(*e, "energy_levels");
    } else {
        top.forbid("energy_levels", "only beta-fit writes energy profiles");
    }
    if (sc == Scenario::excited_init) {
        if (const json* r = top.raw("ranks"))
            c.ranks = detail::int_list(*r, "ranks");
        require(!c.ranks.empty(), ErrorCode::config, "ranks must not be empty");
    } else {
        top.forbid("ranks", "only excited-init runs several initial states");
    }
    if (sc == Scenario::finite_size) {
        if (const json* s = top.raw("sizes")) {
            require(s->is_array() && !s->empty(), ErrorCode::config, "sizes must be a nonempty array of [M, N]");
            c.sizes.clear();
            for (const auto& e : *s) {
                const auto mn = detail::int_list(e, "sizes entries");
                require(mn.size() == 2, ErrorCode::config, "sizes entries must be [M, N] pairs");
                c.sizes.emplace_back(mn[0], mn[1]);
            }
        }
        std::set<std::pair<int, int>> seen(c.sizes.begin(), c.sizes.end());
        require(seen.size() == c.sizes.size(), ErrorCode::config, "sizes contains duplicates");
    } else {
        top.forbid("sizes", "only finite-size scans several sizes");
    }
    top.string("snapshots", c.snapshots);
    require(c.snapshots == "auto" || c.snapshots == "all" || c.snapshots == "none", ErrorCode::config,
            "snapshots must be \"auto\", \"all\" or \"none\"");
    top.integer("checkpoint_every", c.checkpoint_every);
    require(c.checkpoint_every >= 1, ErrorCode::config, "checkpoint_every must be at least 1");

    // t_max last: its default depends on the sizes.
    int M_ref = c.model.M, N_ref = c.model.N;
    if (sc == Scenario::finite_size)
        for (const auto& [m, n] : c.sizes) {
            M_ref = std::max(M_ref, m);
            N_ref = std::max(N_ref, n);
        }
    c.t_max = default_t_max(c.dynamics, M_ref, N_ref, c.sample_dt);
    top.number("t_max", c.t_max);
    top.finish();

    // Cross-field validation, before any compute.
    const auto check_sizes = [&](int M, int N) {
        ModelParams p = c.model;
        p.M = M;
        p.N = N;
        p.validate();
        if (c.dynamics == Dynamics::full) {
            require(N >= 1, ErrorCode::config, "full dynamics needs a bath (model.N >= 1)", N);
            require(M + N <= 28, ErrorCode::config, "M + N above 28 does not fit in memory", M + N);
        } else {
            require(M <= 13, ErrorCode::config, "Lindblad dynamics is limited to M <= 13", M);
        }
        if (c.fits())
            require((index_t{1} << M) <= kDenseThreshold, ErrorCode::config,
                    "ansatz fits need M <= 12", M);
    };
    if (sc == Scenario::finite_size) {
        c.model.M = c.sizes.front().first;
        c.model.N = c.sizes.front().second;
        for (const auto& [m, n] : c.sizes)
            check_sizes(m, n);
    } else {
        check_sizes(c.model.M, c.model.N);
    }
    const index_t dimA = index_t{1} << c.model.M;
    make_grid(c.t_max, c.sample_dt);
    if (c.dynamics == Dynamics::lindblad)
        steps_per_sample(c.sample_dt, c.model.dt);
    c.krylov.validate();
    require(c.initial_rank_from_top >= 1 && static_cast<index_t>(c.initial_rank_from_top) <= dimA,
            ErrorCode::config, "initial_rank_from_top must lie in [1, 2^M]", c.initial_rank_from_top);
    if (c.scenario == Scenario::excited_init)
        for (int k : c.ranks)
            require(k >= 1 && static_cast<index_t>(k) <= dimA, ErrorCode::config, "ranks must lie in [1, 2^M]", k);
    require(c.spectrum_levels >= 1, ErrorCode::config, "spectrum_levels must be at least 1");
    require(c.ipr_levels >= 1, ErrorCode::config, "ipr_levels must be at least 1");
    require(static_cast<index_t>(c.crossing.level) + 1 < dimA, ErrorCode::config,
            "crossings.level must leave a level above it");
    if (c.scenario == Scenario::beta_fit)
        for (int l : c.energy_levels)
            require(l >= 0 && static_cast<index_t>(l) < dimA, ErrorCode::config, "energy_levels out of range", l);
    require(c.fit_max_iterations >= 1, ErrorCode::config, "fit.max_iterations must be at least 1");
    if (!c.source_run.empty())
        require(fs::exists(fs::path(c.source_run) / "config.json"), ErrorCode::config,
                "source_run is not a pagelab output directory: " + c.source_run);
    std::sort(dflt.begin(), dflt.end());
    dflt.erase(std::unique(dflt.begin(), dflt.end()), dflt.end());
    return c;
}

inline ScenarioConfig load_config(const fs::path& path)
{
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::config, "invalid JSON in " + path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// Fully explicit form of a config; parsing it reproduces the same run.
inline json config_to_json(const ScenarioConfig& c, bool include_output_dir = true)
{
    json j;
    j["scenario"] = to_string(c.scenario);
    j["dynamics"] = to_string(c.dynamics);
    json m = {{"g", c.model.g}, {"h", c.model.h}, {"J", c.model.J}};
    if (c.scenario != Scenario::finite_size) {
        m["M"] = c.model.M;
        if (c.dynamics == Dynamics::full)
            m["N"] = c.model.N;
    }
    if (c.dynamics == Dynamics::lindblad) {
        m["gamma"] = c.model.gamma;
        m["dt"] = c.model.dt;
        m["include_ground_jump"] = c.model.include_ground_jump;
    }
    j["model"] = m;
    j["t_max"] = c.t_max;
    j["sample_dt"] = c.sample_dt;
    json al = json::array();
    for (double a : c.alphas)
        al.push_back(detail::alpha_to_json(a));
    j["alphas"] = al;
    if (c.scenario != Scenario::excited_init)
        j["initial_rank_from_top"] = c.initial_rank_from_top;
    j["with_currents"] = c.with_currents;
    j["seed"] = c.seed;
    if (include_output_dir && !c.output_dir.empty())
        j["output_dir"] = c.output_dir;
    if (c.dynamics == Dynamics::lindblad)
        j["splitting"] = c.splitting == Splitting::strang ? "strang" : "first-order";
    else
        j["krylov"] = {{"krylov_dim", c.krylov.krylov_dim},
                       {"step_dt", c.krylov.step_dt},
                       {"error_tol", c.krylov.error_tol},
                       {"basis_memory_budget", c.krylov.basis_memory_budget}};
    j["spectrum_levels"] = c.spectrum_levels;
    j["crossings"] = {{"prominence", c.crossing.prominence},
                      {"refine_tol", c.crossing.refine_tol},
                      {"refine", c.refine},
                      {"level", c.crossing.level}};
    if (c.scenario == Scenario::ipr)
        j["ipr_levels"] = c.ipr_levels;
    if (c.fits()) {
        j["fit"] = {{"optimizer", c.optimizer == FitOptimizer::newton ? "newton" : "nelder-mead"},
                    {"max_iterations", c.fit_max_iterations},
                    {"compare_currents", c.compare_currents}};
        if (!c.source_run.empty())
            j["source_run"] = c.source_run;
    }
    if (c.scenario == Scenario::beta_fit)
        j["energy_levels"] = c.energy_levels;
    if (c.scenario == Scenario::excited_init)
        j["ranks"] = c.ranks;
    if (c.scenario == Scenario::finite_size) {
        json s = json::array();
        for (const auto& [a, b] : c.sizes)
            s.push_back({a, b});
        j["sizes"] = s;
    }
    j["snapshots"] = c.snapshots;
    j["checkpoint_every"] = c.checkpoint_every;
    return j;
}

/// Identity of a run: the explicit config without its output location.
inline std::string config_hash(const ScenarioConfig& c) { return hex64(fnv1a(config_to_json(c, false).dump())); }

} // namespace pagelab
