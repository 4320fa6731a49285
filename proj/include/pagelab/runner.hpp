#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "pagelab/config.hpp"
#include "pagelab/entanglement.hpp"
#include "pagelab/hydro.hpp"
#include "pagelab/io.hpp"
#include "pagelab/trajectory.hpp"

namespace pagelab {

/// Runs fn(i) for every i in [0, n) on up to `threads` workers. Results must
/// be stored by index; if several calls throw, the lowest index wins, so the
/// outcome never depends on scheduling.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn)
{
    threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

/// Thrown by the test hook that simulates a crash after a given sample.
struct RunInterrupted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunOptions {
    bool force = false;  // recompute even if a complete run with this config exists
    bool resume = false; // continue from checkpoints instead of starting over
    std::ostream* log = &std::cerr;
    /// Test hook: stop (as if killed) right after sample k was checkpointed.
    std::optional<std::size_t> interrupt_after;
};

struct RunResult {
    int exit_code = 0;
    std::string status; // complete | up-to-date | failed | not-converged | interrupted
    std::string message;
    fs::path output_dir;
    json summary;
};

namespace detail {

inline std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

inline std::string sample_name(const char* prefix, std::size_t k, const char* ext)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%06zu.%s", prefix, k, ext);
    return buf;
}

inline json profile_to_json(const BetaProfile& p)
{
    return {{"time", p.time},
            {"beta_site", p.beta_site},
            {"beta_bond", p.beta_bond},
            {"current_zx", p.current_zx},
            {"loss", p.loss},
            {"loss_h", p.loss_h},
            {"relative_entropy", p.relative_entropy},
            {"iterations", p.iterations},
            {"converged", p.converged}};
}

inline BetaProfile profile_from_json(const json& j)
{
    BetaProfile p;
    p.time = j.at("time").get<double>();
    p.beta_site = j.at("beta_site").get<std::vector<double>>();
    p.beta_bond = j.at("beta_bond").get<std::vector<double>>();
    p.current_zx = j.at("current_zx").get<std::vector<double>>();
    p.loss = j.at("loss").get<double>();
    p.loss_h = j.at("loss_h").get<double>();
    p.relative_entropy = j.at("relative_entropy").get<double>();
    p.iterations = j.at("iterations").get<int>();
    p.converged = j.at("converged").get<bool>();
    return p;
}

inline std::string versions_compiler()
{
#if defined(__clang__)
    return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    return std::string("gcc ") + __VERSION__;
#else
    return "unknown";
#endif
}

inline json version_info()
{
    return {{"pagelab", kPagelabVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"compiler", versions_compiler()},
            {"formats", {{"snapshot", "PGS1"}, {"state", "PGV1"}, {"operator", "PGL1"}, {"records", "msgpack-1"}}}};
}

/// Linear-interpolated times where v changes sign between consecutive samples.
inline std::vector<double> sign_changes(const std::vector<double>& t, const std::vector<double>& v)
{
    std::vector<double> out;
    for (std::size_t i = 1; i < v.size(); ++i) {
        const bool a = v[i - 1] < 0.0, b = v[i] < 0.0;
        if (a != b) {
            const double w = v[i - 1] / (v[i - 1] - v[i]);
            out.push_back(t[i - 1] + w * (t[i] - t[i - 1]));
        }
    }
    return out;
}

} // namespace detail

/// One trajectory of a scenario: a model, an initial state and a directory.
struct TrajectoryTask {
    std::string label; // empty for single-trajectory scenarios
    fs::path dir;
    ModelParams model;
    index_t rank = 1;
};

/// Per-sample measurements written to the record log.
class SampleAnalyzer {
public:
    SampleAnalyzer(const ScenarioConfig& cfg, const ModelParams& p)
        : cfg_(cfg)
        , p_(p)
        , h_(build_hamiltonian(p, p.M))
    {
        keep_ = 3;
        for (int l : cfg.energy_levels)
            if (cfg.scenario == Scenario::beta_fit)
                keep_ = std::max(keep_, l + 1);
        keep_ = static_cast<int>(std::min<index_t>(static_cast<index_t>(keep_), index_t{1} << p.M));
        if (cfg.scenario == Scenario::ipr)
            reference_ = extremal_eigenstate(h_, Extremal::ground);
        if (cfg.fits()) {
            fit_opt_.optimizer = cfg.optimizer;
            fit_opt_.max_iterations = cfg.fit_max_iterations;
            fit_opt_.nelder_mead.max_iterations = std::max(cfg.fit_max_iterations, 5000);
        }
    }

    json analyze(std::size_t k, double t, const DensityMatrix& rho, const json* prev) const
    {
        const bool want_ipr = cfg_.scenario == Scenario::ipr;
        const auto snap = entanglement_snapshot(rho, t, cfg_.alphas, want_ipr ? -1 : keep_);
        require(snap.min_raw_eigenvalue >= -1e-8, ErrorCode::integration,
                "density matrix lost positivity at t = " + format_double(t), snap.min_raw_eigenvalue);
        json rec;
        rec["k"] = k;
        rec["t"] = t;
        rec["eigenvalues"] = to_json(snap.eigenvalues);
        rec["vectors"] = to_json(ComplexMatrix(snap.eigenvectors.leftCols(keep_)));
        rec["energy"] = h_.expectation(rho.matrix).real();
        rec["purity"] = snap.eigenvalues.squaredNorm();
        rec["min_raw_eigenvalue"] = snap.min_raw_eigenvalue;
        if (want_ipr) {
            const auto row = ipr_row(snap, reference_);
            rec["ipr"] = row.ipr;
            const Eigen::Index n = std::min<Eigen::Index>(cfg_.ipr_levels, row.magnitudes.size());
            rec["ipr_c"] = to_json(RealVector(row.magnitudes.head(n)));
        }
        if (cfg_.scenario == Scenario::beta_fit) {
            EntanglementSnapshot trimmed = snap;
            json ep = json::array();
            for (const auto& e : energy_profiles(trimmed, rho, p_, cfg_.energy_levels))
                ep.push_back({{"level", e.level},
                              {"total", e.per_site_total},
                              {"bond", e.per_site_bond},
                              {"field", e.per_site_field}});
            rec["energy_profiles"] = ep;
        }
        if (cfg_.fits()) {
            rec["fit"] = fit(rho, t, cfg_.with_currents, prev, "fit");
            if (cfg_.compare_currents)
                rec["fit_alt"] = fit(rho, t, !cfg_.with_currents, prev, "fit_alt");
        }
        return rec;
    }

    int kept_vectors() const { return keep_; }

private:
    json fit(const DensityMatrix& rho, double t, bool currents, const json* prev, const char* key) const
    {
        std::optional<BetaProfile> warm;
        if (prev && prev->contains(key) && prev->at(key).is_object())
            warm = detail::profile_from_json(prev->at(key));
        BetaProfile prof = fit_beta_profile(rho, p_, currents, warm ? &*warm : nullptr, fit_opt_);
        prof.time = t;
        return detail::profile_to_json(prof);
    }

    const ScenarioConfig& cfg_;
    ModelParams p_;
    SparseHermitianOperator h_;
    ComplexVector reference_;
    FitOptions fit_opt_;
    int keep_ = 3;
};

/// Analysed trajectory rebuilt from its record log.
struct TrajectoryResult {
    TrajectoryTask task;
    std::vector<EntanglementSnapshot> series;
    std::vector<json> records;
    std::vector<CrossingEvent> crossings;
    std::map<double, std::optional<PageTime>> page_times; // by alpha
    json summary;
};


class TrajectoryRunner {
public:
    TrajectoryRunner(const ScenarioConfig& cfg, TrajectoryTask task, const RunOptions& opt)
        : cfg_(cfg)
        , task_(std::move(task))
        , opt_(opt)
        , grid_(make_grid(cfg.t_max, cfg.sample_dt))
    {
    }

    const SampleGrid& grid() const { return grid_; }

    /// Evolves and records every sample not yet on disk.
    void evolve()
    {
        fs::create_directories(task_.dir);
        const RecordLog log(task_.dir / "records.bin");
        const fs::path ckpt_path = task_.dir / "checkpoint.json";
        std::size_t k0 = 0;
        json ckpt;
        if (opt_.resume && fs::exists(ckpt_path)) {
            ckpt = json::parse(read_file(ckpt_path));
            k0 = ckpt.at("k").get<std::size_t>();
            log.truncate(k0 + 1);
            records_ = log.read_all();
            require(records_.size() == k0 + 1, ErrorCode::io, "record log does not match the checkpoint");
            if (k0 + 1 == grid_.count) {
                say("all " + std::to_string(grid_.count) + " samples already recorded");
                return;
            }
            say("resuming after sample " + std::to_string(k0));
        } else {
            for (const char* f : {"records.bin", "checkpoint.json"})
                fs::remove(task_.dir / f);
            for (const char* d : {"probes", "snapshots", "state"})
                fs::remove_all(task_.dir / d);
            records_.clear();
        }
        gaps_.clear();
        for (const auto& r : records_)
            gaps_.push_back(gap_of(r));
        if (cfg_.writes_snapshots(task_.model.M))
            fs::create_directories(task_.dir / "snapshots");
        fs::create_directories(task_.dir / "state");
        if (cfg_.refine)
            fs::create_directories(task_.dir / "probes");

        const SampleAnalyzer analyzer(cfg_, task_.model);
        if (!cfg_.source_run.empty())
            evolve_replay(analyzer, k0, ckpt);
        else if (cfg_.dynamics == Dynamics::full)
            evolve_full(analyzer, k0, ckpt);
        else
            evolve_lindblad(analyzer, k0, ckpt);
    }

    /// Rebuilds the snapshot series from disk and runs the crossing analysis.
    TrajectoryResult analyse() const
    {
        TrajectoryResult res;
        res.task = task_;
        res.records = RecordLog(task_.dir / "records.bin").read_all();
        require(res.records.size() == grid_.count, ErrorCode::io,
                "record log is incomplete in " + task_.dir.string());
        for (const auto& r : res.records) {
            EntanglementSnapshot s;
            s.time = r.at("t").get<double>();
            s.eigenvalues = real_vector_from_json(r.at("eigenvalues"));
            s.eigenvectors = complex_matrix_from_json(r.at("vectors"));
            s.alphas = cfg_.alphas;
            for (double a : cfg_.alphas)
                s.entropies.push_back(renyi_entropy(s.eigenvalues, a));
            s.min_raw_eigenvalue = r.at("min_raw_eigenvalue").get<double>();
            res.series.push_back(std::move(s));
        }
        for (double a : cfg_.alphas) {
            try {
                res.page_times[a] = page_time_detail(res.series, a);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::not_converged)
                    throw;
                res.page_times[a] = std::nullopt;
            }
        }
        res.crossings = find_crossings(res.series);
        return res;
    }

private:
    void say(const std::string& msg) const
    {
        if (opt_.log)
            *opt_.log << "[" << (task_.label.empty() ? to_string(cfg_.scenario) : task_.label) << "] " << msg
                      << std::endl;
    }

    double gap_of(const json& r) const
    {
        const RealVector ev = real_vector_from_json(r.at("eigenvalues"));
        const int n = cfg_.crossing.level;
        return std::log(std::max(ev[n], kSpectrumClip)) - std::log(std::max(ev[n + 1], kSpectrumClip));
    }

    /// Records sample k and reports whether sample k-1 is a local gap minimum.
    bool record(const SampleAnalyzer& an, std::size_t k, const DensityMatrix& rho)
    {
        const double t = grid_.time(k);
        json rec = an.analyze(k, t, rho, records_.empty() ? nullptr : &records_.back());
        RecordLog(task_.dir / "records.bin").append(rec);
        if (cfg_.writes_snapshots(task_.model.M))
            save_snapshot(task_.dir / "snapshots" / detail::sample_name("rho", k, "pgs"), rho, t);
        gaps_.push_back(gap_of(rec));
        // Keep only what the next sample's analysis needs in memory.
        if (!records_.empty())
            records_.back() = json{{"fit", records_.back().value("fit", json())},
                                   {"fit_alt", records_.back().value("fit_alt", json())}};
        records_.push_back(std::move(rec));
        if (k % 10 == 0 || k + 1 == grid_.count) {
            const auto& s = records_.back();
            say("t = " + format_double(t) + "  S_1 = " +
                format_double(renyi_entropy(real_vector_from_json(s.at("eigenvalues")), 1.0)));
        }
        const std::size_t i = k - 1;
        return k >= 2 && gaps_[i] < gaps_[i - 1] && gaps_[i] <= gaps_[k];
    }

    template <typename State, typename Save>
    void checkpoint(std::size_t k, const State& cur, const State* prev, const char* ext, Save&& save)
    {
        if (!(k % static_cast<std::size_t>(cfg_.checkpoint_every) == 0 || k + 1 == grid_.count))
            return;
        const fs::path sdir = task_.dir / "state";
        const std::string cur_name = detail::sample_name("state", k, ext);
        save(sdir / cur_name, cur, grid_.time(k));
        json j = {{"k", k}, {"time", grid_.time(k)}, {"state", cur_name}};
        if (prev && k >= 1) {
            const std::string prev_name = detail::sample_name("state", k - 1, ext);
            if (!fs::exists(sdir / prev_name))
                save(sdir / prev_name, *prev, grid_.time(k - 1));
            j["previous_state"] = prev_name;
        }
        write_file_atomic(task_.dir / "checkpoint.json", j.dump(2));
        for (const auto& e : fs::directory_iterator(sdir)) {
            const std::string n = e.path().filename().string();
            if (n != cur_name && n != j.value("previous_state", std::string()))
                fs::remove(e.path());
        }
        if (opt_.interrupt_after && *opt_.interrupt_after == k)
            throw RunInterrupted("interrupted after sample " + std::to_string(k));
    }

    template <typename State, typename Load>
    void restore(const json& ckpt, State& cur, std::optional<State>& prev, Load&& load) const
    {
        const fs::path sdir = task_.dir / "state";
        cur = load(sdir / ckpt.at("state").get<std::string>());
        if (ckpt.contains("previous_state"))
            prev = load(sdir / ckpt.at("previous_state").get<std::string>());
    }

    void evolve_lindblad(const SampleAnalyzer& an, std::size_t k0, const json& ckpt)
    {
        const LindbladEvolver ev(task_.model, cfg_.splitting);
        const auto save = [](const fs::path& p, const DensityMatrix& r, double t) { save_snapshot(p, r, t); };
        const auto load = [](const fs::path& p) { return load_snapshot(p); };
        DensityMatrix cur;
        std::optional<DensityMatrix> prev, prev2;
        if (ckpt.is_null()) {
            cur = lindblad_initial_state(task_.model, task_.rank);
            record(an, 0, cur);
            checkpoint(0, cur, static_cast<const DensityMatrix*>(nullptr), "pgs", save);
        } else {
            restore(ckpt, cur, prev, load);
        }
        const int per = steps_per_sample(grid_.sample_dt, task_.model.dt);
        for (std::size_t k = k0 + 1; k < grid_.count; ++k) {
            DensityMatrix next = cur;
            for (int s = 0; s < per; ++s)
                next = ev.checked_step(next);
            if (cfg_.refine) {
                prev2 = std::move(prev);
                prev = std::move(cur);
            }
            cur = std::move(next);
            if (record(an, k, cur) && cfg_.refine && prev2)
                save_snapshot(task_.dir / "probes" / detail::sample_name("state", k - 2, "pgs"), *prev2,
                              grid_.time(k - 2));
            checkpoint(k, cur, cfg_.refine && prev ? &*prev : nullptr, "pgs", save);
        }
    }

    void evolve_full(const SampleAnalyzer& an, std::size_t k0, const json& ckpt)
    {
        const FullSystemEvolver ev(task_.model, cfg_.krylov);
        if (ev.uses_chebyshev())
            say("state too large for a Lanczos basis; using the Chebyshev propagator");
        const auto save = [](const fs::path& p, const ComplexVector& v, double t) { save_state_vector(p, v, t); };
        const auto load = [](const fs::path& p) { return load_state_vector(p); };
        ComplexVector cur;
        std::optional<ComplexVector> prev, prev2;
        if (ckpt.is_null()) {
            cur = full_system_initial_state(task_.model, task_.rank);
            record(an, 0, ev.reduce(cur));
            checkpoint(0, cur, static_cast<const ComplexVector*>(nullptr), "pgv", save);
        } else {
            restore(ckpt, cur, prev, load);
        }
        for (std::size_t k = k0 + 1; k < grid_.count; ++k) {
            ComplexVector next = ev.advance(cur, grid_.sample_dt);
            if (cfg_.refine) {
                prev2 = std::move(prev);
                prev = std::move(cur);
            }
            cur = std::move(next);
            if (record(an, k, ev.reduce(cur)) && cfg_.refine && prev2)
                save_state_vector(task_.dir / "probes" / detail::sample_name("state", k - 2, "pgv"), *prev2,
                                  grid_.time(k - 2));
            checkpoint(k, cur, cfg_.refine && prev ? &*prev : nullptr, "pgv", save);
        }
    }

    /// Reads rho_A snapshots written by an earlier run instead of evolving.
    void evolve_replay(const SampleAnalyzer& an, std::size_t k0, const json& ckpt)
    {
        const fs::path src = fs::path(cfg_.source_run) / "snapshots";
        const auto save = [](const fs::path&, const int&, double) {};
        const std::size_t first = ckpt.is_null() ? 0 : k0 + 1;
        for (std::size_t k = first; k < grid_.count; ++k) {
            double t = 0.0;
            const fs::path f = src / detail::sample_name("rho", k, "pgs");
            require(fs::exists(f), ErrorCode::config, "source_run has no snapshot " + f.string());
            const DensityMatrix rho = load_snapshot(f, &t);
            require(t == grid_.time(k), ErrorCode::config, "source_run snapshot times do not match sample_dt");
            require(rho.dim() == (index_t{1} << task_.model.M), ErrorCode::config,
                    "source_run snapshots do not match model.M");
            record(an, k, rho);
            const int dummy = 0;
            checkpoint(k, dummy, static_cast<const int*>(nullptr), "none", save);
        }
    }

    /// Crossing detection, with restart-from-state refinement when probe
    /// states exist. Refinements run in parallel and are memoised so the
    /// sequential detection pass reuses them.
    std::vector<CrossingEvent> find_crossings(const std::vector<EntanglementSnapshot>& series) const
    {
        const auto coarse = detect_crossings(series, cfg_.crossing);
        if (!cfg_.refine || !cfg_.source_run.empty() || coarse.empty())
            return coarse;
        const bool full = cfg_.dynamics == Dynamics::full;
        const char* ext = full ? "pgv" : "pgs";
        struct Memo {
            std::map<double, double> values;
            GapProbe probe;
        };
        std::map<std::size_t, std::shared_ptr<Memo>> memos;
        for (const auto& e : coarse) {
            const std::size_t i = e.sample_index;
            const fs::path f = task_.dir / "probes" / detail::sample_name("state", i - 1, ext);
            if (!fs::exists(f))
                continue;
            auto memo = std::make_shared<Memo>();
            const double t0 = grid_.time(i - 1);
            const int level = cfg_.crossing.level;
            if (full) {
                auto ev = std::make_shared<FullSystemEvolver>(task_.model, cfg_.krylov);
                auto psi0 = std::make_shared<ComplexVector>(load_state_vector(f));
                memo->probe = [ev, psi0, t0, level](double t) {
                    const ComplexVector psi = ev->advance(*psi0, t - t0);
                    return entanglement_snapshot(ev->reduce(psi), t, {kInfinity}, 0).log_gap(level);
                };
            } else {
                auto ev = std::make_shared<LindbladEvolver>(task_.model, cfg_.splitting);
                auto rho0 = std::make_shared<DensityMatrix>(load_snapshot(f));
                memo->probe = [ev, rho0, t0, level](double t) {
                    const DensityMatrix rho = ev->advance(*rho0, t - t0);
                    return entanglement_snapshot(rho, t, {kInfinity}, 0).log_gap(level);
                };
            }
            memos[i] = memo;
        }
        std::vector<std::size_t> keys;
        for (const auto& [i, m] : memos)
            keys.push_back(i);
        const index_t dim = index_t{1} << (task_.model.M + (full ? task_.model.N : 0));
        const unsigned threads = full && dim >= (index_t{1} << 22) ? 1u : thread_budget();
        say("refining " + std::to_string(keys.size()) + " crossing candidates");
        parallel_for(keys.size(), threads, [&](std::size_t n) {
            const std::size_t i = keys[n];
            auto& m = *memos.at(i);
            golden_section_minimize(
                [&](double t) {
                    const double v = m.probe(t);
                    m.values[t] = v;
                    return v;
                },
                series[i - 1].time, series[i + 1].time, cfg_.crossing.refine_tol);
        });
        const ProbeFactory factory = [&](std::size_t i) -> GapProbe {
            const auto it = memos.find(i);
            if (it == memos.end())
                return {};
            auto m = it->second;
            return [m](double t) {
                const auto hit = m->values.find(t);
                return hit != m->values.end() ? hit->second : m->probe(t);
            };
        };
        return detect_crossings(series, cfg_.crossing, factory);
    }

    const ScenarioConfig& cfg_;
    TrajectoryTask task_;
    const RunOptions& opt_;
    SampleGrid grid_;
    std::vector<json> records_;
    std::vector<double> gaps_;
};

// ---------------------------------------------------------------------------
// Output writers

namespace detail {

inline void save_plot(const fs::path& path, const PlotSpec& spec) { write_file_atomic(path, render_svg(spec)); }

inline std::vector<double> times_of(const TrajectoryResult& r)
{
    std::vector<double> t;
    for (const auto& s : r.series)
        t.push_back(s.time);
    return t;
}

/// The crossing that marks the Page transition: the last event at or before
/// the S_inf maximum (one sample interval of slack).
inline std::optional<std::size_t> page_crossing(const TrajectoryResult& r, double sample_dt)
{
    const auto it = r.page_times.find(kInfinity);
    if (it == r.page_times.end() || !it->second || r.crossings.empty())
        return std::nullopt;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < r.crossings.size(); ++i)
        if (r.crossings[i].t_star <= it->second->time + sample_dt + 1e-9)
            best = i;
    return best;
}

inline json crossing_json(const CrossingEvent& e)
{
    return {{"t_star", e.t_star},     {"min_gap", e.min_gap},       {"level_pair", e.level_pair()},
            {"flag", e.flag},         {"t_error", e.t_error},       {"gap_error", e.gap_error},
            {"sample_index", e.sample_index}, {"overlap_before", e.overlap_before},
            {"overlap_across", e.overlap_across}, {"bhattacharyya_jump", e.bhattacharyya_jump},
            {"labels_exchanged", e.labels_exchanged}};
}

inline CsvTable profiles_table(const std::vector<BetaProfile>& profs, int M)
{
    std::vector<std::string> h = {"time"};
    for (int i = 0; i < M; ++i)
        h.push_back("beta_" + std::to_string(i));
    for (int i = 0; i + 1 < M; ++i)
        h.push_back("betab_" + std::to_string(i));
    for (int i = 0; i + 1 < M; ++i)
        h.push_back("jzx_" + std::to_string(i));
    h.push_back("loss");
    h.push_back("converged");
    CsvTable t(h);
    for (const auto& p : profs) {
        std::vector<double> row = {p.time};
        row.insert(row.end(), p.beta_site.begin(), p.beta_site.end());
        row.insert(row.end(), p.beta_bond.begin(), p.beta_bond.end());
        for (int i = 0; i + 1 < M; ++i)
            row.push_back(p.with_currents() ? p.current_zx[i] : 0.0);
        row.push_back(p.loss);
        row.push_back(p.converged ? 1.0 : 0.0);
        t.add_numbers(row);
    }
    return t;
}

inline CsvTable entropy_table(const std::vector<EntanglementSnapshot>& series, const std::vector<double>& alphas)
{
    std::vector<std::string> h = {"time"};
    for (double a : alphas)
        h.push_back(entropy_label(a));
    CsvTable t(h);
    for (const auto& s : series) {
        std::vector<double> row = {s.time};
        row.insert(row.end(), s.entropies.begin(), s.entropies.end());
        t.add_numbers(row);
    }
    return t;
}

inline CsvTable spectrum_table(const std::vector<EntanglementSnapshot>& series, int levels)
{
    const Eigen::Index k = std::min<Eigen::Index>(levels, series.front().eigenvalues.size());
    std::vector<std::string> h = {"time"};
    for (Eigen::Index i = 0; i < k; ++i)
        h.push_back("lambda_" + std::to_string(i));
    CsvTable t(h);
    for (const auto& s : series) {
        std::vector<double> row = {s.time};
        for (Eigen::Index i = 0; i < k; ++i)
            row.push_back(s.eigenvalues[i]);
        t.add_numbers(row);
    }
    return t;
}

} // namespace detail

/// Writes every per-trajectory CSV and plot and returns the summary.
inline json write_trajectory_outputs(const ScenarioConfig& cfg, TrajectoryResult& r)
{
    const fs::path& dir = r.task.dir;
    const int M = r.task.model.M;
    const auto t = detail::times_of(r);
    std::vector<double> markers;
    for (const auto& e : r.crossings)
        markers.push_back(e.t_star);
    json summary;
    summary["label"] = r.task.label;
    summary["M"] = M;
    if (cfg.dynamics == Dynamics::full)
        summary["N"] = r.task.model.N;
    summary["initial_rank_from_top"] = r.task.rank;
    summary["samples"] = r.series.size();

    // Entropies.
    const CsvTable ent = detail::entropy_table(r.series, cfg.alphas);
    ent.save(dir / "entropies.csv");
    json pt = json::object();
    for (const auto& [a, p] : r.page_times) {
        const std::string lab = entropy_label(a);
        if (p)
            pt[lab] = {{"time", p->time}, {"sample_time", r.series[p->index].time}, {"peak", p->peak}};
        else
            pt[lab] = nullptr;
        if (p)
            markers.push_back(p->time);
    }
    summary["page_time"] = pt;
    {
        auto spec = plot_columns(ent, "time", "Renyi entropies", "entropy (nats)");
        if (r.page_times.count(kInfinity) && r.page_times.at(kInfinity))
            spec.markers = {r.page_times.at(kInfinity)->time};
        detail::save_plot(dir / "entropies.svg", spec);
    }

    // Spectrum.
    const CsvTable spec_t = detail::spectrum_table(r.series, cfg.spectrum_levels);
    spec_t.save(dir / "spectrum.csv");
    {
        PlotSpec sp{"Entanglement spectrum", "time", "-log lambda_n", {}, {}};
        for (std::size_t c = 1; c < spec_t.header().size(); ++c) {
            auto y = spec_t.column(spec_t.header()[c]);
            for (auto& v : y)
                v = v > 0.0 ? -std::log(v) : std::numeric_limits<double>::quiet_NaN();
            sp.series.push_back({spec_t.header()[c], t, y});
        }
        sp.markers = markers;
        detail::save_plot(dir / "spectrum.svg", sp);
    }

    // Crossings.
    CsvTable cr({"t_star", "min_gap", "level_pair", "flag"});
    CsvTable crd({"t_star", "t_error", "min_gap", "gap_error", "sample_index", "overlap_before", "overlap_across",
                  "bhattacharyya_jump", "labels_exchanged"});
    json cj = json::array();
    for (const auto& e : r.crossings) {
        cr.add({e.t_star, e.min_gap, e.level_pair(), e.flag});
        crd.add_numbers({e.t_star, e.t_error, e.min_gap, e.gap_error, static_cast<double>(e.sample_index),
                         e.overlap_before, e.overlap_across, e.bhattacharyya_jump, e.labels_exchanged ? 1.0 : 0.0});
        cj.push_back(detail::crossing_json(e));
    }
    cr.save(dir / "crossings.csv");
    crd.save(dir / "crossing_diagnostics.csv");
    {
        std::vector<double> g;
        for (const auto& s : r.series)
            g.push_back(s.log_gap(cfg.crossing.level));
        PlotSpec sp{"Log gap of the top pair", "time", "log lambda_n - log lambda_n+1", {{"log gap", t, g}}, markers};
        detail::save_plot(dir / "crossings.svg", sp);
    }
    summary["crossings"] = cj;
    if (!r.crossings.empty())
        summary["first_crossing"] = detail::crossing_json(r.crossings.front());
    const auto pc = detail::page_crossing(r, cfg.sample_dt);
    summary["page_crossing"] = pc ? detail::crossing_json(r.crossings[*pc]) : json(nullptr);
    summary["crossings_up_to_page"] = pc ? static_cast<int>(*pc) + 1 : 0;

    // Bhattacharyya overlaps of the top eigenvector.
    const RealMatrix ov = overlap_matrix(r.series, 0);
    {
        std::string s = "time";
        for (double tt : t)
            s += "," + format_double(tt);
        s += '\n';
        for (Eigen::Index i = 0; i < ov.rows(); ++i) {
            s += format_double(t[i]);
            for (Eigen::Index j = 0; j < ov.cols(); ++j)
                s += "," + format_double(ov(i, j));
            s += '\n';
        }
        write_file_atomic(dir / "overlap_matrix.csv", s);
        std::vector<double> adj(t.size(), 1.0), first(t.size()), last(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (i > 0)
                adj[i] = ov(i - 1, i);
            first[i] = ov(0, i);
            last[i] = ov(ov.rows() - 1, i);
        }
        detail::save_plot(dir / "overlap_matrix.svg",
                          {"Top-eigenvector overlaps", "time", "Bhattacharyya coefficient",
                           {{"B(t-dt, t)", t, adj}, {"B(0, t)", t, first}, {"B(t_max, t)", t, last}}, markers});
    }

    // Energy, purity, positivity.
    CsvTable obs({"time", "energy", "purity", "min_eigenvalue"});
    for (const auto& rec : r.records)
        obs.add_numbers({rec.at("t").get<double>(), rec.at("energy").get<double>(), rec.at("purity").get<double>(),
                         rec.at("min_raw_eigenvalue").get<double>()});
    obs.save(dir / "observables.csv");
    detail::save_plot(dir / "observables.svg",
                      {"Subsystem energy", "time", "<H_A>", {{"energy", t, obs.column("energy")}}, markers});
    {
        double e0 = 0.0;
        extremal_eigenstate(build_hamiltonian(r.task.model, M), Extremal::ground, &e0);
        summary["ground_energy"] = e0;
        summary["final_energy"] = obs.column("energy").back();
    }
    {
        const auto sinf = ent.column(entropy_label(cfg.alphas.back()));
        const std::size_t n0 = sinf.size() - std::max<std::size_t>(1, sinf.size() / 10);
        double acc = 0.0;
        for (std::size_t i = n0; i < sinf.size(); ++i)
            acc += sinf[i];
        summary["late_mean_" + entropy_label(cfg.alphas.back())] = acc / static_cast<double>(sinf.size() - n0);
        json fin = json::object();
        for (std::size_t a = 0; a < cfg.alphas.size(); ++a)
            fin[entropy_label(cfg.alphas[a])] = r.series.back().entropies[a];
        summary["final_entropies"] = fin;
    }

    // IPR of the ground state of H in the instantaneous eigenbasis.
    if (cfg.scenario == Scenario::ipr) {
        const auto c0 = real_vector_from_json(r.records.front().at("ipr_c"));
        std::vector<std::string> h = {"time", "ipr"};
        for (Eigen::Index i = 0; i < c0.size(); ++i)
            h.push_back("c_" + std::to_string(i));
        CsvTable ip(h);
        for (const auto& rec : r.records) {
            std::vector<double> row = {rec.at("t").get<double>(), rec.at("ipr").get<double>()};
            const auto c = real_vector_from_json(rec.at("ipr_c"));
            row.insert(row.end(), c.data(), c.data() + c.size());
            ip.add_numbers(row);
        }
        ip.save(dir / "ipr.csv");
        detail::save_plot(dir / "ipr.svg",
                          {"IPR of the ground state of H", "time", "IPR", {{"ipr", t, ip.column("ipr")}}, markers});
        // Longest run of IPR > 0.5 that ends before the S_inf maximum.
        const auto ipr = ip.column("ipr");
        const auto pinf = r.page_times.count(kInfinity) ? r.page_times.at(kInfinity) : std::nullopt;
        std::size_t best = 0, run = 0, best_end = 0;
        for (std::size_t i = 0; i < ipr.size(); ++i) {
            if (pinf && t[i] >= pinf->time)
                break;
            run = ipr[i] > 0.5 ? run + 1 : 0;
            if (run > best) {
                best = run;
                best_end = i;
            }
        }
        summary["ipr_window_samples"] = best;
        summary["ipr_window_intervals"] = best > 0 ? best - 1 : 0;
        summary["ipr_window_end"] = best > 0 ? t[best_end] : std::numeric_limits<double>::quiet_NaN();
    }

    // Fits, energy profiles and reconstruction.
    if (cfg.fits()) {
        std::vector<BetaProfile> prim, alt;
        for (const auto& rec : r.records) {
            prim.push_back(detail::profile_from_json(rec.at("fit")));
            if (rec.contains("fit_alt"))
                alt.push_back(detail::profile_from_json(rec.at("fit_alt")));
        }
        const CsvTable bt = detail::profiles_table(prim, M);
        bt.save(dir / "beta_profiles.csv");
        {
            PlotSpec sp{"Fitted site inverse temperatures", "time", "beta_i", {}, markers};
            for (int i = 0; i < M; ++i)
                sp.series.push_back({"beta_" + std::to_string(i), t, bt.column("beta_" + std::to_string(i))});
            detail::save_plot(dir / "beta_profiles.svg", sp);
        }
        if (!alt.empty()) {
            const std::string name = cfg.with_currents ? "beta_profiles_no_currents" : "beta_profiles_with_currents";
            detail::profiles_table(alt, M).save(dir / (name + ".csv"));
        }
        const auto& with = cfg.with_currents ? prim : alt;
        const auto& without = cfg.with_currents ? alt : prim;
        CsvTable fl({"time", "loss_with", "loss_without", "loss_h_with", "loss_h_without", "rel_entropy_with",
                     "rel_entropy_without", "iterations_with", "iterations_without"});
        bool currents_never_worse = true;
        std::size_t non_converged = 0;
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            const auto get = [&](const std::vector<BetaProfile>& v, auto field) {
                return v.empty() ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(field(v[i]));
            };
            fl.add_numbers({t[i], get(with, [](const BetaProfile& p) { return p.loss; }),
                            get(without, [](const BetaProfile& p) { return p.loss; }),
                            get(with, [](const BetaProfile& p) { return p.loss_h; }),
                            get(without, [](const BetaProfile& p) { return p.loss_h; }),
                            get(with, [](const BetaProfile& p) { return p.relative_entropy; }),
                            get(without, [](const BetaProfile& p) { return p.relative_entropy; }),
                            get(with, [](const BetaProfile& p) { return p.iterations; }),
                            get(without, [](const BetaProfile& p) { return p.iterations; })});
            if (!with.empty() && !without.empty() &&
                with[i].relative_entropy > without[i].relative_entropy + 1e-9)
                currents_never_worse = false;
            non_converged += prim[i].converged ? 0 : 1;
        }
        fl.save(dir / "fit_losses.csv");
        detail::save_plot(dir / "fit_losses.svg",
                          {"Fit quality", "time", "D(rho || ansatz)",
                           {{"with currents", t, fl.column("rel_entropy_with")},
                            {"without currents", t, fl.column("rel_entropy_without")}},
                           markers});
        summary["fit_non_converged"] = non_converged;
        summary["currents_never_worse"] = currents_never_worse;
        json sc = json::object();
        for (int i : {0, M - 1}) {
            const auto v = bt.column("beta_" + std::to_string(i));
            sc["beta_" + std::to_string(i)] = detail::sign_changes(t, v);
        }
        summary["beta_sign_changes"] = sc;

        if (cfg.scenario == Scenario::beta_fit) {
            CsvTable ep({"time", "level", "site", "e_total", "e_bond", "e_field"});
            std::vector<std::vector<double>> full_total(M);
            for (const auto& rec : r.records) {
                const double tt = rec.at("t").get<double>();
                for (const auto& e : rec.at("energy_profiles")) {
                    const int level = e.at("level").get<int>();
                    const auto tot = e.at("total").get<std::vector<double>>();
                    const auto bond = e.at("bond").get<std::vector<double>>();
                    const auto field = e.at("field").get<std::vector<double>>();
                    for (int i = 0; i < M; ++i) {
                        ep.add_numbers({tt, static_cast<double>(level), static_cast<double>(i), tot[i], bond[i],
                                        field[i]});
                        if (level == -1)
                            full_total[i].push_back(tot[i]);
                    }
                }
            }
            ep.save(dir / "energy_profiles.csv");
            PlotSpec sp{"Local energy Tr(rho h_i)", "time", "e_total", {}, markers};
            for (int i = 0; i < M; ++i)
                sp.series.push_back({"site " + std::to_string(i), t, full_total[i]});
            detail::save_plot(dir / "energy_profiles.svg", sp);
        }

        if (cfg.scenario == Scenario::reconstruct) {
            const auto rec = reconstruct_entropies(prim, r.task.model, cfg.alphas);
            const CsvTable re = detail::entropy_table(rec, cfg.alphas);
            re.save(dir / "reconstructed_entropies.csv");
            detail::spectrum_table(rec, cfg.spectrum_levels).save(dir / "reconstructed_spectrum.csv");
            PlotSpec sp{"Direct and reconstructed entropies", "time", "entropy (nats)", {}, markers};
            for (double a : cfg.alphas) {
                const std::string lab = entropy_label(a);
                sp.series.push_back({lab, t, ent.column(lab)});
                sp.series.push_back({lab + " ansatz", t, re.column(lab)});
            }
            detail::save_plot(dir / "reconstructed_entropies.svg", sp);
            json rj = json::object();
            for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
                const std::string lab = entropy_label(cfg.alphas[a]);
                const auto d = ent.column(lab), x = re.column(lab);
                double peak = 0.0, dev = 0.0;
                for (std::size_t i = 0; i < d.size(); ++i) {
                    peak = std::max(peak, d[i]);
                    dev = std::max(dev, std::abs(d[i] - x[i]));
                }
                json entry = {{"max_abs_deviation", dev}, {"direct_peak", peak}};
                try {
                    entry["page_time"] = page_time_detail(rec, cfg.alphas[a]).time;
                } catch (const Error&) {
                    entry["page_time"] = nullptr;
                }
                rj[lab] = entry;
            }
            summary["reconstruction"] = rj;
        }
    }

    write_file_atomic(dir / "summary.json", summary.dump(2));
    return summary;
}

// ---------------------------------------------------------------------------
// Scenario driver

namespace detail {

inline std::vector<TrajectoryTask> plan_tasks(const ScenarioConfig& cfg, const fs::path& out)
{
    std::vector<TrajectoryTask> tasks;
    if (cfg.scenario == Scenario::finite_size) {
        for (const auto& [m, n] : cfg.sizes) {
            ModelParams p = cfg.model;
            p.M = m;
            p.N = n;
            const std::string lab = "M" + std::to_string(m) + "_N" + std::to_string(n);
            tasks.push_back({lab, out / "runs" / lab, p, static_cast<index_t>(cfg.initial_rank_from_top)});
        }
    } else if (cfg.scenario == Scenario::excited_init) {
        for (int k : cfg.ranks) {
            const std::string lab = "k" + std::to_string(k);
            tasks.push_back({lab, out / "runs" / lab, cfg.model, static_cast<index_t>(k)});
        }
    } else {
        tasks.push_back({"", out, cfg.model, static_cast<index_t>(cfg.initial_rank_from_top)});
    }
    return tasks;
}

/// Peak working set of one trajectory in bytes (rough, for scheduling).
inline double task_memory(const ScenarioConfig& cfg, const TrajectoryTask& t)
{
    if (cfg.dynamics == Dynamics::lindblad)
        return 16.0 * std::pow(2.0, 2 * t.model.M) * 8;
    const double dim = std::pow(2.0, t.model.M + t.model.N);
    return 16.0 * dim * (cfg.krylov.krylov_dim + 8);
}

inline void check_source_run(const ScenarioConfig& cfg)
{
    if (cfg.source_run.empty())
        return;
    const ScenarioConfig src = load_config(fs::path(cfg.source_run) / "config.json");
    require(!src.multi_run(), ErrorCode::config, "source_run must be a single-trajectory run");
    require(src.dynamics == cfg.dynamics, ErrorCode::config, "source_run used different dynamics");
    const auto& a = src.model;
    const auto& b = cfg.model;
    require(a.g == b.g && a.h == b.h && a.J == b.J && a.M == b.M && a.N == b.N, ErrorCode::config,
            "source_run used a different model");
    require(src.sample_dt == cfg.sample_dt && cfg.t_max <= src.t_max, ErrorCode::config,
            "source_run does not cover the requested sample grid");
    require(src.writes_snapshots(src.model.M), ErrorCode::config, "source_run did not write snapshots");
    const fs::path man = fs::path(cfg.source_run) / "manifest.json";
    // A run that ended with a late Page time still recorded every snapshot.
    const std::string status = fs::exists(man) ? json::parse(read_file(man)).value("status", "") : "";
    require(status == "complete" || status == "not-converged", ErrorCode::config,
            "source_run did not finish its trajectory");
}

inline void write_multi_run_outputs(const ScenarioConfig& cfg, const fs::path& out,
                                    std::vector<TrajectoryResult>& results, json& summary)
{
    const std::string sinf = entropy_label(cfg.alphas.back());
    const std::string s1 = entropy_label(cfg.alphas.front());
    PlotSpec overlay{cfg.scenario == Scenario::finite_size ? "Finite-size scan" : "Excited initial states", "time",
                     sinf, {}, {}};
    std::vector<std::string> h = cfg.scenario == Scenario::finite_size
                                     ? std::vector<std::string>{"M", "N"}
                                     : std::vector<std::string>{"k"};
    for (const auto& x : {"page_time_" + s1, "page_time_" + sinf, "peak_" + s1, "peak_" + sinf, "final_" + s1,
                          "final_" + sinf, "late_mean_" + sinf})
        h.push_back(x);
    CsvTable t(h);
    json runs = json::array();
    for (auto& r : results) {
        const json& s = r.summary;
        std::vector<double> row;
        if (cfg.scenario == Scenario::finite_size)
            row = {static_cast<double>(r.task.model.M), static_cast<double>(r.task.model.N)};
        else
            row = {static_cast<double>(r.task.rank)};
        const auto pt = [&](const std::string& lab, const char* what) {
            const json& p = s.at("page_time").at(lab);
            return p.is_null() ? std::numeric_limits<double>::quiet_NaN() : p.at(what).get<double>();
        };
        const auto ent = detail::entropy_table(r.series, cfg.alphas);
        const auto max_of = [&](const std::string& lab) {
            const auto v = ent.column(lab);
            return *std::max_element(v.begin(), v.end());
        };
        row.push_back(pt(s1, "time"));
        row.push_back(pt(sinf, "time"));
        row.push_back(max_of(s1));
        row.push_back(max_of(sinf));
        row.push_back(s.at("final_entropies").at(s1).get<double>());
        row.push_back(s.at("final_entropies").at(sinf).get<double>());
        row.push_back(s.at("late_mean_" + sinf).get<double>());
        t.add_numbers(row);
        overlay.series.push_back({r.task.label, times_of(r), ent.column(sinf)});
        runs.push_back(s);
    }
    const std::string base = cfg.scenario == Scenario::finite_size ? "finite_size" : "excited_init";
    t.save(out / (base + ".csv"));
    save_plot(out / (base + ".svg"), overlay);
    summary["runs"] = runs;
}

} // namespace detail

/// Runs one scenario end to end. Never throws for run failures: the error is
/// reported through the exit code, the manifest and the returned message.
inline RunResult run_scenario(ScenarioConfig cfg, const RunOptions& opt = {})
{
    RunResult res;
    const auto t_start = std::chrono::steady_clock::now();
    if (cfg.output_dir.empty())
        cfg.output_dir = "output/" + to_string(cfg.scenario) + "-" + config_hash(cfg).substr(0, 8);
    const fs::path out = cfg.output_dir;
    res.output_dir = out;
    const std::string hash = config_hash(cfg);
    const fs::path man_path = out / "manifest.json";

    json manifest;
    try {
        if (fs::exists(man_path)) {
            const json old = json::parse(read_file(man_path));
            const bool same = old.value("config_hash", "") == hash;
            if (same && old.value("status", "") == "complete" && !opt.force) {
                res.status = "up-to-date";
                res.message = "outputs in " + out.string() + " already match this config";
                if (fs::exists(out / "summary.json"))
                    res.summary = json::parse(read_file(out / "summary.json"));
                return res;
            }
            require(same || opt.force, ErrorCode::config,
                    out.string() + " holds a run with a different config; use --force to overwrite");
            if (same && opt.resume)
                manifest = old;
        } else {
            require(!opt.resume, ErrorCode::config, "nothing to resume in " + out.string());
        }
        fs::create_directories(out);
        if (manifest.is_null()) {
            manifest = {{"versions", detail::version_info()},
                        {"config", config_to_json(cfg)},
                        {"defaults_applied", cfg.defaults_applied},
                        {"config_hash", hash},
                        {"wall_time_seconds", 0.0},
                        {"segments", json::array()}};
            write_file_atomic(out / "config.json", config_to_json(cfg).dump(2));
        }
        manifest["status"] = "running";
        manifest["threads"] = thread_budget();
        manifest["snapshot_policy"] = cfg.snapshots;
        manifest["segments"].push_back({{"started", detail::utc_now()}, {"resumed", opt.resume}});
        write_file_atomic(man_path, manifest.dump(2));
    } catch (const Error& e) {
        res.exit_code = exit_code_for(e.code());
        res.status = "failed";
        res.message = e.what();
        return res;
    }

    const auto finish = [&](int code, const std::string& status, const std::string& msg) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        manifest["wall_time_seconds"] = manifest.value("wall_time_seconds", 0.0) + secs;
        manifest["segments"].back()["seconds"] = secs;
        manifest["status"] = status;
        manifest["exit_code"] = code;
        manifest["message"] = msg;
        std::vector<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(out))
            if (e.is_regular_file()) {
                const auto ext = e.path().extension().string();
                if (ext == ".csv" || ext == ".svg" || e.path().filename() == "summary.json")
                    files.push_back(fs::relative(e.path(), out).string());
            }
        std::sort(files.begin(), files.end());
        manifest["outputs"] = files;
        write_file_atomic(man_path, manifest.dump(2));
        res.exit_code = code;
        res.status = status;
        res.message = msg;
    };

    try {
        detail::check_source_run(cfg);
        auto tasks = detail::plan_tasks(cfg, out);
        double peak = 0.0;
        for (const auto& t : tasks)
            peak = std::max(peak, detail::task_memory(cfg, t));
        const unsigned by_memory = static_cast<unsigned>(std::max(1.0, std::floor(3.0e9 / peak)));
        const unsigned threads = std::min(thread_budget(), by_memory);
        std::vector<TrajectoryResult> results(tasks.size());
        parallel_for(tasks.size(), threads, [&](std::size_t i) {
            TrajectoryRunner tr(cfg, tasks[i], opt);
            tr.evolve();
            results[i] = tr.analyse();
        });
        json summary = {{"scenario", to_string(cfg.scenario)}, {"config_hash", hash}};
        for (auto& r : results)
            r.summary = write_trajectory_outputs(cfg, r);
        if (cfg.multi_run())
            detail::write_multi_run_outputs(cfg, out, results, summary);
        else
            summary.update(results.front().summary);

        // Scenario-level checks that turn into exit code 4.
        std::vector<std::string> problems;
        for (const auto& r : results) {
            const std::string who = r.task.label.empty() ? "" : r.task.label + ": ";
            for (const auto& [a, p] : r.page_times)
                if (!p)
                    problems.push_back(who + entropy_label(a) + " peaks at an end of the time window");
        }
        if (cfg.scenario == Scenario::gap_scaling) {
            const auto& r = results.front();
            const auto pc = detail::page_crossing(r, cfg.sample_dt);
            if (r.crossings.empty() || !pc) {
                problems.push_back("no Page-time crossing found");
            } else {
                const auto& f = r.crossings.front();
                const auto& p = r.crossings[*pc];
                summary["gap_sample"] = {{"M", cfg.model.M},
                                         {"gap_first", f.min_gap},
                                         {"gap_first_error", f.gap_error},
                                         {"t_first", f.t_star},
                                         {"gap_page", p.min_gap},
                                         {"gap_page_error", p.gap_error},
                                         {"t_page", p.t_star},
                                         {"first_is_page", *pc == 0}};
            }
        }
        summary["problems"] = problems;
        write_file_atomic(out / "summary.json", summary.dump(2));
        res.summary = summary;
        if (problems.empty()) {
            finish(0, "complete", "ok");
        } else {
            std::string msg;
            for (const auto& p : problems)
                msg += (msg.empty() ? "" : "; ") + p;
            finish(4, "not-converged", msg);
        }
    } catch (const RunInterrupted& e) {
        finish(130, "interrupted", e.what());
    } catch (const Error& e) {
        finish(exit_code_for(e.code()), "failed", e.what());
    } catch (const json::exception& e) {
        finish(1, "failed", std::string("corrupt run data: ") + e.what());
    } catch (const fs::filesystem_error& e) {
        finish(1, "failed", e.what());
    }
    return res;
}

/// Continues an interrupted run from its checkpoints.
inline RunResult resume_run(const fs::path& output_dir, RunOptions opt = {})
{
    RunResult res;
    res.output_dir = output_dir;
    try {
        require(fs::exists(output_dir / "config.json"), ErrorCode::config,
                output_dir.string() + " is not a pagelab output directory");
        ScenarioConfig cfg = load_config(output_dir / "config.json");
        cfg.output_dir = output_dir.string();
        opt.resume = true;
        return run_scenario(cfg, opt);
    } catch (const Error& e) {
        res.exit_code = exit_code_for(e.code());
        res.status = "failed";
        res.message = e.what();
        return res;
    }
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepJob {
    fs::path config_path;
    std::string hash;
    std::string scenario;
    fs::path output_dir;
    int exit_code = 0;
    std::string status;
    std::string message;
};

struct SweepOptions {
    unsigned workers = 1;
    fs::path out;                  // aggregate directory (default <dir>/sweep)
    bool force = false;
    std::ostream* log = &std::cerr;
    /// Launches one run and returns its exit status. The CLI spawns a child
    /// process so crashes stay isolated; tests may run in-process.
    std::function<int(const SweepJob&, const fs::path& log_file)> launch;
};

struct SweepResult {
    int exit_code = 0;
    std::vector<SweepJob> jobs;
    json aggregate;
};

inline SweepResult run_sweep(const fs::path& dir, SweepOptions opt)
{
    SweepResult sr;
    require(fs::is_directory(dir), ErrorCode::config, dir.string() + " is not a directory");
    const fs::path out = opt.out.empty() ? dir / "sweep" : opt.out;
    fs::create_directories(out / "logs");

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<SweepJob> jobs;
    for (const auto& f : files) {
        SweepJob j;
        j.config_path = f;
        try {
            const ScenarioConfig c = load_config(f);
            j.hash = config_hash(c);
            j.scenario = to_string(c.scenario);
            j.output_dir = c.output_dir.empty() ? out / "runs" / f.stem() : fs::path(c.output_dir);
        } catch (const Error& e) {
            j.hash = hex64(fnv1a(f.filename().string()));
            j.exit_code = exit_code_for(e.code());
            j.status = "invalid";
            j.message = e.what();
        }
        jobs.push_back(j);
    }
    // Deterministic order: config hash, then file name.
    std::sort(jobs.begin(), jobs.end(), [](const SweepJob& a, const SweepJob& b) {
        return std::tie(a.hash, a.config_path) < std::tie(b.hash, b.config_path);
    });
    std::set<fs::path> taken;
    for (auto& j : jobs)
        if (j.status.empty() && !taken.insert(j.output_dir.lexically_normal()).second) {
            j.exit_code = 2;
            j.status = "invalid";
            j.message = "output_dir collides with another config in the sweep";
        }

    std::vector<std::size_t> runnable;
    for (std::size_t i = 0; i < jobs.size(); ++i)
        if (jobs[i].status.empty())
            runnable.push_back(i);
    std::mutex log_mu;
    parallel_for(runnable.size(), opt.workers, [&](std::size_t n) {
        SweepJob& j = jobs[runnable[n]];
        const fs::path lf = out / "logs" / (j.config_path.stem().string() + ".log");
        {
            std::lock_guard<std::mutex> lock(log_mu);
            if (opt.log)
                *opt.log << "[sweep] start " << j.config_path.filename().string() << std::endl;
        }
        try {
            j.exit_code = opt.launch(j, lf);
        } catch (const std::exception& e) {
            j.exit_code = 1;
            j.message = e.what();
        }
        j.status = j.exit_code == 0 ? "ok" : "failed";
        std::lock_guard<std::mutex> lock(log_mu);
        if (opt.log)
            *opt.log << "[sweep] " << j.status << " (exit " << j.exit_code << ") "
                     << j.config_path.filename().string() << std::endl;
    });

    CsvTable st({"config_hash", "config", "scenario", "exit_code", "status", "output_dir"});
    for (const auto& j : jobs)
        st.add({j.hash, j.config_path.filename().string(), j.scenario.empty() ? std::string("-") : j.scenario,
                static_cast<double>(j.exit_code), j.status, j.output_dir.string()});
    st.save(out / "sweep_summary.csv");

    // Gap-scaling aggregate over the surviving runs.
    std::map<int, GapSample> per_size;
    std::map<int, json> details;
    json omitted = json::array();
    for (const auto& j : jobs) {
        if (j.scenario != "gap-scaling")
            continue;
        if (j.exit_code != 0) {
            omitted.push_back({{"config", j.config_path.filename().string()}, {"reason", j.status}});
            continue;
        }
        const json s = json::parse(read_file(j.output_dir / "summary.json"));
        const json& g = s.at("gap_sample");
        const int M = g.at("M").get<int>();
        if (per_size.count(M)) {
            omitted.push_back({{"config", j.config_path.filename().string()}, {"reason", "duplicate M"}});
            continue;
        }
        per_size[M] = {g.at("gap_first").get<double>(), g.at("gap_page").get<double>()};
        details[M] = g;
        details[M]["config_hash"] = j.hash;
    }
    json agg = {{"runs", jobs.size()}, {"omitted", omitted}};
    CsvTable gt({"M", "gap_first", "gap_first_error", "t_first", "gap_page", "gap_page_error", "t_page"});
    for (const auto& [M, g] : details)
        gt.add_numbers({static_cast<double>(M), g.at("gap_first").get<double>(), g.at("gap_first_error").get<double>(),
                        g.at("t_first").get<double>(), g.at("gap_page").get<double>(),
                        g.at("gap_page_error").get<double>(), g.at("t_page").get<double>()});
    gt.save(out / "gap_scaling.csv");
    const auto fits = gap_scaling(per_size);
    const auto fit_json = [](const std::optional<LinearFit>& f) -> json {
        if (!f)
            return nullptr;
        return {{"slope", f->slope},         {"slope_se", f->slope_se}, {"intercept", f->intercept},
                {"intercept_se", f->intercept_se}, {"r_squared", f->r_squared}, {"points", f->points}};
    };
    agg["first"] = {{"exponential", fit_json(fits.first.exponential)}, {"power_law", fit_json(fits.first.power_law)}};
    agg["page"] = {{"exponential", fit_json(fits.page.exponential)}, {"power_law", fit_json(fits.page.power_law)}};
    agg["excluded"] = fits.excluded;
    agg["sizes"] = fits.sizes;
    write_file_atomic(out / "gap_scaling_fit.json", agg.dump(2));
    {
        std::vector<double> m, lf, lp;
        for (std::size_t i = 0; i < fits.sizes.size(); ++i) {
            m.push_back(fits.sizes[i]);
            lf.push_back(fits.gaps_first[i] > 0 ? std::log(fits.gaps_first[i]) : std::nan(""));
            lp.push_back(fits.gaps_page[i] > 0 ? std::log(fits.gaps_page[i]) : std::nan(""));
        }
        detail::save_plot(out / "gap_scaling.svg",
                          {"Minimum log gap vs M", "M", "log(min gap)", {{"first", m, lf}, {"page", m, lp}}, {}});
    }
    sr.aggregate = agg;
    sr.jobs = jobs;
    sr.exit_code = 0;
    for (const auto& j : jobs)
        if (j.exit_code != 0)
            sr.exit_code = 1;
    return sr;
}

} // namespace pagelab
