// Command-line front end: run, sweep, resume and validate scenario configs.

#include <CLI11.hpp>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>

#include "pagelab/runner.hpp"

extern char** environ;

namespace {

using namespace pagelab;

fs::path self_executable(const char* argv0)
{
    std::error_code ec;
    const fs::path p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? fs::absolute(argv0) : p;
}

int report(const RunResult& r)
{
    std::cout << r.status << ": " << r.message << "\n";
    if (!r.output_dir.empty())
        std::cout << "output: " << r.output_dir.string() << "\n";
    return r.exit_code;
}

/// Runs `exe run <config> --output <dir>` as a child process with its output
/// captured in log_file. Returns the child's exit code (128 + signal if killed).
int spawn_run(const fs::path& exe, const SweepJob& job, const fs::path& log_file, bool force,
              const std::string& child_threads)
{
    std::vector<std::string> args = {exe.string(), "run", job.config_path.string(), "--output",
                                     job.output_dir.string()};
    if (force)
        args.push_back("--force");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    argv.push_back(nullptr);

    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e)
        if (std::string_view(*e).rfind("PAGELAB_THREADS=", 0) != 0)
            env_store.emplace_back(*e);
    env_store.push_back("PAGELAB_THREADS=" + child_threads);
    std::vector<char*> envp;
    for (auto& e : env_store)
        envp.push_back(e.data());
    envp.push_back(nullptr);

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, exe.c_str(), &fa, nullptr, argv.data(), envp.data());
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0)
        throw std::runtime_error("could not start " + exe.string() + ": " + std::strerror(rc));
    int status = 0;
    while (waitpid(pid, &status, 0) < 0)
        if (errno != EINTR)
            throw std::runtime_error("waitpid failed");
    if (WIFEXITED(status))
        return WEXITSTATUS(status);
    return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pagelab: entanglement dynamics of a mixed-field Ising chain"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kPagelabVersion));

    std::string config_path, output, sweep_dir, sweep_out;
    bool force = false, quiet = false;
    unsigned workers = 1;

    auto* run = app.add_subcommand("run", "Run one scenario config");
    run->add_option("config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--output", output, "Output directory (overrides output_dir)");
    run->add_flag("-f,--force", force, "Recompute even if matching outputs exist");
    run->add_flag("-q,--quiet", quiet, "Suppress progress messages");

    auto* sweep = app.add_subcommand("sweep", "Run every *.json config in a directory");
    sweep->add_option("dir", sweep_dir, "Directory of configs")->required()->check(CLI::ExistingDirectory);
    sweep->add_option("-w,--workers", workers, "Concurrent runs")->check(CLI::PositiveNumber);
    sweep->add_option("-o,--output", sweep_out, "Aggregate directory (default <dir>/sweep)");
    sweep->add_flag("-f,--force", force, "Recompute runs whose outputs already exist");

    auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
    resume->add_option("output_dir", output, "Output directory of the run")->required();
    resume->add_flag("-q,--quiet", quiet, "Suppress progress messages");

    auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults applied");
    validate->add_option("config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    RunOptions ro;
    ro.force = force;
    if (quiet)
        ro.log = nullptr;

    if (*validate) {
        try {
            const ScenarioConfig c = load_config(config_path);
            json out = config_to_json(c);
            std::cout << out.dump(2) << "\n";
            std::cerr << "valid " << to_string(c.scenario) << " config, hash " << config_hash(c) << "\n";
            if (!c.defaults_applied.empty()) {
                std::cerr << "defaults applied:";
                for (const auto& d : c.defaults_applied)
                    std::cerr << " " << d;
                std::cerr << "\n";
            }
            return 0;
        } catch (const Error& e) {
            std::cerr << "invalid config: " << e.what() << "\n";
            return exit_code_for(e.code());
        }
    }

    if (*run) {
        ScenarioConfig c;
        try {
            c = load_config(config_path);
        } catch (const Error& e) {
            std::cerr << "invalid config: " << e.what() << "\n";
            return exit_code_for(e.code());
        }
        if (!output.empty())
            c.output_dir = output;
        return report(run_scenario(c, ro));
    }

    if (*resume)
        return report(resume_run(output, ro));

    // sweep
    const fs::path exe = self_executable(argv[0]);
    const std::string child_threads = std::to_string(std::max(1u, thread_budget() / std::max(1u, workers)));
    SweepOptions so;
    so.workers = workers;
    so.out = sweep_out;
    so.force = force;
    so.launch = [&](const SweepJob& j, const fs::path& log) { return spawn_run(exe, j, log, force, child_threads); };
    try {
        const SweepResult r = run_sweep(sweep_dir, so);
        std::size_t ok = 0;
        for (const auto& j : r.jobs)
            ok += j.exit_code == 0;
        std::cout << "sweep: " << ok << "/" << r.jobs.size() << " runs succeeded\n";
        for (const auto& j : r.jobs)
            if (j.exit_code != 0)
                std::cout << "  " << j.config_path.filename().string() << ": exit " << j.exit_code << " "
                          << j.message << "\n";
        return r.exit_code;
    } catch (const Error& e) {
        std::cerr << "sweep failed: " << e.what() << "\n";
        return exit_code_for(e.code());
    }
}
