// fidelity: command-line front end for fitting, solving, simulating, and serving.

#include "fidelity/em.hpp"
#include "fidelity/io.hpp"
#include "fidelity/policy.hpp"
#include "fidelity/presets.hpp"
#include "fidelity/sampling.hpp"
#include "fidelity/service/server.hpp"
#include "fidelity/sim/output.hpp"
#include "fidelity/sim/simulator.hpp"
#include "fidelity/sim/stats.hpp"
#include "fidelity/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <pthread.h>
#include <unistd.h>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fidelity;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kConvergence = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
    return out;
}

/// `policy.json` -> `policy.manifest.json`; directories get `<dir>/<subcommand>.manifest.json`.
fs::path manifest_path(const fs::path& output, const std::string& subcommand, bool is_dir) {
    if (is_dir) return output / (subcommand + ".manifest.json");
    auto p = output;
    return p.replace_extension(".manifest.json");
}

struct Manifest {
    Manifest(std::string sub, json cfg) : subcommand(std::move(sub)), config(std::move(cfg)) {}

    std::string subcommand;
    json config;
    json inputs = json::object();
    json outputs = json::object();
    std::optional<std::uint64_t> seed;
    std::string started = utc_now();

    void write(const fs::path& path, int exit_code) const {
        json doc = {{"subcommand", subcommand},
                    {"config", config},
                    {"inputs", inputs},
                    {"outputs", outputs},
                    {"seed", seed ? json(std::to_string(*seed)) : json(nullptr)},
                    {"tool_version", std::string(kVersion)},
                    {"started_at", started},
                    {"finished_at", utc_now()},
                    {"exit_code", exit_code}};
        write_file(path, doc.dump(2) + "\n");
    }
};

json file_ref(const fs::path& p) {
    return {{"path", p.string()}, {"hash", content_hash(read_file(p))}};
}

// ---------------------------------------------------------------- shared options

struct ModelSource {
    std::string path;
    std::string preset;

    void add(CLI::App* app, const std::string& flag = "--model") {
        app->add_option(flag, path, "Workload model JSON");
        app->add_option("--preset", preset, "Built-in model instead of a file")->check(CLI::IsMember({"dual_task"}));
    }
    bool given() const { return !path.empty() || !preset.empty(); }
    json to_json() const { return path.empty() ? json{{"preset", preset}} : json{{"path", path}}; }
    WorkloadModel load() const {
        if (!path.empty() && !preset.empty()) throw UsageError("give either --model or --preset, not both");
        if (!path.empty()) return read_model(path);
        if (preset == "dual_task") return presets::dual_task_model();
        throw UsageError("a model is required (--model or --preset dual_task)");
    }
};

struct SolveFlags {
    SolveOptions opts;
    int actions = 2;
    int max_queue = opts.queue.max_length;
    const ModelSource* source = nullptr;
    CLI::Option* rate = nullptr;

    void add(CLI::App* app, const ModelSource* model_source = nullptr) {
        source = model_source;
        app->add_option("--actions", actions, "Action set: 2 = {N,H}, 3 = {N,H,D}")->check(CLI::IsMember({2, 3}))->capture_default_str();
        app->add_option("--gamma", opts.gamma, "Discount factor in [0,1)")->capture_default_str();
        app->add_option("--grid-step", opts.grid_step, "Belief grid step")->capture_default_str();
        app->add_option("--vi-tol", opts.tol, "Value iteration sup-norm tolerance")->capture_default_str();
        rate = app->add_option("--arrival-rate", opts.queue.arrival_rate,
                               "Poisson arrival rate (tasks/s); --preset dual_task defaults to its scenario rate")
                   ->capture_default_str();
        app->add_option("--max-queue", max_queue, "Queue capacity L")->capture_default_str();
        app->add_option("--t-high", opts.queue.t_high, "High-fidelity task duration (s)")->capture_default_str();
        app->add_option("--t-normal", opts.queue.t_normal, "Normal-fidelity task duration (s)")->capture_default_str();
        app->add_option("--alpha1", opts.reward.alpha1, "Reward weight on detection")->capture_default_str();
        app->add_option("--alpha2", opts.reward.alpha2, "Penalty weight on false alarms")->capture_default_str();
        app->add_option("--alpha3", opts.reward.alpha3, "Penalty weight on queue length")->capture_default_str();
        app->add_option("--delegation-accuracy", opts.reward.delegation_accuracy, "Autonomy accuracy in [0,1]")->capture_default_str();
        app->add_option("--step-detected", opts.steps.detected, "Bin width for o1")->capture_default_str();
        app->add_option("--step-false-alarms", opts.steps.false_alarms, "Bin width for o2")->capture_default_str();
        app->add_option("--step-reaction-ms", opts.steps.reaction_ms, "Bin width for o3 (ms)")->capture_default_str();
    }
    SolveOptions resolved() const {
        auto o = opts;
        if (source && source->preset == "dual_task" && rate && rate->count() == 0)
            o.queue.arrival_rate = presets::dual_task_queue().arrival_rate;
        o.queue.max_length = max_queue;
        o.action_set = actions == 3 ? ActionSet::WithDelegation : ActionSet::Servicing;
        return o;
    }
    json to_json() const {
        const auto o = resolved();
        return {{"actions", actions},        {"gamma", o.gamma},
                {"grid_step", o.grid_step},  {"vi_tol", o.tol},
                {"queue", queue_to_json(o.queue)}, {"reward", reward_to_json(o.reward)},
                {"steps", steps_to_json(o.steps)}};
    }
};

struct EmFlags {
    EmConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--restarts", cfg.restarts, "Random EM restarts")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--max-iters", cfg.max_iters, "EM iteration cap per restart")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--em-tol", cfg.tol, "Relative log-likelihood tolerance")->capture_default_str();
        app->add_option("--variance-floor", cfg.variance_floor, "Variance below which a channel becomes a point mass")->capture_default_str();
        app->add_option("--seed", cfg.seed, "Seed for restart initialization")->capture_default_str();
        app->add_option("--step-detected", cfg.steps.detected, "Bin width for o1")->capture_default_str();
        app->add_option("--step-false-alarms", cfg.steps.false_alarms, "Bin width for o2")->capture_default_str();
        app->add_option("--step-reaction-ms", cfg.steps.reaction_ms, "Bin width for o3 (ms)")->capture_default_str();
        app->add_flag("--normalize", cfg.normalize_criteria, "Divide AIC/BIC by the number of trajectories");
    }
    json to_json() const {
        return {{"restarts", cfg.restarts},   {"max_iters", cfg.max_iters},
                {"tol", cfg.tol},             {"variance_floor", cfg.variance_floor},
                {"seed", std::to_string(cfg.seed)}, {"steps", steps_to_json(cfg.steps)},
                {"normalize", cfg.normalize_criteria}};
    }
};

struct SimFlags {
    SolveFlags solve;
    ModelSource truth;
    std::string engine_model;
    std::string policy = "optimal";
    int episodes = 1000;
    int tasks = 48;
    int initial_queue = 1;
    double missed_cue = 0.02;
    double noise = 0;
    std::uint64_t seed = 1;

    void add(CLI::App* app) {
        truth.add(app);
        app->add_option("--engine-model", engine_model, "Model the engine tracks beliefs with (default: --model)");
        app->add_option("--policy", policy, "optimal, a policy JSON path, or a baseline name")->capture_default_str();
        app->add_option("--episodes", episodes, "Episodes per policy")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--tasks", tasks, "Tasks per episode")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--initial-queue", initial_queue, "Queue length at episode start")->capture_default_str();
        app->add_option("--missed-cue-prob", missed_cue, "Probability the secondary cue is missed")->capture_default_str();
        app->add_option("--reaction-noise", noise, "SD (ms) of noise on observed reaction times")->capture_default_str();
        app->add_option("--seed", seed, "Master seed")->capture_default_str();
        solve.add(app, &truth);
    }
    json to_json() const {
        return {{"model", truth.to_json()},
                {"engine_model", engine_model.empty() ? json(nullptr) : json(engine_model)},
                {"policy", policy},
                {"episodes", episodes},
                {"tasks", tasks},
                {"initial_queue", initial_queue},
                {"missed_cue_prob", missed_cue},
                {"reaction_noise", noise},
                {"seed", std::to_string(seed)},
                {"solve", solve.to_json()}};
    }
    sim::SimConfig config() const {
        sim::SimConfig c;
        c.ground_truth = truth.load();
        if (!engine_model.empty()) c.engine_model = read_model(engine_model);
        const auto o = solve.resolved();
        c.queue = o.queue;
        c.reward = o.reward;
        c.grid_step = o.grid_step;
        c.steps = o.steps;
        c.tasks_per_episode = tasks;
        c.episodes = episodes;
        c.initial_queue = initial_queue;
        c.missed_cue_prob = missed_cue;
        c.reaction_noise_sd = noise;
        c.seed = seed;
        sim::validate(c);
        return c;
    }
};

void check_compatible(const PolicyTable& p, const sim::SimConfig& c) {
    if (!(p.grid == BeliefGrid(c.grid_step)))
        throw DataError("policy grid step " + format_number(p.grid.step()) + " does not match --grid-step " + format_number(c.grid_step));
    if (p.max_queue != c.queue.max_length)
        throw DataError("policy queue capacity " + std::to_string(p.max_queue) + " does not match --max-queue " +
                        std::to_string(c.queue.max_length));
}

/// Resolves --policy: "optimal" solves on the engine model, a baseline name builds the baseline,
/// anything else is read as a policy file.
std::unique_ptr<sim::Policy> make_policy(const std::string& spec, const SimFlags& flags, const sim::SimConfig& c,
                                         bool& converged) {
    converged = true;
    if (spec == "optimal") {
        const auto solved = solve_policy(c.engine(), flags.solve.resolved());
        converged = solved.solution.converged;
        return std::make_unique<sim::TablePolicy>(solved.policy, "optimal");
    }
    if (const auto kind = sim::parse_baseline(spec)) return sim::baseline_policy(*kind);
    auto table = read_policy(spec);
    check_compatible(table, c);
    return std::make_unique<sim::TablePolicy>(std::move(table), fs::path(spec).stem().string());
}

void print_stats_header(std::ostream& os) {
    os << std::left << std::setw(16) << "policy" << std::right << std::setw(8) << "n" << std::setw(14) << "mean" << std::setw(12)
       << "sd" << "\n";
}

void print_stats(std::ostream& os, const std::string& name, const sim::BatchResult& r) {
    os << std::left << std::setw(16) << name << std::right << std::setw(8) << r.scores.size() << std::fixed << std::setprecision(2)
       << std::setw(14) << r.mean << std::setw(12) << r.sd << "\n";
    os.unsetf(std::ios::fixed);
}

void add_show_config(CLI::App* app, bool& flag) {
    app->add_flag("--show-config", flag, "Print the resolved configuration as JSON and exit");
}

// ---------------------------------------------------------------- subcommands

struct GenerateCmd {
    ModelSource model;
    std::string out;
    int traces = 1000;
    int steps = 48;
    int block = 4;
    std::uint64_t seed = 1;
    bool show = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("generate", "Sample a synthetic trace dataset from a model");
        model.add(c);
        c->add_option("--out", out, "Output JSONL path");
        c->add_option("--traces", traces, "Number of sessions")->check(CLI::PositiveNumber)->capture_default_str();
        c->add_option("--steps", steps, "Tasks per session")->check(CLI::PositiveNumber)->capture_default_str();
        c->add_option("--block", block, "Length of N/H blocks in the action schedule")->check(CLI::PositiveNumber)->capture_default_str();
        c->add_option("--seed", seed, "Sampling seed")->capture_default_str();
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    json config() const {
        return {{"model", model.to_json()}, {"out", out}, {"traces", traces}, {"steps", steps}, {"block", block},
                {"seed", std::to_string(seed)}};
    }
    int run() const {
        if (out.empty()) throw UsageError("--out is required");
        Manifest m{"generate", config()};
        m.seed = seed;
        const auto data = synthetic_dataset(model.load(), static_cast<std::size_t>(traces), static_cast<std::size_t>(steps), seed,
                                            static_cast<std::size_t>(block));
        write_traces(out, data);
        m.outputs["dataset"] = file_ref(out);
        m.write(manifest_path(out, "generate", false), kOk);
        std::cout << "wrote " << data.size() << " traces to " << out << "\n";
        return kOk;
    }
    bool run_ = false;
};

struct FitCmd {
    std::string data, out, report;
    int k = 2;
    EmFlags em;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("fit", "Fit a workload model to a trace dataset with EM");
        c->add_option("--data", data, "Trace dataset (JSONL)");
        c->add_option("--k", k, "Number of hidden workload states")->check(CLI::PositiveNumber)->capture_default_str();
        c->add_option("--out", out, "Output model JSON");
        c->add_option("--report", report, "Fit report JSON (default: <out stem>.report.json)");
        em.add(c);
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    fs::path report_path() const { return report.empty() ? fs::path(out).replace_extension(".report.json") : fs::path(report); }
    json config() const {
        return {{"data", data}, {"k", k}, {"out", out}, {"report", out.empty() ? report : report_path().string()}, {"em", em.to_json()}};
    }
    int run() const {
        if (data.empty() || out.empty()) throw UsageError("--data and --out are required");
        Manifest m{"fit", config()};
        m.seed = em.cfg.seed;
        m.inputs["data"] = file_ref(data);
        const auto traces = read_traces(fs::path(data));
        const auto r = em_fit(traces, k, em.cfg);
        write_model(out, r.model);
        auto rep = fit_report_to_json(r);
        write_file(report_path(), rep.dump(2) + "\n");
        const auto ic = information_criteria(r);
        std::cout << "k=" << k << " loglik=" << format_number(r.log_likelihood) << " params=" << r.num_params
                  << " aic=" << format_number(ic.aic) << " bic=" << format_number(ic.bic) << " iterations=" << r.iterations
                  << " converged=" << (r.converged ? "yes" : "no") << "\n";
        if (r.degenerate_states) std::cerr << "warning: some states carry almost no posterior mass\n";
        const int code = r.converged ? kOk : kConvergence;
        if (!r.converged) std::cerr << "warning: EM stopped at the iteration cap before converging\n";
        m.outputs["model"] = file_ref(out);
        m.outputs["report"] = file_ref(report_path());
        m.write(manifest_path(out, "fit", false), code);
        return code;
    }
};

struct SelectCmd {
    std::string data, out, table;
    std::vector<int> candidates{2, 3, 4};
    std::string criterion = "aic";
    EmFlags em;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("select", "Fit candidate state counts and pick the best by AIC or BIC");
        c->add_option("--data", data, "Trace dataset (JSONL)");
        c->add_option("--candidates", candidates, "Candidate K values")->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
        c->add_option("--criterion", criterion, "aic or bic")->check(CLI::IsMember({"aic", "bic"}))->capture_default_str();
        c->add_option("--out", out, "Winning model JSON");
        c->add_option("--table", table, "Criteria CSV (default: <out stem>.selection.csv)");
        em.add(c);
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    fs::path table_path() const { return table.empty() ? fs::path(out).replace_extension(".selection.csv") : fs::path(table); }
    json config() const {
        return {{"data", data},           {"candidates", candidates}, {"criterion", criterion},
                {"out", out},             {"table", out.empty() ? table : table_path().string()},
                {"em", em.to_json()}};
    }
    int run() const {
        if (data.empty() || out.empty()) throw UsageError("--data and --out are required");
        if (candidates.empty()) throw UsageError("at least one candidate K is required");
        Manifest m{"select", config()};
        m.seed = em.cfg.seed;
        m.inputs["data"] = file_ref(data);
        const auto traces = read_traces(fs::path(data));
        const auto result =
            select_model(traces, candidates, em.cfg, criterion == "bic" ? Criterion::Bic : Criterion::Aic);
        std::ostringstream csv;
        csv << "k,num_params,log_likelihood,aic,bic\n";
        for (const auto& row : result.table) {
            if (!row.error.empty()) {
                std::cerr << "k=" << row.k << " failed: " << row.error << "\n";
                continue;
            }
            csv << row.k << "," << row.num_params << "," << format_number(row.log_likelihood) << ","
                << format_number(row.criteria.aic) << "," << format_number(row.criteria.bic) << "\n";
        }
        if (result.best_k < 1) throw DataError("every candidate fit failed");
        write_file(table_path(), csv.str());
        write_model(out, result.best.model);
        std::cout << csv.str() << "selected k=" << result.best_k << " by " << criterion << "\n";
        const int code = result.best.converged ? kOk : kConvergence;
        m.outputs["model"] = file_ref(out);
        m.outputs["table"] = file_ref(table_path());
        m.write(manifest_path(out, "select", false), code);
        return code;
    }
};

struct SolveCmd {
    ModelSource model;
    SolveFlags flags;
    std::string out, report;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("solve", "Build the belief MDP and solve for the fidelity policy");
        model.add(c);
        flags.add(c, &model);
        c->add_option("--out", out, "Policy export JSON");
        c->add_option("--report", report, "Structure report (default: <out stem>.structure.txt)");
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    fs::path report_path() const { return report.empty() ? fs::path(out).replace_extension(".structure.txt") : fs::path(report); }
    json config() const {
        return {{"model", model.to_json()}, {"out", out}, {"report", out.empty() ? report : report_path().string()},
                {"solve", flags.to_json()}};
    }
    int run() const {
        if (out.empty()) throw UsageError("--out is required");
        Manifest m{"solve", config()};
        if (!model.path.empty()) m.inputs["model"] = file_ref(model.path);
        const auto r = solve_policy(model.load(), flags.resolved());
        write_policy(out, r.policy);
        const auto text = format_structure(r.policy, policy_structure_report(r.policy));
        write_file(report_path(), text);
        std::cout << text;
        std::cout << "value iteration: " << r.solution.iterations << " sweeps, converged=" << (r.solution.converged ? "yes" : "no")
                  << "\n";
        const int code = r.solution.converged ? kOk : kConvergence;
        m.outputs["policy"] = file_ref(out);
        m.outputs["report"] = file_ref(report_path());
        m.write(manifest_path(out, "solve", false), code);
        return code;
    }
};

struct SimulateCmd {
    SimFlags flags;
    std::vector<std::string> baselines{"always_N", "always_H", "uniform_random", "sticky_human"};
    std::string out, scores_dir, log;
    int log_episodes = 10;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("simulate", "Run the synthetic operator against a policy and baselines");
        flags.add(c);
        c->add_option("--baseline", baselines, "Baselines to compare against (repeatable; 'none' for no baselines)")
            ->delimiter(',')
            ->capture_default_str();
        c->add_option("--out", out, "Comparison CSV");
        c->add_option("--scores-dir", scores_dir, "Directory for per-policy score CSVs");
        c->add_option("--log", log, "Episode log JSONL for the main policy");
        c->add_option("--log-episodes", log_episodes, "Episodes written to --log")->capture_default_str();
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    json config() const {
        auto j = flags.to_json();
        j["baselines"] = baselines;
        j["out"] = out;
        j["scores_dir"] = scores_dir;
        j["log"] = log;
        j["log_episodes"] = log_episodes;
        return j;
    }
    int run() const {
        if (out.empty()) throw UsageError("--out is required");
        Manifest m{"simulate", config()};
        m.seed = flags.seed;
        const auto cfg = flags.config();
        bool converged = true;
        const auto main = make_policy(flags.policy, flags, cfg, converged);
        std::vector<std::unique_ptr<sim::Policy>> others;
        for (const auto& b : baselines) {
            if (b == "none") continue;
            const auto kind = sim::parse_baseline(b);
            if (!kind) throw UsageError("unknown baseline '" + b + "'");
            others.push_back(sim::baseline_policy(*kind));
        }
        const sim::Simulator simulator(cfg);
        const auto main_result = simulator.run_batch(*main);
        print_stats_header(std::cout);
        print_stats(std::cout, main->name(), main_result);
        std::vector<sim::BatchResult> results;
        for (const auto& p : others) {
            results.push_back(simulator.run_batch(*p));
            print_stats(std::cout, p->name(), results.back());
        }

        std::ostringstream csv;
        csv << sim::comparison_csv_header() << "\n";
        for (std::size_t i = 0; i < others.size(); ++i) {
            const auto c = sim::compare_groups(main_result.scores, results[i].scores);
            csv << sim::comparison_csv_row(main->name(), others[i]->name(), c) << "\n";
            std::cout << main->name() << " vs " << others[i]->name() << ": diff=" << format_number(c.a.mean - c.b.mean)
                      << " d=" << format_number(c.cohen_d) << " t=" << format_number(c.t_statistic)
                      << " df=" << format_number(c.df) << " p=" << format_number(c.p_value) << "\n";
        }
        write_file(out, csv.str());
        m.outputs["comparison"] = file_ref(out);

        if (!scores_dir.empty()) {
            auto dump = [&](const std::string& name, const sim::BatchResult& r) {
                std::ostringstream s;
                sim::write_scores_csv(s, r.scores);
                const auto path = fs::path(scores_dir) / (name + ".scores.csv");
                write_file(path, s.str());
                m.outputs["scores:" + name] = file_ref(path);
            };
            dump(main->name(), main_result);
            for (std::size_t i = 0; i < others.size(); ++i) dump(others[i]->name(), results[i]);
        }
        if (!log.empty()) {
            std::ostringstream s;
            const int n = std::min(log_episodes, cfg.episodes);
            for (int e = 0; e < n; ++e) sim::write_episode_jsonl(s, simulator.run_episode(*main, sim::episode_seed(cfg.seed, e)), e);
            write_file(log, s.str());
            m.outputs["log"] = file_ref(log);
        }
        const int code = converged ? kOk : kConvergence;
        m.write(manifest_path(out, "simulate", false), code);
        return code;
    }
};

struct SensitivityCmd {
    SimFlags flags;
    std::vector<double> transition_pct{0.0, 0.1, 0.2, 0.3, 0.4};
    std::vector<double> noise_ms{0.0, 50.0, 100.0, 150.0, 200.0, 250.0};
    std::string out;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("sensitivity", "Score change under transition and reaction-time perturbations");
        flags.add(c);
        c->add_option("--transition-pct", transition_pct, "Transition perturbation fractions")->delimiter(',')->capture_default_str();
        c->add_option("--noise-ms", noise_ms, "Reaction-time noise SDs (ms)")->delimiter(',')->capture_default_str();
        c->add_option("--out", out, "Sensitivity CSV");
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    json config() const {
        auto j = flags.to_json();
        j["transition_pct"] = transition_pct;
        j["noise_ms"] = noise_ms;
        j["out"] = out;
        return j;
    }
    int run() const {
        if (out.empty()) throw UsageError("--out is required");
        for (double p : transition_pct)
            if (!(p >= 0 && p <= 1)) throw UsageError("transition fractions must be in [0, 1]");
        for (double s : noise_ms)
            if (!(s >= 0)) throw UsageError("noise SDs must be nonnegative");
        Manifest m{"sensitivity", config()};
        m.seed = flags.seed;
        const auto cfg = flags.config();
        bool converged = true;
        const auto policy = make_policy(flags.policy, flags, cfg, converged);
        std::vector<sim::PerturbationPoint> points;
        for (double p : transition_pct) points.push_back({sim::PerturbationKind::Transition, p});
        for (double s : noise_ms) points.push_back({sim::PerturbationKind::ReactionNoise, s});
        const auto rows = sim::sensitivity_sweep(cfg, *policy, points);
        std::ostringstream csv;
        sim::write_sensitivity_csv(csv, rows);
        write_file(out, csv.str());
        std::cout << csv.str();
        m.outputs["sensitivity"] = file_ref(out);
        const int code = converged ? kOk : kConvergence;
        m.write(manifest_path(out, "sensitivity", false), code);
        return code;
    }
};

struct CompareCmd {
    std::string a, b, label_a = "a", label_b = "b", out;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("compare", "Welch t-test and Cohen's d between two score files");
        c->add_option("a", a, "First score file");
        c->add_option("b", b, "Second score file");
        c->add_option("--label-a", label_a, "Label for the first group")->capture_default_str();
        c->add_option("--label-b", label_b, "Label for the second group")->capture_default_str();
        c->add_option("--out", out, "Comparison CSV");
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    json config() const { return {{"a", a}, {"b", b}, {"label_a", label_a}, {"label_b", label_b}, {"out", out}}; }
    int run() const {
        if (a.empty() || b.empty() || out.empty()) throw UsageError("two score files and --out are required");
        Manifest m{"compare", config()};
        m.inputs["a"] = file_ref(a);
        m.inputs["b"] = file_ref(b);
        const auto xa = sim::read_scores(a);
        const auto xb = sim::read_scores(b);
        const auto c = sim::compare_groups(xa, xb);
        const auto row = sim::comparison_csv_row(label_a, label_b, c);
        write_file(out, sim::comparison_csv_header() + "\n" + row + "\n");
        std::cout << label_a << ": n=" << c.a.n << " mean=" << format_number(c.a.mean) << " sd=" << format_number(c.a.sd) << "\n"
                  << label_b << ": n=" << c.b.n << " mean=" << format_number(c.b.mean) << " sd=" << format_number(c.b.sd) << "\n"
                  << "d=" << format_number(c.cohen_d) << " t=" << format_number(c.t_statistic) << " df=" << format_number(c.df)
                  << " p=" << format_number(c.p_value) << "\n";
        m.outputs["comparison"] = file_ref(out);
        m.write(manifest_path(out, "compare", false), kOk);
        return kOk;
    }
};

struct ExportCmd {
    ModelSource model;
    // Settings the policy was solved with; the bundle's server config carries them.
    SolveFlags flags;
    std::string policy, out_dir;
    int port = 8080;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("export", "Bundle a model and policy for the session service and console");
        model.add(c);
        flags.add(c, &model);
        c->add_option("--policy", policy, "Policy export JSON");
        c->add_option("--out-dir", out_dir, "Bundle directory");
        c->add_option("--port", port, "Port written into the bundled server config")->capture_default_str();
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    json config() const {
        return {{"model", model.to_json()}, {"policy", policy}, {"out_dir", out_dir}, {"port", port}, {"solve", flags.to_json()}};
    }
    int run() const {
        if (policy.empty() || out_dir.empty()) throw UsageError("--policy and --out-dir are required");
        Manifest m{"export", config()};
        if (!model.path.empty()) m.inputs["model"] = file_ref(model.path);
        m.inputs["policy"] = file_ref(policy);
        const fs::path dir(out_dir);
        const auto mdl = model.load();
        const auto pol = read_policy(policy);
        const auto o = flags.resolved();
        if (!(pol.grid == BeliefGrid(o.grid_step)) || pol.max_queue != o.queue.max_length || pol.action_set != o.action_set ||
            pol.gamma != o.gamma)
            throw DataError("policy was not solved with the given --grid-step/--max-queue/--actions/--gamma");
        write_model(dir / "model.json", mdl);
        write_policy(dir / "policy.json", pol);

        std::ostringstream csv;
        csv << "q,b_H,action,value\n";
        for (int q = 0; q <= pol.max_queue; ++q)
            for (std::size_t i = 0; i < pol.grid.size(); ++i)
                csv << q << "," << format_number(pol.grid.value(i)) << ","
                    << (q == 0 ? std::string("wait") : std::string(to_string(pol.action[q][i]))) << ","
                    << format_number(pol.value[q][i]) << "\n";
        write_file(dir / "policy.csv", csv.str());

        service::ServerConfig sc;
        sc.port = port;
        sc.model = "model.json";
        sc.policy = "policy.json";
        sc.log_dir = "logs";
        sc.session.queue = o.queue;
        sc.session.reward = o.reward;
        sc.steps = o.steps;
        write_file(dir / "server.json", service::server_config_to_json(sc).dump(2) + "\n");
        for (const auto* name : {"model.json", "policy.json", "policy.csv", "server.json"}) m.outputs[name] = file_ref(dir / name);
        m.write(manifest_path(dir, "export", true), kOk);
        std::cout << "bundle written to " << dir.string() << "\n";
        return kOk;
    }
};

struct ServeCmd {
    std::string config_path, host, model, policy, log_dir;
    int port = -1;
    bool show = false;
    bool run_ = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("serve", "Run the live session service until interrupted");
        c->add_option("--config", config_path, "Server config JSON");
        c->add_option("--host", host, "Bind address");
        c->add_option("--port", port, "Port (0 picks a free port)");
        c->add_option("--model", model, "Workload model JSON");
        c->add_option("--policy", policy, "Policy export JSON");
        c->add_option("--log-dir", log_dir, "Directory for session logs");
        add_show_config(c, show);
        c->callback([this] { run_ = true; });
    }
    // Defaults, then the config file, then environment, then flags.
    service::ServerConfig resolved() const {
        service::ServerConfig c = config_path.empty() ? service::ServerConfig{} : service::load_server_config(config_path);
        service::apply_env_overrides(c, [](const char* k) { return std::getenv(k); });
        if (!host.empty()) c.host = host;
        if (port >= 0) c.port = port;
        if (!model.empty()) c.model = model;
        if (!policy.empty()) c.policy = policy;
        if (!log_dir.empty()) c.log_dir = log_dir;
        return c;
    }
    json config() const { return service::server_config_to_json(resolved()); }
    int run() const {
        const auto cfg = resolved();
        Manifest m{"serve", service::server_config_to_json(cfg)};
        const auto artifacts = service::load_artifacts(cfg);
        m.inputs["model"] = {{"path", cfg.model.string()}, {"hash", artifacts->model_hash}};
        m.inputs["policy"] = {{"path", cfg.policy.string()}, {"hash", artifacts->policy_hash}};

        // Signals go to a dedicated waiter thread; every other thread inherits the mask.
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);

        service::Server server(cfg, artifacts);
        const int bound = server.bind();
        if (bound < 0) throw DataError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port) + " (port in use?)");
        std::cout << "listening on " << cfg.host << ":" << bound << std::endl;

        std::atomic<bool> signalled{false};
        std::thread waiter([&] {
            int sig = 0;
            sigwait(&set, &sig);
            signalled = true;
            server.stop();
        });
        server.listen();
        // listen() can also return on its own; wake the waiter so it can be joined.
        if (!signalled) kill(getpid(), SIGTERM);
        waiter.join();
        server.stop();
        std::cout << "stopped; session logs flushed" << std::endl;
        if (!cfg.log_dir.empty()) m.write(manifest_path(cfg.log_dir, "serve", true), kOk);
        return kOk;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive fidelity selection for supervised queued search tasks"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    GenerateCmd generate;
    FitCmd fit;
    SelectCmd select;
    SolveCmd solve;
    SimulateCmd simulate;
    SensitivityCmd sensitivity;
    CompareCmd compare;
    ExportCmd exporter;
    ServeCmd serve;
    generate.add(app);
    fit.add(app);
    select.add(app);
    solve.add(app);
    simulate.add(app);
    sensitivity.add(app);
    compare.add(app);
    exporter.add(app);
    serve.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    auto dispatch = [](auto& cmd) -> int {
        if (cmd.show) {
            std::cout << cmd.config().dump(2) << "\n";
            return kOk;
        }
        return cmd.run();
    };

    try {
        if (generate.run_) return dispatch(generate);
        if (fit.run_) return dispatch(fit);
        if (select.run_) return dispatch(select);
        if (solve.run_) return dispatch(solve);
        if (simulate.run_) return dispatch(simulate);
        if (sensitivity.run_) return dispatch(sensitivity);
        if (compare.run_) return dispatch(compare);
        if (exporter.run_) return dispatch(exporter);
        if (serve.run_) return dispatch(serve);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
