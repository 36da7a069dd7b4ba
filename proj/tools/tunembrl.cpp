// Command-line front end: run searches, evaluate extracted schedules, and
// post-process run logs into CSV analyses.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tunembrl/analysis.hpp"
#include "tunembrl/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace tunembrl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

bool is_config_error(const Error& e) {
    switch (e.code()) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidBudget:
        case ErrorCode::ResumeMismatch:
            return true;
        default:
            return false;
    }
}

TrainableFactory make_factory(const std::string& env, const std::string& space_path,
                              const ParamSpace& tuned, int drift_period, int particles,
                              int ensemble_size, std::uint64_t master_seed) {
    if (env == "synthetic") {
        return [drift_period](int) -> std::unique_ptr<Trainable> {
            return std::make_unique<SyntheticTrainable>(drift_period);
        };
    }
    const SearchSpaceFile file = load_space(space_path);
    const Configuration defaults = file.defaults();
    return [env, tuned, defaults, particles, ensemble_size,
            master_seed](int seed_index) -> std::unique_ptr<Trainable> {
        return std::make_unique<PetsTrainable>(
            make_env(env), tuned, defaults, seed_tree(master_seed, seed_index, kSeedSlotInit),
            ensemble_size, particles);
    };
}

/// Smallest group of the space that covers every parameter the schedule
/// mentions.
SpaceGroup infer_group(const Schedule& schedule, const SearchSpaceFile& file) {
    const auto covered_by = [&](const ParamSpace& space) {
        for (const auto& [name, value] : schedule.entries.front().second.values)
            if (!space.find(name)) return false;
        return true;
    };
    if (covered_by(file.model_train)) return SpaceGroup::ModelTrain;
    if (covered_by(file.cem_optimizer)) return SpaceGroup::CemOptimizer;
    return SpaceGroup::Joint;
}

int run_search_command(RunConfig& config, bool resume) {
    const RunLog log = resume ? resume_search(config) : run_search(config);
    if (log.end) {
        std::cout << "best member: " << log.end->best_member
                  << "  score: " << log.end->best_score << "\n";
        std::cout << "run log: " << (fs::path(config.out_dir) / "run.log").string() << "\n";
    } else {
        std::cout << "stopped before completion; resume with --resume\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyperparameter search for model-based RL trainables"};
    app.require_subcommand(1);

    // ---- search
    auto* search = app.add_subcommand("search", "run a hyperparameter search");
    RunConfig rc;
    std::string scheduler_name = "random";
    std::string group_name = "model_train";
    bool resume = false;
    search->add_option("--scheduler", scheduler_name, "random | hyperband | pbt | pbt_bt")
        ->check(CLI::IsMember({"random", "hyperband", "pbt", "pbt_bt"}));
    search->add_option("--space", rc.space_path, "search-space file")->required();
    search->add_option("--group", group_name, "model_train | cem_optimizer | joint")
        ->check(CLI::IsMember({"model_train", "cem_optimizer", "joint"}));
    search->add_option("--env", rc.env, "pendulum | pusher2d | synthetic")
        ->check(CLI::IsMember({"pendulum", "pusher2d", "synthetic"}));
    search->add_option("--pop", rc.population, "population size");
    search->add_option("--budget", rc.budget, "trials per member");
    search->add_option("--interval", rc.interval, "trials between exploit/explore");
    search->add_option("--p-perturb", rc.p_perturb, "explore perturbation probability");
    search->add_option("--quantile", rc.truncation_quantile, "truncation quantile");
    search->add_option("--copy-history", rc.copy_history,
                       "copy transition history on exploit (true/false)");
    search->add_option("--hb-min", rc.hb_min_budget, "hyperband minimal budget");
    search->add_option("--hb-max", rc.hb_max_budget, "hyperband maximal budget");
    search->add_option("--hb-eta", rc.hb_eta, "hyperband reduction factor");
    search->add_option("--hb-iterations", rc.hb_iterations, "successive-halving runs");
    search->add_option("--backtrack-every", rc.backtrack_every, "pbt_bt backtracking period");
    search->add_option("--archive-capacity", rc.archive_capacity, "pbt_bt elite archive size");
    search->add_option("--seed", rc.master_seed, "master seed");
    search->add_option("--workers", rc.workers, "worker threads (0 = auto)");
    search->add_option("--particles", rc.particles, "rollout particles per sequence");
    search->add_option("--ensemble", rc.ensemble_size, "dynamics ensemble size");
    search->add_option("--drift-period", rc.drift_period, "synthetic drift period");
    search->add_option("--out", rc.out_dir, "output directory")->required();
    search->add_flag("--resume", resume, "continue an interrupted run");
    search->add_flag("--verbose", rc.verbose, "progress output");

    // ---- evaluate
    auto* evaluate = app.add_subcommand("evaluate", "re-run a schedule over fresh seeds");
    std::string ev_schedule, ev_env = "pendulum", ev_space, ev_out;
    int ev_seeds = 5, ev_trials = 0, ev_particles = 5, ev_ensemble = 5, ev_drift = 50,
        ev_workers = 0;
    std::uint64_t ev_seed = 0;
    bool ev_alt = false;
    evaluate->add_option("--schedule", ev_schedule, "schedule.csv to evaluate")->required();
    evaluate->add_option("--env", ev_env, "pendulum | pusher2d | synthetic")
        ->check(CLI::IsMember({"pendulum", "pusher2d", "synthetic"}));
    evaluate->add_option("--space", ev_space, "search-space file (defaults for untuned group)");
    evaluate->add_option("--seeds", ev_seeds, "number of fresh seeds");
    evaluate->add_option("--trials", ev_trials, "trials per seed (0 = env default)");
    evaluate->add_option("--seed", ev_seed, "master seed");
    evaluate->add_option("--particles", ev_particles, "rollout particles");
    evaluate->add_option("--ensemble", ev_ensemble, "ensemble size");
    evaluate->add_option("--drift-period", ev_drift, "synthetic drift period");
    evaluate->add_option("--workers", ev_workers, "worker threads (0 = auto)");
    evaluate->add_option("--out", ev_out, "output csv (default: curve.csv next to schedule)");
    evaluate->add_flag("--mean-of-max", ev_alt,
                       "alternative curve reading: mean of per-seed running maxima");

    // ---- analyze
    auto* analyze = app.add_subcommand("analyze", "post-process run logs");
    analyze->require_subcommand(1);

    auto* corr = analyze->add_subcommand("corr", "cross-fidelity rank correlation");
    std::string corr_log;
    std::int64_t corr_low = 0, corr_high = 0;
    std::string corr_out;
    corr->add_option("--log", corr_log, "run directory")->required();
    corr->add_option("--low", corr_low, "low fidelity (trial budget)");
    corr->add_option("--high", corr_high, "high fidelity (trial budget)");
    corr->add_option("--out", corr_out, "output csv (default: corr.csv in the run directory)");

    auto* hist = analyze->add_subcommand("hist", "histogram of final member scores");
    std::vector<std::string> hist_logs;
    std::string hist_out;
    hist->add_option("--log", hist_logs, "run directories (repeatable)")->required();
    hist->add_option("--out", hist_out, "output csv (default: hist.csv in the first run dir)");

    auto* trends = analyze->add_subcommand("trends", "top-5 mean hyperparameter schedule");
    std::string trends_log, trends_space, trends_out;
    int trends_k = 5;
    trends->add_option("--log", trends_log, "run directory")->required();
    trends->add_option("--space", trends_space, "search-space file")->required();
    trends->add_option("--top-k", trends_k, "members to average");
    trends->add_option("--out", trends_out, "output csv (default: trends.csv in the run dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (search->parsed()) {
            rc.scheduler = *parse_scheduler(scheduler_name);
            rc.group = *parse_group(group_name);
            return run_search_command(rc, resume);
        }
        if (evaluate->parsed()) {
            const Schedule schedule = load_schedule_csv(ev_schedule);
            ParamSpace tuned;
            if (ev_env == "synthetic") {
                tuned = SyntheticTrainable().space();
            } else {
                if (ev_space.empty())
                    throw Error(ErrorCode::InvalidConfig, "--space is required for " + ev_env);
                const SearchSpaceFile file = load_space(ev_space);
                tuned = file.for_group(infer_group(schedule, file));
            }
            int trials = ev_trials;
            if (trials <= 0)
                trials = ev_env == "synthetic" ? 50 : make_env(ev_env).n_trials;
            const auto factory = make_factory(ev_env, ev_space, tuned, ev_drift, ev_particles,
                                              ev_ensemble, ev_seed);
            const EvaluationCurve curve = evaluate_schedule(factory, schedule, ev_seeds, trials,
                                                            ev_seed, ev_alt, ev_workers);
            const fs::path out = ev_out.empty()
                                     ? fs::path(ev_schedule).parent_path() / "curve.csv"
                                     : fs::path(ev_out);
            write_curve_csv(curve, out);
            std::cout << "final curve value: " << curve.curve.back() << "\n";
            std::cout << "curve csv: " << out.string() << "\n";
            return kExitOk;
        }
        if (corr->parsed()) {
            const RunLog log = load_runlog(fs::path(corr_log) / "run.log");
            if (corr_low == 0 || corr_high == 0) {
                if (log.header.scheduler != "hyperband")
                    throw Error(ErrorCode::InvalidConfig,
                                "--low and --high are required for non-hyperband logs");
                const auto plan = hyperband_plan(log.header.options.at("b_min"),
                                                 log.header.options.at("b_max"),
                                                 log.header.options.at("eta"));
                if (plan.brackets.front().rungs.size() < 2)
                    throw Error(ErrorCode::InvalidConfig, "plan has a single fidelity");
                corr_low = plan.brackets.front().rungs[0].budget;
                corr_high = plan.brackets.front().rungs[1].budget;
            }
            const CorrelationReport report = cross_fidelity_correlation(log, corr_low, corr_high);
            const fs::path out =
                corr_out.empty() ? fs::path(corr_log) / "corr.csv" : fs::path(corr_out);
            write_corr_csv(report, corr_low, corr_high, out);
            std::cout << "cor=" << report.cor << " p=" << report.p << " n=" << report.n
                      << (report.defined ? "" : " (degenerate)") << "\n";
            std::cout << "corr csv: " << out.string() << "\n";
            return kExitOk;
        }
        if (hist->parsed()) {
            std::vector<RunLog> logs;
            for (const auto& dir : hist_logs) logs.push_back(load_runlog(fs::path(dir) / "run.log"));
            std::vector<const RunLog*> refs;
            for (const auto& l : logs) refs.push_back(&l);
            const Histogram histogram = final_return_histogram(refs);
            const fs::path out =
                hist_out.empty() ? fs::path(hist_logs.front()) / "hist.csv" : fs::path(hist_out);
            write_hist_csv(histogram, out);
            std::cout << "hist csv: " << out.string() << "\n";
            return kExitOk;
        }
        if (trends->parsed()) {
            const RunLog log = load_runlog(fs::path(trends_log) / "run.log");
            const SearchSpaceFile file = load_space(trends_space);
            const ParamSpace tuned = file.for_group(
                parse_group(log.header.group).value_or(SpaceGroup::Joint));
            const Schedule schedule =
                extract_schedule(log, ScheduleMode::TopKMean, tuned, trends_k);
            const fs::path out =
                trends_out.empty() ? fs::path(trends_log) / "trends.csv" : fs::path(trends_out);
            write_schedule_csv(schedule, tuned, out);
            std::cout << "trends csv: " << out.string() << "\n";
            return kExitOk;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e) ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
