#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tunembrl/analysis.hpp"
#include "tunembrl/confspace.hpp"
#include "tunembrl/envs.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/parallel.hpp"
#include "tunembrl/pets.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/runlog.hpp"
#include "tunembrl/schedulers.hpp"
#include "tunembrl/trainable.hpp"

namespace tunembrl {

// Seed-tree slots reserved for non-trial streams. Trial indices stay far
// below these, so member streams never collide with them.
inline constexpr std::uint64_t kSeedSlotSample = (1ULL << 40) + 1;
inline constexpr std::uint64_t kSeedSlotInit = (1ULL << 40) + 2;
inline constexpr std::uint64_t kSchedulerMember = 0x5343484544ULL;

struct RunConfig {
    SchedulerKind scheduler = SchedulerKind::Random;
    SpaceGroup group = SpaceGroup::ModelTrain;
    std::string env = "pendulum";
    std::string space_path;
    int population = 40;
    std::int64_t budget = 30;  // trials per member (random / pbt)
    int interval = 5;
    double p_perturb = 0.75;
    double truncation_quantile = 0.2;
    bool copy_history = true;
    // hyperband
    std::int64_t hb_min_budget = 8;
    std::int64_t hb_max_budget = 80;
    int hb_eta = 3;
    int hb_iterations = 1;
    // pbt with backtracking
    int backtrack_every = 30;
    int archive_capacity = 10;
    // execution
    std::uint64_t master_seed = 0;
    int workers = 0;  // 0: TUNE_MBRL_WORKERS or hardware concurrency
    std::string out_dir;
    bool verbose = false;
    // trainable knobs
    int particles = 5;
    int ensemble_size = GaussianEnsemble::kDefaultMembers;
    int drift_period = 50;  // synthetic trainable

    void validate() const {
        if (space_path.empty()) throw Error(ErrorCode::InvalidConfig, "no search-space file");
        if (population < 1) throw Error(ErrorCode::InvalidConfig, "population must be >= 1");
        if (budget < 1) throw Error(ErrorCode::InvalidConfig, "budget must be >= 1");
        if (interval < 1) throw Error(ErrorCode::InvalidConfig, "interval must be >= 1");
        if (scheduler == SchedulerKind::Pbt || scheduler == SchedulerKind::PbtBt) {
            if (population < 2)
                throw Error(ErrorCode::InvalidConfig, "pbt needs a population of at least 2");
            if (!(truncation_quantile > 0.0 && truncation_quantile <= 0.5))
                throw Error(ErrorCode::InvalidConfig, "truncation quantile must be in (0, 0.5]");
        }
        if (scheduler == SchedulerKind::Hyperband) {
            if (hb_min_budget < 1 || hb_min_budget > hb_max_budget)
                throw Error(ErrorCode::InvalidBudget, "need 1 <= min budget <= max budget");
            if (hb_eta < 2) throw Error(ErrorCode::InvalidBudget, "eta must be >= 2");
            if (hb_iterations < 1)
                throw Error(ErrorCode::InvalidBudget, "hyperband iterations must be >= 1");
        }
    }

    ordered_json to_json() const {
        ordered_json j;
        j["scheduler"] = to_string(scheduler);
        j["group"] = to_string(group);
        j["env"] = env;
        j["space_path"] = space_path;
        j["population"] = population;
        j["budget"] = budget;
        j["interval"] = interval;
        j["p_perturb"] = p_perturb;
        j["truncation_quantile"] = truncation_quantile;
        j["copy_history"] = copy_history;
        j["hb_min_budget"] = hb_min_budget;
        j["hb_max_budget"] = hb_max_budget;
        j["hb_eta"] = hb_eta;
        j["hb_iterations"] = hb_iterations;
        j["backtrack_every"] = backtrack_every;
        j["archive_capacity"] = archive_capacity;
        j["master_seed"] = master_seed;
        j["particles"] = particles;
        j["ensemble_size"] = ensemble_size;
        j["drift_period"] = drift_period;
        return j;
    }

    static RunConfig from_json(const ordered_json& j) {
        RunConfig c;
        c.scheduler = *parse_scheduler(j.at("scheduler"));
        c.group = *parse_group(j.at("group"));
        c.env = j.at("env");
        c.space_path = j.at("space_path");
        c.population = j.at("population");
        c.budget = j.at("budget");
        c.interval = j.at("interval");
        c.p_perturb = j.at("p_perturb");
        c.truncation_quantile = j.at("truncation_quantile");
        c.copy_history = j.at("copy_history");
        c.hb_min_budget = j.at("hb_min_budget");
        c.hb_max_budget = j.at("hb_max_budget");
        c.hb_eta = j.at("hb_eta");
        c.hb_iterations = j.at("hb_iterations");
        c.backtrack_every = j.at("backtrack_every");
        c.archive_capacity = j.at("archive_capacity");
        c.master_seed = j.at("master_seed");
        c.particles = j.at("particles");
        c.ensemble_size = j.at("ensemble_size");
        c.drift_period = j.at("drift_period");
        return c;
    }

    /// Deterministic digest of everything that shapes the run's events.
    std::string hash() const {
        const std::string text = to_json().dump();
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char ch : text) {
            h ^= static_cast<std::uint8_t>(ch);
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

/// The analytic trial budget a configuration implies; runs without failures
/// must log exactly this many trial records.
inline std::int64_t analytic_total_trials(const RunConfig& config) {
    switch (config.scheduler) {
        case SchedulerKind::Random:
        case SchedulerKind::Pbt:
        case SchedulerKind::PbtBt:
            return static_cast<std::int64_t>(config.population) * config.budget;
        case SchedulerKind::Hyperband:
            return plan_total_trials(hyperband_plan(config.hb_min_budget, config.hb_max_budget,
                                                    config.hb_eta, config.hb_iterations));
    }
    return 0;
}

/// Applies one directive to a member: clones restore the donor checkpoint
/// (honoring its copy_history flag) and stage the explored configuration
/// for the next trial; continue is a no-op.
inline void apply_directive(Trainable& trainable, Configuration& active_config, bool& stopped,
                            const SchedulerDirective& directive,
                            const TrainableCheckpoint* donor_checkpoint) {
    switch (directive.action) {
        case DirectiveAction::Continue:
        case DirectiveAction::Promote:
            break;
        case DirectiveAction::Stop:
            stopped = true;
            break;
        case DirectiveAction::CloneFrom:
            if (!donor_checkpoint)
                throw Error(ErrorCode::InvalidConfig, "clone directive without a donor checkpoint");
            trainable.restore(*donor_checkpoint);
            if (directive.new_config) active_config = *directive.new_config;
            break;
    }
}

namespace orchestrator_detail {

struct MemberRuntime {
    int id = -1;
    std::unique_ptr<Trainable> trainable;
    Configuration config;
    bool stopped = false;
};

struct TrialResult {
    std::int64_t step = 0;
    int member = 0;
    Configuration config;
    double trial_return = 0.0;
    double score = 0.0;
    bool failed = false;
    std::string what;
};

}  // namespace orchestrator_detail

class SearchRun {
public:
    explicit SearchRun(RunConfig config) : cfg_(std::move(config)) {
        cfg_.validate();
        space_file_ = load_space(cfg_.space_path);
        tuned_ = space_file_.for_group(cfg_.group);
        if (tuned_.empty())
            throw Error(ErrorCode::InvalidConfig,
                        "space group " + std::string(to_string(cfg_.group)) + " is empty");
        if (cfg_.out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "no output directory");
        out_ = cfg_.out_dir;
    }

    /// Executes the search from scratch; `stop_after_barriers` ends the run
    /// cleanly after that many persisted barriers (interruption hook).
    RunLog run(std::optional<int> stop_after_barriers = std::nullopt) {
        std::filesystem::create_directories(out_);
        std::filesystem::create_directories(out_ / "checkpoints");
        writer_ = std::make_unique<RunLogWriter>(out_ / "run.log");
        write_header();
        return dispatch(stop_after_barriers, std::nullopt);
    }

    /// Continues an interrupted run from its last persisted barrier. The
    /// persisted config hash must match this configuration.
    RunLog resume(std::optional<int> stop_after_barriers = std::nullopt) {
        const auto state_path = out_ / "state.json";
        std::ifstream in(state_path);
        if (!in) throw Error(ErrorCode::ResumeMismatch, "no persisted state in " + out_.string());
        ordered_json state = ordered_json::parse(in);
        if (state.at("config_hash") != cfg_.hash())
            throw Error(ErrorCode::ResumeMismatch, "run config differs from the persisted run");
        writer_ = std::make_unique<RunLogWriter>(out_ / "run.log", /*append=*/true);
        writer_->log() = load_runlog(out_ / "run.log");
        return dispatch(stop_after_barriers, std::move(state));
    }

    const ParamSpace& tuned_space() const { return tuned_; }
    const SearchSpaceFile& space_file() const { return space_file_; }

    /// Plugs in a custom optimizee; the built-in PETS/synthetic trainables
    /// are used otherwise.
    void set_trainable_factory(TrainableFactory factory) { factory_ = std::move(factory); }

    std::unique_ptr<Trainable> make_trainable(int member_id) const {
        if (factory_) return factory_(member_id);
        if (cfg_.env == "synthetic")
            return std::make_unique<SyntheticTrainable>(cfg_.drift_period);
        return std::make_unique<PetsTrainable>(
            make_env(cfg_.env), tuned_, space_file_.defaults(),
            seed_tree(cfg_.master_seed, member_id, kSeedSlotInit), cfg_.ensemble_size,
            cfg_.particles);
    }

private:
    using MemberRuntime = orchestrator_detail::MemberRuntime;
    using TrialResult = orchestrator_detail::TrialResult;

    RunLog dispatch(std::optional<int> stop_after, std::optional<ordered_json> state) {
        switch (cfg_.scheduler) {
            case SchedulerKind::Random:
            case SchedulerKind::Pbt:
            case SchedulerKind::PbtBt:
                return run_population(stop_after, std::move(state));
            case SchedulerKind::Hyperband:
                return run_hyperband(stop_after, std::move(state));
        }
        throw Error(ErrorCode::InvalidConfig, "unknown scheduler");
    }

    void write_header() {
        RunLogHeader h;
        h.run_id = cfg_.hash();
        h.scheduler = to_string(cfg_.scheduler);
        h.group = to_string(cfg_.group);
        h.env = cfg_.env;
        h.space_name = space_file_.name;
        h.master_seed = cfg_.master_seed;
        h.copy_history = cfg_.copy_history;
        if (cfg_.scheduler == SchedulerKind::Hyperband) {
            const auto plan = hyperband_plan(cfg_.hb_min_budget, cfg_.hb_max_budget, cfg_.hb_eta,
                                             cfg_.hb_iterations);
            int total = 0;
            for (int i = 0; i < plan.n_iterations; ++i)
                total += plan.brackets[i % plan.brackets.size()].n_configs;
            h.population = total;
            h.budget = cfg_.hb_max_budget;
            h.interval = 0;
            ordered_json opts;
            opts["b_min"] = cfg_.hb_min_budget;
            opts["b_max"] = cfg_.hb_max_budget;
            opts["eta"] = cfg_.hb_eta;
            opts["iterations"] = cfg_.hb_iterations;
            h.options = opts;
            for (int m = 0; m < total; ++m) h.members.push_back(m);
        } else {
            h.population = cfg_.population;
            h.budget = cfg_.budget;
            h.interval = cfg_.scheduler == SchedulerKind::Random ? 0 : cfg_.interval;
            ordered_json opts;
            opts["p_perturb"] = cfg_.p_perturb;
            opts["truncation_quantile"] = cfg_.truncation_quantile;
            if (cfg_.scheduler == SchedulerKind::PbtBt) {
                opts["backtrack_every"] = cfg_.backtrack_every;
                opts["archive_capacity"] = cfg_.archive_capacity;
            }
            h.options = opts;
            for (int m = 0; m < cfg_.population; ++m) h.members.push_back(m);
        }
        writer_->write_header(h);
    }

    // -- shared plumbing ----------------------------------------------------

    /// Steps `member` through trials [from, to); collects one result per
    /// executed trial. A failure stops the member for the rest of the window.
    void run_window(MemberRuntime& member, std::int64_t from, std::int64_t to,
                    std::vector<TrialResult>& results) const {
        for (std::int64_t t = from; t < to; ++t) {
            if (member.trainable->failed() || member.stopped) break;
            TrialResult r;
            r.step = t;
            r.member = member.id;
            r.config = member.config;
            try {
                r.trial_return =
                    member.trainable->step(member.config, seed_tree(cfg_.master_seed, member.id, t));
                r.score = member.trainable->score();
            } catch (const std::exception& e) {
                member.trainable->mark_failed();
                r.failed = true;
                r.trial_return = std::numeric_limits<double>::quiet_NaN();
                r.score = -std::numeric_limits<double>::infinity();
                r.what = e.what();
            }
            results.push_back(std::move(r));
        }
    }

    void log_window(std::vector<TrialResult>& results) {
        std::sort(results.begin(), results.end(), [](const TrialResult& a, const TrialResult& b) {
            if (a.step != b.step) return a.step < b.step;
            return a.member < b.member;
        });
        for (const auto& r : results) {
            writer_->write_trial({r.step, r.member, r.config, r.trial_return, r.score, r.failed});
            if (r.failed) writer_->write_failure({r.step, r.member, r.what});
        }
    }

    void save_member_state(const std::vector<MemberRuntime>& members) const {
        for (const auto& m : members) {
            if (m.stopped) continue;
            save_checkpoint(m.trainable->checkpoint(/*copy_history=*/true),
                            out_ / "checkpoints" / ("member_" + std::to_string(m.id) + ".ckpt"));
        }
    }

    void save_state_json(const std::vector<MemberRuntime>& members, ordered_json cursor) const {
        ordered_json state;
        state["config_hash"] = cfg_.hash();
        state["config"] = cfg_.to_json();
        state["cursor"] = std::move(cursor);
        ordered_json member_list = ordered_json::array();
        for (const auto& m : members) {
            ordered_json mj;
            mj["id"] = m.id;
            mj["config"] = config_to_json(m.config);
            mj["failed"] = m.trainable->failed();
            mj["stopped"] = m.stopped;
            mj["returns"] = m.trainable->score_window().returns;
            member_list.push_back(std::move(mj));
        }
        state["members"] = std::move(member_list);
        const auto tmp = out_ / "state.json.tmp";
        {
            std::ofstream outf(tmp, std::ios::trunc);
            outf << state.dump();
        }
        std::filesystem::rename(tmp, out_ / "state.json");
    }

    std::vector<MemberRuntime> restore_members(const ordered_json& state) const {
        std::vector<MemberRuntime> members;
        for (const auto& mj : state.at("members")) {
            MemberRuntime m;
            m.id = mj.at("id");
            m.config = config_from_json(mj.at("config"));
            m.stopped = mj.at("stopped");
            m.trainable = make_trainable(m.id);
            const auto path =
                out_ / "checkpoints" / ("member_" + std::to_string(m.id) + ".ckpt");
            if (std::filesystem::exists(path)) m.trainable->restore(load_checkpoint(path));
            m.trainable->restore_returns(mj.at("returns").get<std::vector<double>>());
            if (mj.at("failed").get<bool>()) m.trainable->mark_failed();
            members.push_back(std::move(m));
        }
        return members;
    }

    void finish(const std::vector<MemberRuntime>& members) {
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (const auto& m : members) {
            const double s = member_final_score(m);
            if (s > best_score || best < 0) {
                best_score = s;
                best = m.id;
            }
        }
        EndEvent end;
        end.best_member = best;
        end.best_score = best_score;
        try {
            const Schedule schedule =
                extract_schedule(writer_->log(), ScheduleMode::LineageBest, tuned_);
            for (const auto& [trial, config] : schedule.entries)
                end.best_schedule.push_back({trial, config_to_json(config)});
            write_schedule_csv(schedule, tuned_, out_ / "schedule.csv");
        } catch (const Error&) {
            // schedule extraction needs at least one logged trial
        }
        writer_->write_end(end);
    }

    static double member_final_score(const MemberRuntime& m) {
        if (m.trainable->failed() || m.trainable->score_window().returns.empty())
            return -std::numeric_limits<double>::infinity();
        return m.trainable->score();
    }

    void progress(const std::string& message) const {
        if (cfg_.verbose) std::cout << "[tunembrl] " << message << "\n";
    }

    // -- random / pbt / pbt-bt ----------------------------------------------

    RunLog run_population(std::optional<int> stop_after, std::optional<ordered_json> state) {
        const bool exploits = cfg_.scheduler != SchedulerKind::Random;
        const bool backtracking = cfg_.scheduler == SchedulerKind::PbtBt;

        std::vector<MemberRuntime> members;
        std::int64_t t = 0;
        std::int64_t barrier_index = 0;
        EliteArchive archive(cfg_.archive_capacity);

        if (state) {
            members = restore_members(*state);
            t = state->at("cursor").at("trials_done");
            barrier_index = state->at("cursor").at("barrier_index");
            if (backtracking) load_archive(archive);
        } else {
            for (int id = 0; id < cfg_.population; ++id) {
                MemberRuntime m;
                m.id = id;
                m.trainable = make_trainable(id);
                Rng rng(seed_tree(cfg_.master_seed, id, kSeedSlotSample));
                m.config = sample(tuned_, rng);
                members.push_back(std::move(m));
            }
        }

        int barriers_done = 0;
        while (t < cfg_.budget) {
            const std::int64_t window_end = std::min<std::int64_t>(t + cfg_.interval, cfg_.budget);
            std::vector<std::vector<TrialResult>> per_member(members.size());
            parallel_for(static_cast<int>(members.size()), cfg_.workers, [&](int i) {
                run_window(members[i], t, window_end, per_member[i]);
            });
            std::vector<TrialResult> window;
            for (auto& results : per_member)
                window.insert(window.end(), results.begin(), results.end());
            log_window(window);
            t = window_end;
            progress("trials " + std::to_string(t) + "/" + std::to_string(cfg_.budget));

            if (exploits && t % cfg_.interval == 0) {
                ++barrier_index;
                barrier(members, t, barrier_index, archive, backtracking);
            }
            save_member_state(members);
            ordered_json cursor;
            cursor["trials_done"] = t;
            cursor["barrier_index"] = barrier_index;
            save_state_json(members, std::move(cursor));
            if (backtracking) save_archive(archive);
            ++barriers_done;
            if (stop_after && barriers_done >= *stop_after && t < cfg_.budget)
                return writer_->log();
        }

        if (!exploits) {
            for (const auto& m : members)
                writer_->write_directive(
                    {cfg_.budget, {.member = m.id, .action = DirectiveAction::Stop}});
        }
        finish(members);
        return writer_->log();
    }

    void barrier(std::vector<MemberRuntime>& members, std::int64_t t, std::int64_t barrier_index,
                 EliteArchive& archive, bool backtracking) {
        BarrierEvent snapshot;
        snapshot.step = t;
        for (const auto& m : members) snapshot.scores.emplace_back(m.id, member_final_score(m));
        writer_->write_barrier(snapshot);

        PbtOptions opts;
        opts.population_size = cfg_.population;
        opts.truncation_quantile = cfg_.truncation_quantile;
        opts.interval = cfg_.interval;
        opts.p_perturb = cfg_.p_perturb;
        opts.copy_history = cfg_.copy_history;

        Rng rng(seed_tree(cfg_.master_seed, kSchedulerMember, barrier_index));
        PbtStepResult result;
        if (backtracking) {
            std::vector<PbtBtMember> bt_members;
            for (const auto& m : members) {
                PbtBtMember b;
                b.member = m.id;
                b.score = member_final_score(m);
                b.config = m.config;
                b.checkpoint = std::make_shared<const TrainableCheckpoint>(
                    m.trainable->checkpoint(cfg_.copy_history));
                bt_members.push_back(std::move(b));
            }
            result = pbt_bt_step(barrier_index, bt_members, archive, opts, tuned_, rng,
                                 cfg_.backtrack_every);
        } else {
            std::vector<MemberScore> scores;
            std::map<int, Configuration> configs;
            for (const auto& m : members) {
                scores.push_back({m.id, member_final_score(m)});
                configs[m.id] = m.config;
            }
            result = pbt_step(scores, opts, configs, tuned_, rng);
        }
        if (result.warning) progress("warning: " + *result.warning);

        // Snapshot donors before any restore so clone sources are the
        // pre-exploit states.
        std::map<int, TrainableCheckpoint> donor_snapshots;
        for (const auto& d : result.directives)
            if (d.action == DirectiveAction::CloneFrom && d.donor_kind == DonorKind::Member &&
                !donor_snapshots.count(d.donor)) {
                const auto it = std::find_if(members.begin(), members.end(),
                                             [&](const MemberRuntime& m) { return m.id == d.donor; });
                donor_snapshots.emplace(d.donor, it->trainable->checkpoint(cfg_.copy_history));
            }

        for (const auto& d : result.directives) {
            writer_->write_directive({t, d});
            auto it = std::find_if(members.begin(), members.end(),
                                   [&](const MemberRuntime& m) { return m.id == d.member; });
            const TrainableCheckpoint* donor = nullptr;
            if (d.action == DirectiveAction::CloneFrom)
                donor = d.donor_kind == DonorKind::Member ? &donor_snapshots.at(d.donor)
                                                          : archive.entry(d.donor).checkpoint.get();
            apply_directive(*it->trainable, it->config, it->stopped, d, donor);
        }
    }

    void save_archive(const EliteArchive& archive) const {
        ByteWriter w;
        w.u32(static_cast<std::uint32_t>(archive.size()));
        for (std::size_t i = 0; i < archive.size(); ++i) {
            const auto& e = archive.entry(i);
            w.f64(e.score);
            const auto bytes = encode_checkpoint(*e.checkpoint);
            w.u64(bytes.size());
            w.bytes(bytes.data(), bytes.size());
            w.u32(static_cast<std::uint32_t>(e.config.values.size()));
            for (const auto& [name, value] : e.config.values) {
                w.str(name);
                w.f64(value);
            }
        }
        const auto tmp = out_ / "archive.bin.tmp";
        {
            std::ofstream outf(tmp, std::ios::binary | std::ios::trunc);
            const auto& bytes = w.data();
            outf.write(reinterpret_cast<const char*>(bytes.data()),
                       static_cast<std::streamsize>(bytes.size()));
        }
        std::filesystem::rename(tmp, out_ / "archive.bin");
    }

    void load_archive(EliteArchive& archive) const {
        std::ifstream in(out_ / "archive.bin", std::ios::binary);
        if (!in) return;
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        ByteReader r(bytes.data(), bytes.size());
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            EliteArchive::Entry e;
            e.score = r.f64();
            const std::uint64_t len = r.u64();
            e.checkpoint = std::make_shared<const TrainableCheckpoint>(
                decode_checkpoint(r.raw(len), len));
            const std::uint32_t params = r.u32();
            for (std::uint32_t p = 0; p < params; ++p) {
                const std::string name = r.str();
                e.config.values[name] = r.f64();
            }
            archive.offer(std::move(e));
        }
    }

    // -- hyperband ------------------------------------------------------------

    RunLog run_hyperband(std::optional<int> stop_after, std::optional<ordered_json> state) {
        const auto plan = hyperband_plan(cfg_.hb_min_budget, cfg_.hb_max_budget, cfg_.hb_eta,
                                         cfg_.hb_iterations);
        std::vector<MemberRuntime> all_members;

        // Cursor: the next unit of work. rung_index indexes into the current
        // bracket; paid is the budget every alive config has already trained.
        int iteration = 0;
        std::size_t rung_index = 0;
        int next_member_id = 0;
        std::int64_t paid = 0;
        std::vector<int> alive;

        if (state) {
            all_members = restore_members(*state);
            const auto& cursor = state->at("cursor");
            iteration = cursor.at("iteration");
            rung_index = cursor.at("rung_index");
            next_member_id = cursor.at("next_member_id");
            paid = cursor.at("paid");
            alive = cursor.at("alive").get<std::vector<int>>();
        }

        int barriers_done = 0;
        while (iteration < plan.n_iterations) {
            const auto& bracket = plan.brackets[iteration % plan.brackets.size()];
            if (rung_index == 0 && alive.empty()) {
                for (int i = 0; i < bracket.n_configs; ++i) {
                    MemberRuntime m;
                    m.id = next_member_id++;
                    m.trainable = make_trainable(m.id);
                    Rng rng(seed_tree(cfg_.master_seed, m.id, kSeedSlotSample));
                    m.config = sample(tuned_, rng);
                    alive.push_back(m.id);
                    all_members.push_back(std::move(m));
                }
            }

            const auto& rung = bracket.rungs[rung_index];
            const std::int64_t target = rung.budget;
            std::vector<MemberRuntime*> runners;
            for (int id : alive) runners.push_back(find_member(all_members, id));
            std::vector<std::vector<TrialResult>> per_member(runners.size());
            parallel_for(static_cast<int>(runners.size()), cfg_.workers, [&](int i) {
                run_window(*runners[i], paid, target, per_member[i]);
            });
            std::vector<TrialResult> window;
            for (auto& results : per_member)
                window.insert(window.end(), results.begin(), results.end());
            log_window(window);
            progress("bracket s=" + std::to_string(bracket.s) + " rung " +
                     std::to_string(rung_index) + " done at budget " + std::to_string(target));

            const bool last_rung = rung_index + 1 == bracket.rungs.size();
            if (!last_rung) {
                std::vector<RungEntry> entries;
                for (std::size_t i = 0; i < alive.size(); ++i)
                    entries.push_back({static_cast<int>(i), member_final_score(*runners[i])});
                const auto survivors_local = successive_halving_promote(entries, cfg_.hb_eta);
                std::vector<bool> keep(alive.size(), false);
                for (int idx : survivors_local) keep[idx] = true;
                const std::int64_t next_budget = bracket.rungs[rung_index + 1].budget;
                std::vector<int> next_alive;
                for (std::size_t i = 0; i < alive.size(); ++i) {
                    SchedulerDirective d;
                    d.member = alive[i];
                    if (keep[i]) {
                        d.action = DirectiveAction::Promote;
                        d.promote_budget = next_budget;
                        next_alive.push_back(alive[i]);
                    } else {
                        d.action = DirectiveAction::Stop;
                        runners[i]->stopped = true;
                    }
                    writer_->write_directive({target, d});
                }
                alive = std::move(next_alive);
                paid = target;
                ++rung_index;
            } else {
                for (int id : alive) {
                    writer_->write_directive(
                        {target, {.member = id, .action = DirectiveAction::Stop}});
                    find_member(all_members, id)->stopped = true;
                }
                alive.clear();
                paid = 0;
                rung_index = 0;
                ++iteration;
            }

            save_member_state(all_members);
            ordered_json cursor;
            cursor["iteration"] = iteration;
            cursor["rung_index"] = rung_index;
            cursor["next_member_id"] = next_member_id;
            cursor["paid"] = paid;
            cursor["alive"] = alive;
            save_state_json(all_members, std::move(cursor));

            ++barriers_done;
            const bool done = iteration >= plan.n_iterations;
            if (stop_after && barriers_done >= *stop_after && !done) return writer_->log();
        }
        finish(all_members);
        return writer_->log();
    }

    static MemberRuntime* find_member(std::vector<MemberRuntime>& members, int id) {
        const auto it = std::find_if(members.begin(), members.end(),
                                     [&](const MemberRuntime& m) { return m.id == id; });
        if (it == members.end())
            throw Error(ErrorCode::InvalidConfig, "unknown member " + std::to_string(id));
        return &*it;
    }

    RunConfig cfg_;
    SearchSpaceFile space_file_;
    ParamSpace tuned_;
    std::filesystem::path out_;
    std::unique_ptr<RunLogWriter> writer_;
    TrainableFactory factory_;
};

/// Runs the full search described by `config`, returning the in-memory
/// mirror of the persisted run log.
inline RunLog run_search(const RunConfig& config,
                         std::optional<int> stop_after_barriers = std::nullopt) {
    SearchRun run(config);
    return run.run(stop_after_barriers);
}

inline RunLog resume_search(const RunConfig& config,
                            std::optional<int> stop_after_barriers = std::nullopt) {
    SearchRun run(config);
    return run.resume(stop_after_barriers);
}

}  // namespace tunembrl
