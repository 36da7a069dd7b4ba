#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tunembrl/confspace.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/schedulers.hpp"

namespace tunembrl {

using ordered_json = nlohmann::ordered_json;

inline ordered_json config_to_json(const Configuration& config) {
    ordered_json j = ordered_json::object();
    for (const auto& [name, value] : config.values) j[name] = value;
    return j;
}

inline Configuration config_from_json(const ordered_json& j) {
    Configuration c;
    for (const auto& [name, value] : j.items()) c.values[name] = value.get<double>();
    return c;
}

struct RunLogHeader {
    std::string run_id;
    std::string scheduler;
    std::string group;
    std::string env;
    std::string space_name;
    std::uint64_t master_seed = 0;
    int population = 0;
    std::int64_t budget = 0;
    int interval = 0;
    bool copy_history = true;
    std::vector<int> members;
    ordered_json options = ordered_json::object();
};

struct TrialEvent {
    std::int64_t step = 0;  // the member's trial index
    int member = 0;
    Configuration config;
    double trial_return = 0.0;
    double score = 0.0;
    bool failed = false;
};

struct DirectiveEvent {
    std::int64_t step = 0;  // barrier index in completed trials
    SchedulerDirective directive;
};

struct BarrierEvent {
    std::int64_t step = 0;
    std::vector<std::pair<int, double>> scores;  // (member, score), member-ordered
};

struct FailureEvent {
    std::int64_t step = 0;
    int member = 0;
    std::string what;
};

struct EndEvent {
    int best_member = -1;
    double best_score = 0.0;
    ordered_json best_schedule = ordered_json::array();
};

/// Replayable record of one search run: a header plus append-only events,
/// strictly ordered by (step, member id) within each event batch.
struct RunLog {
    RunLogHeader header;
    std::vector<TrialEvent> trials;
    std::vector<DirectiveEvent> directives;
    std::vector<BarrierEvent> barriers;
    std::vector<FailureEvent> failures;
    std::optional<EndEvent> end;

    /// Score of `member` after it has completed `budget` trials.
    std::optional<double> score_at(int member, std::int64_t budget) const {
        for (const auto& t : trials)
            if (t.member == member && t.step == budget - 1)
                return t.failed ? -std::numeric_limits<double>::infinity() : t.score;
        return std::nullopt;
    }
};

namespace runlog_detail {

inline const char* action_name(DirectiveAction a) {
    switch (a) {
        case DirectiveAction::Continue: return "continue";
        case DirectiveAction::CloneFrom: return "clone";
        case DirectiveAction::Stop: return "stop";
        case DirectiveAction::Promote: return "promote";
    }
    return "?";
}

inline DirectiveAction parse_action(const std::string& s) {
    if (s == "continue") return DirectiveAction::Continue;
    if (s == "clone") return DirectiveAction::CloneFrom;
    if (s == "stop") return DirectiveAction::Stop;
    if (s == "promote") return DirectiveAction::Promote;
    throw Error(ErrorCode::IoError, "unknown directive action " + s);
}

inline ordered_json score_json(double v) {
    // JSON has no -inf; failed members persist as null.
    if (!std::isfinite(v)) return nullptr;
    return v;
}

inline double score_from_json(const ordered_json& j) {
    if (j.is_null()) return -std::numeric_limits<double>::infinity();
    return j.get<double>();
}

}  // namespace runlog_detail

/// Streams events to disk as newline-delimited JSON with a fixed field
/// order, mirroring them into an in-memory RunLog. Identical event
/// sequences serialize to byte-identical files.
class RunLogWriter {
public:
    explicit RunLogWriter(const std::filesystem::path& path, bool append = false) {
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw Error(ErrorCode::IoError, "cannot open runlog " + path.string());
    }

    const RunLog& log() const { return log_; }
    RunLog& log() { return log_; }

    void write_header(const RunLogHeader& h) {
        log_.header = h;
        ordered_json j;
        j["type"] = "header";
        j["run_id"] = h.run_id;
        j["scheduler"] = h.scheduler;
        j["group"] = h.group;
        j["env"] = h.env;
        j["space"] = h.space_name;
        j["master_seed"] = h.master_seed;
        j["population"] = h.population;
        j["budget"] = h.budget;
        j["interval"] = h.interval;
        j["copy_history"] = h.copy_history;
        j["members"] = h.members;
        j["options"] = h.options;
        emit(j);
    }

    void write_trial(const TrialEvent& e) {
        log_.trials.push_back(e);
        ordered_json j;
        j["type"] = "trial";
        j["step"] = e.step;
        j["member"] = e.member;
        j["config"] = config_to_json(e.config);
        j["return"] = runlog_detail::score_json(e.trial_return);
        j["score"] = runlog_detail::score_json(e.score);
        j["failed"] = e.failed;
        emit(j);
    }

    void write_barrier(const BarrierEvent& e) {
        log_.barriers.push_back(e);
        ordered_json j;
        j["type"] = "barrier";
        j["step"] = e.step;
        ordered_json scores = ordered_json::array();
        for (const auto& [member, score] : e.scores)
            scores.push_back({member, runlog_detail::score_json(score)});
        j["scores"] = scores;
        emit(j);
    }

    void write_directive(const DirectiveEvent& e) {
        log_.directives.push_back(e);
        const auto& d = e.directive;
        ordered_json j;
        j["type"] = "directive";
        j["step"] = e.step;
        j["member"] = d.member;
        j["action"] = runlog_detail::action_name(d.action);
        if (d.action == DirectiveAction::CloneFrom) {
            j["donor_kind"] = d.donor_kind == DonorKind::Member ? "member" : "elite";
            j["donor"] = d.donor;
            j["copy_history"] = d.copy_history;
        }
        if (d.new_config) j["config"] = config_to_json(*d.new_config);
        if (d.action == DirectiveAction::Promote) j["budget"] = d.promote_budget;
        emit(j);
    }

    void write_failure(const FailureEvent& e) {
        log_.failures.push_back(e);
        ordered_json j;
        j["type"] = "failure";
        j["step"] = e.step;
        j["member"] = e.member;
        j["what"] = e.what;
        emit(j);
    }

    void write_end(const EndEvent& e) {
        log_.end = e;
        ordered_json j;
        j["type"] = "end";
        j["best_member"] = e.best_member;
        j["best_score"] = runlog_detail::score_json(e.best_score);
        j["best_schedule"] = e.best_schedule;
        emit(j);
    }

    void flush() { out_.flush(); }

private:
    void emit(const ordered_json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
    }

    std::ofstream out_;
    RunLog log_;
};

inline RunLog load_runlog(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open runlog " + path.string());
    RunLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const ordered_json j = ordered_json::parse(line);
        const std::string type = j.at("type");
        if (type == "header") {
            RunLogHeader h;
            h.run_id = j.at("run_id");
            h.scheduler = j.at("scheduler");
            h.group = j.at("group");
            h.env = j.at("env");
            h.space_name = j.at("space");
            h.master_seed = j.at("master_seed");
            h.population = j.at("population");
            h.budget = j.at("budget");
            h.interval = j.at("interval");
            h.copy_history = j.at("copy_history");
            h.members = j.at("members").get<std::vector<int>>();
            h.options = j.at("options");
            log.header = h;
        } else if (type == "trial") {
            TrialEvent e;
            e.step = j.at("step");
            e.member = j.at("member");
            e.config = config_from_json(j.at("config"));
            e.trial_return = runlog_detail::score_from_json(j.at("return"));
            e.score = runlog_detail::score_from_json(j.at("score"));
            e.failed = j.at("failed");
            log.trials.push_back(std::move(e));
        } else if (type == "barrier") {
            BarrierEvent e;
            e.step = j.at("step");
            for (const auto& pair : j.at("scores"))
                e.scores.emplace_back(pair.at(0).get<int>(),
                                      runlog_detail::score_from_json(pair.at(1)));
            log.barriers.push_back(std::move(e));
        } else if (type == "directive") {
            DirectiveEvent e;
            e.step = j.at("step");
            e.directive.member = j.at("member");
            e.directive.action = runlog_detail::parse_action(j.at("action"));
            if (j.contains("donor")) {
                e.directive.donor = j.at("donor");
                e.directive.donor_kind =
                    j.at("donor_kind") == "member" ? DonorKind::Member : DonorKind::Elite;
                e.directive.copy_history = j.at("copy_history");
            }
            if (j.contains("config")) e.directive.new_config = config_from_json(j.at("config"));
            if (j.contains("budget")) e.directive.promote_budget = j.at("budget");
            log.directives.push_back(std::move(e));
        } else if (type == "failure") {
            FailureEvent e;
            e.step = j.at("step");
            e.member = j.at("member");
            e.what = j.at("what");
            log.failures.push_back(std::move(e));
        } else if (type == "end") {
            EndEvent e;
            e.best_member = j.at("best_member");
            e.best_score = runlog_detail::score_from_json(j.at("best_score"));
            e.best_schedule = j.at("best_schedule");
            log.end = e;
        } else {
            throw Error(ErrorCode::IoError, "unknown event type " + type);
        }
    }
    return log;
}

}  // namespace tunembrl
