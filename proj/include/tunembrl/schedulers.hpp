#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tunembrl/confspace.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/trainable.hpp"

namespace tunembrl {

enum class SchedulerKind { Random, Hyperband, Pbt, PbtBt };

inline const char* to_string(SchedulerKind k) {
    switch (k) {
        case SchedulerKind::Random: return "random";
        case SchedulerKind::Hyperband: return "hyperband";
        case SchedulerKind::Pbt: return "pbt";
        case SchedulerKind::PbtBt: return "pbt_bt";
    }
    return "?";
}

inline std::optional<SchedulerKind> parse_scheduler(const std::string& s) {
    if (s == "random") return SchedulerKind::Random;
    if (s == "hyperband") return SchedulerKind::Hyperband;
    if (s == "pbt") return SchedulerKind::Pbt;
    if (s == "pbt_bt") return SchedulerKind::PbtBt;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Directives

enum class DirectiveAction { Continue, CloneFrom, Stop, Promote };

enum class DonorKind { Member, Elite };

/// One instruction to one member. Schedulers only decide; the orchestrator
/// moves checkpoints and applies configs.
struct SchedulerDirective {
    int member = -1;
    DirectiveAction action = DirectiveAction::Continue;
    DonorKind donor_kind = DonorKind::Member;
    int donor = -1;                            // member id or elite index
    bool copy_history = true;                  // clone only
    std::optional<Configuration> new_config;   // clone / backtrack
    std::int64_t promote_budget = 0;           // promote only

    bool operator==(const SchedulerDirective&) const = default;
};

struct MemberScore {
    int member = -1;
    double score = 0.0;
};

struct PbtOptions {
    int population_size = 40;
    double truncation_quantile = 0.20;
    int interval = 5;        // trials between exploit/explore barriers
    double p_perturb = 0.75;
    bool copy_history = true;

    void validate() const {
        if (population_size < 2)
            throw Error(ErrorCode::InvalidConfig, "population_size must be >= 2");
        if (!(truncation_quantile > 0.0 && truncation_quantile <= 0.5))
            throw Error(ErrorCode::InvalidConfig, "truncation quantile must be in (0, 0.5]");
        if (interval < 1) throw Error(ErrorCode::InvalidConfig, "interval must be >= 1");
        if (!(p_perturb >= 0.0 && p_perturb <= 1.0))
            throw Error(ErrorCode::InvalidConfig, "p_perturb must be a probability");
    }
};

struct PbtStepResult {
    std::vector<SchedulerDirective> directives;
    std::optional<std::string> warning;
};

namespace detail {

/// Ranks ascending by score, ties broken by member id so the ordering is
/// total and deterministic. Failed members carry -inf and sort first.
inline std::vector<MemberScore> rank_ascending(std::vector<MemberScore> scores) {
    std::sort(scores.begin(), scores.end(), [](const MemberScore& a, const MemberScore& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.member < b.member;
    });
    return scores;
}

}  // namespace detail

/// Truncation exploit/explore: the bottom floor(q*N) members are each
/// replaced by a clone of a uniformly drawn top-floor(q*N) member; the
/// cloned configuration is then perturbed (probability p_perturb) or
/// resampled. Everyone else continues untouched.
inline PbtStepResult pbt_step(const std::vector<MemberScore>& scores, const PbtOptions& opts,
                              const std::map<int, Configuration>& configs,
                              const ParamSpace& space, Rng& rng) {
    opts.validate();
    const int n = static_cast<int>(scores.size());
    const int k = static_cast<int>(std::floor(opts.truncation_quantile * n));

    PbtStepResult result;
    if (k == 0) {
        for (const auto& s : scores)
            result.directives.push_back({.member = s.member, .action = DirectiveAction::Continue});
        result.warning = "population too small for truncation quantile; exploit skipped";
        return result;
    }

    const auto ranked = detail::rank_ascending(scores);
    std::vector<SchedulerDirective> clones;
    for (int i = 0; i < k; ++i) {
        const MemberScore& victim = ranked[i];
        const MemberScore& donor = ranked[n - 1 - rng.uniform_int(0, k - 1)];
        SchedulerDirective d;
        d.member = victim.member;
        d.action = DirectiveAction::CloneFrom;
        d.donor_kind = DonorKind::Member;
        d.donor = donor.member;
        d.copy_history = opts.copy_history;
        auto it = configs.find(donor.member);
        if (it == configs.end())
            throw Error(ErrorCode::InvalidConfig, "missing config for donor member");
        d.new_config = resample_or_perturb(it->second, space, opts.p_perturb, rng);
        clones.push_back(std::move(d));
    }
    // Emit in member order so the directive stream is deterministic.
    for (const auto& s : scores) {
        auto it = std::find_if(clones.begin(), clones.end(),
                               [&](const SchedulerDirective& d) { return d.member == s.member; });
        if (it != clones.end())
            result.directives.push_back(*it);
        else
            result.directives.push_back({.member = s.member, .action = DirectiveAction::Continue});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Hyperband

struct HyperbandRung {
    std::int64_t budget = 0;   // cumulative trials a config has seen at this rung
    int n_configs = 0;         // configs evaluated at this rung
};

struct HyperbandBracket {
    int s = 0;
    int n_configs = 0;
    std::vector<HyperbandRung> rungs;
};

struct HyperbandPlan {
    std::int64_t b_min = 0;
    std::int64_t b_max = 0;
    int eta = 3;
    int s_max = 0;
    int n_iterations = 1;  // how many successive-halving runs, cycling brackets
    std::vector<HyperbandBracket> brackets;
};

/// Builds the bracket ladder. Budgets follow the geometric schedule
/// b_max * eta^{-s} rounded to the nearest whole trial (minimum 1); rung
/// survivor counts follow floor(n / eta).
inline HyperbandPlan hyperband_plan(std::int64_t b_min, std::int64_t b_max, int eta,
                                    int n_iterations = 1) {
    if (b_min < 1 || b_min > b_max)
        throw Error(ErrorCode::InvalidBudget, "need 1 <= b_min <= b_max");
    if (eta < 2) throw Error(ErrorCode::InvalidBudget, "eta must be >= 2");
    HyperbandPlan plan;
    plan.b_min = b_min;
    plan.b_max = b_max;
    plan.eta = eta;
    plan.n_iterations = n_iterations;
    plan.s_max = static_cast<int>(std::floor(
        std::log(static_cast<double>(b_max) / static_cast<double>(b_min)) / std::log(eta) +
        1e-12));
    for (int s = plan.s_max; s >= 0; --s) {
        HyperbandBracket bracket;
        bracket.s = s;
        bracket.n_configs = static_cast<int>(std::ceil(
            static_cast<double>(plan.s_max + 1) / (s + 1) * std::pow(eta, s) - 1e-12));
        int n = bracket.n_configs;
        for (int j = 0; j <= s; ++j) {
            HyperbandRung rung;
            const double raw = static_cast<double>(b_max) * std::pow(eta, -(s - j));
            rung.budget = std::max<std::int64_t>(1, std::llround(raw));
            rung.n_configs = n;
            bracket.rungs.push_back(rung);
            n = n / eta;  // survivors promoted to the next rung
        }
        plan.brackets.push_back(bracket);
    }
    return plan;
}

/// Total trials one pass over `bracket` costs under continuation accounting:
/// a promoted config only pays the incremental budget.
inline std::int64_t bracket_trials(const HyperbandBracket& bracket) {
    std::int64_t total = 0;
    for (std::size_t j = 0; j < bracket.rungs.size(); ++j) {
        const std::int64_t prev = j == 0 ? 0 : bracket.rungs[j - 1].budget;
        total += static_cast<std::int64_t>(bracket.rungs[j].n_configs) *
                 (bracket.rungs[j].budget - prev);
    }
    return total;
}

inline std::int64_t plan_total_trials(const HyperbandPlan& plan) {
    std::int64_t total = 0;
    for (int i = 0; i < plan.n_iterations; ++i)
        total += bracket_trials(plan.brackets[i % plan.brackets.size()]);
    return total;
}

struct RungEntry {
    int config_index = -1;
    double score = 0.0;
};

/// Promotes the top floor(n/eta) configs of a completed rung. Ties are
/// broken in favor of the earlier config index.
inline std::vector<int> successive_halving_promote(const std::vector<RungEntry>& rung_scores,
                                                   int eta) {
    const int k = static_cast<int>(rung_scores.size()) / eta;
    std::vector<RungEntry> sorted = rung_scores;
    std::stable_sort(sorted.begin(), sorted.end(), [](const RungEntry& a, const RungEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.config_index < b.config_index;
    });
    std::vector<int> survivors;
    survivors.reserve(k);
    for (int i = 0; i < k; ++i) survivors.push_back(sorted[i].config_index);
    std::sort(survivors.begin(), survivors.end());
    return survivors;
}

// ---------------------------------------------------------------------------
// PBT with backtracking

/// Cross-time store of the best (score, checkpoint, config) triples seen so
/// far, sorted by score descending and truncated to capacity.
class EliteArchive {
public:
    struct Entry {
        double score = 0.0;
        std::shared_ptr<const TrainableCheckpoint> checkpoint;
        Configuration config;
    };

    explicit EliteArchive(std::size_t capacity = 10) : capacity_(capacity) {}

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t capacity() const { return capacity_; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    /// Inserts when the archive has room or the candidate beats its worst
    /// entry. Keeps the score-descending order invariant.
    bool offer(Entry entry) {
        if (entries_.size() >= capacity_ && entry.score <= entries_.back().score) return false;
        auto pos = std::upper_bound(
            entries_.begin(), entries_.end(), entry,
            [](const Entry& a, const Entry& b) { return a.score > b.score; });
        entries_.insert(pos, std::move(entry));
        if (entries_.size() > capacity_) entries_.pop_back();
        return true;
    }

private:
    std::size_t capacity_;
    std::vector<Entry> entries_;
};

struct PbtBtMember {
    int member = -1;
    double score = 0.0;
    Configuration config;
    std::shared_ptr<const TrainableCheckpoint> checkpoint;  // snapshot for archive offers
};

/// PBT with backtracking. Every step the top quantile is offered to the
/// elite archive; on every `backtrack_every`-th step the bottom quantile is
/// instead restored from uniformly drawn archive elites, with the elite's
/// config re-perturbed until it matches no live member's configuration.
/// Other steps behave exactly like pbt_step.
inline PbtStepResult pbt_bt_step(std::int64_t step_index, const std::vector<PbtBtMember>& members,
                                 EliteArchive& archive, const PbtOptions& opts,
                                 const ParamSpace& space, Rng& rng, int backtrack_every = 30) {
    opts.validate();
    const int n = static_cast<int>(members.size());
    const int k = static_cast<int>(std::floor(opts.truncation_quantile * n));

    std::vector<MemberScore> scores(members.size());
    std::map<int, Configuration> configs;
    for (std::size_t i = 0; i < members.size(); ++i) {
        scores[i] = {members[i].member, members[i].score};
        configs[members[i].member] = members[i].config;
    }

    // Offer the current top quantile to the archive before deciding.
    if (k > 0) {
        const auto ranked = detail::rank_ascending(scores);
        for (int i = 0; i < k; ++i) {
            const int id = ranked[n - 1 - i].member;
            const auto it = std::find_if(members.begin(), members.end(),
                                         [&](const PbtBtMember& m) { return m.member == id; });
            if (it->checkpoint && std::isfinite(it->score))
                archive.offer({it->score, it->checkpoint, it->config});
        }
    }

    const bool backtrack = backtrack_every > 0 && step_index % backtrack_every == 0;
    if (!backtrack || archive.empty() || k == 0)
        return pbt_step(scores, opts, configs, space, rng);

    const auto ranked = detail::rank_ascending(scores);
    std::vector<Configuration> live;
    for (const auto& m : members) live.push_back(m.config);

    PbtStepResult result;
    std::vector<SchedulerDirective> replacements;
    for (int i = 0; i < k; ++i) {
        const int victim = ranked[i].member;
        const int elite_index = static_cast<int>(rng.uniform_int(0, archive.size() - 1));
        Configuration candidate = perturb(archive.entry(elite_index).config, space, rng);
        // Guarantee no live member (or fellow replacement) reuses the
        // same hyperparameters.
        auto collides = [&](const Configuration& c) {
            return std::any_of(live.begin(), live.end(),
                               [&](const Configuration& other) { return other == c; });
        };
        int guard = 0;
        while (collides(candidate) && guard++ < 1000) candidate = perturb(candidate, space, rng);
        live.push_back(candidate);

        SchedulerDirective d;
        d.member = victim;
        d.action = DirectiveAction::CloneFrom;
        d.donor_kind = DonorKind::Elite;
        d.donor = elite_index;
        d.copy_history = opts.copy_history;
        d.new_config = std::move(candidate);
        replacements.push_back(std::move(d));
    }
    for (const auto& s : scores) {
        auto it = std::find_if(replacements.begin(), replacements.end(),
                               [&](const SchedulerDirective& d) { return d.member == s.member; });
        if (it != replacements.end())
            result.directives.push_back(*it);
        else
            result.directives.push_back({.member = s.member, .action = DirectiveAction::Continue});
    }
    return result;
}

}  // namespace tunembrl
