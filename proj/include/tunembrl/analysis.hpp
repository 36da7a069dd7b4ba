#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tunembrl/confspace.hpp"
#include "tunembrl/dynamics.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/parallel.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/runlog.hpp"
#include "tunembrl/trainable.hpp"

namespace tunembrl {

// ---------------------------------------------------------------------------
// Spearman rank correlation

struct CorrelationReport {
    double cor = 0.0;
    double p = 1.0;
    int n = 0;
    bool defined = true;  // false when either input has zero rank variance
};

namespace analysis_detail {

/// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 200;
    constexpr double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

/// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

/// Two-sided p from the t statistic with nu degrees of freedom.
inline double t_two_sided_p(double t, double nu) {
    return betai(0.5 * nu, 0.5, nu / (nu + t * t));
}

}  // namespace analysis_detail

/// Spearman correlation with average-rank tie handling. The p-value uses
/// exact permutation enumeration below n = 10 and the t approximation
/// t = cor * sqrt((n-2) / (1-cor^2)) from there on. Zero rank variance in
/// either input yields an explicit degenerate report instead of NaN.
inline CorrelationReport spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw Error(ErrorCode::DimensionMismatch, "spearman input lengths differ");
    const int n = static_cast<int>(x.size());
    if (n < 2) throw Error(ErrorCode::InsufficientOverlap, "spearman needs n >= 2");

    const auto rx = analysis_detail::average_ranks(x);
    const auto ry = analysis_detail::average_ranks(y);
    const double mean_rank = 0.5 * (n + 1);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dx = rx[i] - mean_rank, dy = ry[i] - mean_rank;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    CorrelationReport report;
    report.n = n;
    if (sxx == 0.0 || syy == 0.0) {
        report.defined = false;
        report.cor = 0.0;
        report.p = 1.0;
        return report;
    }
    report.cor = sxy / std::sqrt(sxx * syy);
    report.cor = std::clamp(report.cor, -1.0, 1.0);

    if (n < 10) {
        // Exact two-sided permutation distribution of the rank correlation.
        std::vector<double> xc(n), yp(ry);
        for (int i = 0; i < n; ++i) xc[i] = rx[i] - mean_rank;
        std::sort(yp.begin(), yp.end());
        const double target = std::fabs(sxy) - 1e-9;
        std::int64_t total = 0, hits = 0;
        do {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += xc[i] * (yp[i] - mean_rank);
            if (std::fabs(dot) >= target) ++hits;
            ++total;
        } while (std::next_permutation(yp.begin(), yp.end()));
        report.p = static_cast<double>(hits) / static_cast<double>(total);
    } else if (std::fabs(report.cor) >= 1.0) {
        report.p = 0.0;
    } else {
        const double t = report.cor * std::sqrt((n - 2) / (1.0 - report.cor * report.cor));
        report.p = analysis_detail::t_two_sided_p(t, n - 2.0);
    }
    return report;
}

/// Pairs every configuration's score at two fidelities (trial budgets) of
/// the same run and reports their Spearman correlation.
inline CorrelationReport cross_fidelity_correlation(const RunLog& log, std::int64_t low_budget,
                                                    std::int64_t high_budget) {
    std::vector<double> low, high;
    for (int member : log.header.members) {
        const auto lo = log.score_at(member, low_budget);
        const auto hi = log.score_at(member, high_budget);
        if (lo && hi && std::isfinite(*lo) && std::isfinite(*hi)) {
            low.push_back(*lo);
            high.push_back(*hi);
        }
    }
    if (low.size() < 2)
        throw Error(ErrorCode::InsufficientOverlap,
                    "fewer than 2 configurations scored at both budgets");
    return spearman(low, high);
}

// ---------------------------------------------------------------------------
// Schedules

/// Time-indexed hyperparameter assignments; a static configuration is a
/// single entry at trial 0.
struct Schedule {
    std::vector<std::pair<std::int64_t, Configuration>> entries;

    const Configuration& at_trial(std::int64_t trial) const {
        if (entries.empty()) throw Error(ErrorCode::EmptyLog, "empty schedule");
        const Configuration* current = &entries.front().second;
        for (const auto& [start, config] : entries) {
            if (start > trial) break;
            current = &config;
        }
        return *current;
    }
};

enum class ScheduleMode { LineageBest, TopKMean };

namespace analysis_detail {

inline std::map<int, std::map<std::int64_t, Configuration>> configs_by_member(const RunLog& log) {
    std::map<int, std::map<std::int64_t, Configuration>> by_member;
    for (const auto& t : log.trials) by_member[t.member][t.step] = t.config;
    return by_member;
}

inline std::map<int, double> final_scores(const RunLog& log) {
    std::map<int, double> scores;
    std::map<int, std::int64_t> last_step;
    for (const auto& t : log.trials) {
        auto it = last_step.find(t.member);
        if (it == last_step.end() || t.step >= it->second) {
            last_step[t.member] = t.step;
            scores[t.member] =
                t.failed ? -std::numeric_limits<double>::infinity() : t.score;
        }
    }
    return scores;
}

}  // namespace analysis_detail

/// Extracts a hyperparameter schedule from a finished run. LineageBest
/// walks the clone ancestry of the best final member backwards and emits
/// its per-interval configurations; TopKMean averages the top-k members'
/// values per interval (geometric mean for log-scaled parameters, rounded
/// for integer ones).
inline Schedule extract_schedule(const RunLog& log, ScheduleMode mode, const ParamSpace& space,
                                 int top_k = 5) {
    if (log.trials.empty()) throw Error(ErrorCode::EmptyLog, "run log holds no trials");
    const auto by_member = analysis_detail::configs_by_member(log);
    const auto finals = analysis_detail::final_scores(log);
    const std::int64_t interval = log.header.interval > 0 ? log.header.interval : log.header.budget;
    const std::int64_t budget = log.header.budget;

    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s < budget; s += std::max<std::int64_t>(1, interval)) starts.push_back(s);

    Schedule schedule;
    if (mode == ScheduleMode::LineageBest) {
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        if (log.end) {
            best = log.end->best_member;
        } else {
            for (const auto& [member, score] : finals)
                if (score > best_score) {
                    best_score = score;
                    best = member;
                }
        }
        // clone directives received at each barrier, per member
        std::map<std::pair<std::int64_t, int>, int> clone_donor;
        for (const auto& d : log.directives)
            if (d.directive.action == DirectiveAction::CloneFrom &&
                d.directive.donor_kind == DonorKind::Member)
                clone_donor[{d.step, d.directive.member}] = d.directive.donor;

        std::vector<std::pair<std::int64_t, Configuration>> reversed;
        int current = best;
        for (auto it = starts.rbegin(); it != starts.rend(); ++it) {
            const std::int64_t start = *it;
            const auto member_it = by_member.find(current);
            if (member_it != by_member.end()) {
                const auto cfg_it = member_it->second.find(start);
                if (cfg_it != member_it->second.end())
                    reversed.emplace_back(start, cfg_it->second);
            }
            const auto donor_it = clone_donor.find({start, current});
            if (donor_it != clone_donor.end()) current = donor_it->second;
        }
        schedule.entries.assign(reversed.rbegin(), reversed.rend());
    } else {
        for (std::size_t k = 0; k < starts.size(); ++k) {
            const std::int64_t start = starts[k];
            const std::int64_t judge =
                std::min<std::int64_t>(budget, start + std::max<std::int64_t>(1, interval)) - 1;
            // rank members by their score at the end of this interval
            std::vector<std::pair<double, int>> ranked;
            for (const auto& [member, per_trial] : by_member) {
                const auto score = log.score_at(member, judge + 1);
                if (score && per_trial.count(start)) ranked.emplace_back(*score, member);
            }
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            const int k_used = std::min<int>(top_k, static_cast<int>(ranked.size()));
            if (k_used == 0) continue;
            Configuration mean_config;
            for (const auto& spec : space.specs) {
                double acc = 0.0;
                for (int i = 0; i < k_used; ++i) {
                    const double v = by_member.at(ranked[i].second).at(start).at(spec.name);
                    acc += spec.log_scale ? std::log(v) : v;
                }
                acc /= k_used;
                double value = spec.log_scale ? std::exp(acc) : acc;
                value = spec.round_and_clamp(value);
                mean_config.values[spec.name] = value;
            }
            schedule.entries.emplace_back(start, std::move(mean_config));
        }
    }
    if (schedule.entries.empty()) throw Error(ErrorCode::EmptyLog, "no schedule entries extracted");
    return schedule;
}

// ---------------------------------------------------------------------------
// Schedule evaluation

struct EvaluationCurve {
    std::vector<double> mean_return;            // cross-seed mean per trial
    std::vector<double> curve;                  // running max of the mean (default reading)
    std::vector<std::vector<double>> per_seed;  // [seed][trial]
};

using TrainableFactory = std::function<std::unique_ptr<Trainable>(int seed_index)>;

/// Runs fresh trainables over `n_seeds` seeds, applying schedule entries at
/// their trial indices (the last entry persists). The default curve is the
/// running maximum of the cross-seed mean return; `mean_of_running_max`
/// switches to the alternative reading (mean of per-seed running maxima).
inline EvaluationCurve evaluate_schedule(const TrainableFactory& factory, const Schedule& schedule,
                                         int n_seeds, std::int64_t n_trials,
                                         std::uint64_t master_seed,
                                         bool mean_of_running_max = false, int workers = 0) {
    EvaluationCurve result;
    result.per_seed.assign(n_seeds, std::vector<double>(n_trials, 0.0));
    parallel_for(n_seeds, workers, [&](int seed_index) {
        auto trainable = factory(seed_index);
        double last_finite = -std::numeric_limits<double>::infinity();
        bool dead = false;
        for (std::int64_t t = 0; t < n_trials; ++t) {
            double r = last_finite;
            if (!dead) {
                try {
                    r = trainable->step(schedule.at_trial(t),
                                        seed_tree(master_seed, seed_index, t));
                    last_finite = r;
                } catch (const Error&) {
                    // a failed seed contributes its last finite return
                    dead = true;
                    r = last_finite;
                }
            }
            result.per_seed[seed_index][t] = r;
        }
    });
    result.mean_return.resize(n_trials);
    for (std::int64_t t = 0; t < n_trials; ++t) {
        double sum = 0.0;
        for (int s = 0; s < n_seeds; ++s) sum += result.per_seed[s][t];
        result.mean_return[t] = sum / n_seeds;
    }
    result.curve.resize(n_trials);
    if (mean_of_running_max) {
        std::vector<double> seed_max(n_seeds, -std::numeric_limits<double>::infinity());
        for (std::int64_t t = 0; t < n_trials; ++t) {
            double sum = 0.0;
            for (int s = 0; s < n_seeds; ++s) {
                seed_max[s] = std::max(seed_max[s], result.per_seed[s][t]);
                sum += seed_max[s];
            }
            result.curve[t] = sum / n_seeds;
        }
    } else {
        double running = -std::numeric_limits<double>::infinity();
        for (std::int64_t t = 0; t < n_trials; ++t) {
            running = std::max(running, result.mean_return[t]);
            result.curve[t] = running;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Histograms

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    int bins = 20;
    std::map<std::string, std::vector<int>> counts;  // per search method
};

/// Fixed-width bins over the pooled [min, max] of final member scores, one
/// count row per search method. Non-finite scores (failed members) are left
/// out of the binning.
inline Histogram final_return_histogram(const std::vector<const RunLog*>& logs, int bins = 20) {
    if (logs.empty()) throw Error(ErrorCode::EmptyLog, "no runs to histogram");
    Histogram hist;
    hist.bins = bins;
    std::vector<std::pair<std::string, double>> samples;
    for (const RunLog* log : logs) {
        for (const auto& [member, score] : analysis_detail::final_scores(*log))
            if (std::isfinite(score)) samples.emplace_back(log->header.scheduler, score);
    }
    if (samples.empty()) throw Error(ErrorCode::EmptyLog, "no finite final scores");
    hist.lo = hist.hi = samples.front().second;
    for (const auto& [method, s] : samples) {
        hist.lo = std::min(hist.lo, s);
        hist.hi = std::max(hist.hi, s);
    }
    for (const auto& [method, s] : samples) {
        auto& row = hist.counts[method];
        if (row.empty()) row.assign(bins, 0);
        int bin = 0;
        if (hist.hi > hist.lo)
            bin = std::min(bins - 1,
                           static_cast<int>((s - hist.lo) / (hist.hi - hist.lo) * bins));
        ++row[bin];
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Model diagnostics

/// Mean one-step NLL of the ensemble over the trailing `last_n` transitions
/// of a dataset, averaged across members, in raw state units.
inline double model_nll_eval(const GaussianEnsemble& model, const TransitionDataset& data,
                             std::size_t last_n) {
    const TransitionDataset window = data.tail(last_n);
    if (window.empty()) throw Error(ErrorCode::EmptyWindow, "no transitions to evaluate");
    double total = 0.0;
    Eigen::VectorXd mean_delta, variance;
    for (std::size_t i = 0; i < window.size(); ++i) {
        const auto s = window.state(i);
        const auto a = window.action(i);
        const auto sn = window.next_state(i);
        const Eigen::Map<const Eigen::VectorXd> state(s.data(), s.size());
        const Eigen::Map<const Eigen::VectorXd> action(a.data(), a.size());
        const Eigen::Map<const Eigen::VectorXd> target(sn.data(), sn.size());
        for (int b = 0; b < model.member_count(); ++b) {
            model.predict(state, action, b, mean_delta, variance);
            const Eigen::VectorXd mean = state + mean_delta;
            const Eigen::VectorXd log_var = variance.array().log();
            total += gaussian_nll(mean, log_var, target);
        }
    }
    return total / (static_cast<double>(window.size()) * model.member_count());
}

/// On-policy variant: the last `window_trials` trials of the member's own
/// history (all of them when fewer are available).
inline double on_policy_nll(const GaussianEnsemble& model, const TransitionDataset& data,
                            int trial_horizon, int window_trials = 20) {
    return model_nll_eval(model, data,
                          static_cast<std::size_t>(window_trials) *
                              static_cast<std::size_t>(trial_horizon));
}

// ---------------------------------------------------------------------------
// CSV outputs

namespace analysis_detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.precision(17);
    return out;
}

}  // namespace analysis_detail

inline void write_curve_csv(const EvaluationCurve& curve, const std::filesystem::path& path) {
    auto out = analysis_detail::open_csv(path);
    out << "trial,mean_return,curve\n";
    for (std::size_t t = 0; t < curve.curve.size(); ++t)
        out << t << ',' << curve.mean_return[t] << ',' << curve.curve[t] << '\n';
}

inline void write_hist_csv(const Histogram& hist, const std::filesystem::path& path) {
    auto out = analysis_detail::open_csv(path);
    out << "method,bin_lo,bin_hi,count\n";
    const double width = hist.bins > 0 ? (hist.hi - hist.lo) / hist.bins : 0.0;
    for (const auto& [method, counts] : hist.counts)
        for (int b = 0; b < hist.bins; ++b)
            out << method << ',' << hist.lo + b * width << ',' << hist.lo + (b + 1) * width << ','
                << counts[b] << '\n';
}

inline void write_corr_csv(const CorrelationReport& report, std::int64_t low, std::int64_t high,
                           const std::filesystem::path& path) {
    auto out = analysis_detail::open_csv(path);
    out << "low_budget,high_budget,cor,p,n,defined\n";
    out << low << ',' << high << ',' << report.cor << ',' << report.p << ',' << report.n << ','
        << (report.defined ? "true" : "false") << '\n';
}

inline void write_schedule_csv(const Schedule& schedule, const ParamSpace& space,
                               const std::filesystem::path& path) {
    auto out = analysis_detail::open_csv(path);
    out << "trial";
    for (const auto& spec : space.specs) out << ',' << spec.name;
    out << '\n';
    for (const auto& [trial, config] : schedule.entries) {
        out << trial;
        for (const auto& spec : space.specs) out << ',' << config.at(spec.name);
        out << '\n';
    }
}

inline Schedule load_schedule_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open schedule " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "empty schedule file");
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) names.push_back(field);
    }
    if (names.empty() || names.front() != "trial")
        throw Error(ErrorCode::IoError, "schedule header must start with 'trial'");
    Schedule schedule;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> row;
        while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
        if (row.size() != names.size())
            throw Error(ErrorCode::IoError, "ragged schedule row");
        Configuration config;
        for (std::size_t i = 1; i < names.size(); ++i) config.values[names[i]] = row[i];
        schedule.entries.emplace_back(static_cast<std::int64_t>(row[0]), std::move(config));
    }
    if (schedule.entries.empty()) throw Error(ErrorCode::EmptyLog, "schedule has no entries");
    return schedule;
}

}  // namespace tunembrl
