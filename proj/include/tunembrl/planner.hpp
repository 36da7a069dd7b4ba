#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "tunembrl/confspace.hpp"
#include "tunembrl/envs.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/rollout_model.hpp"

namespace tunembrl {

struct CemConfig {
    int plan_horizon = 30;
    int population_size = 500;
    double elites_ratio = 0.1;
    double alpha = 0.1;
    int iterations = 5;
    int particles = 5;

    int elite_count() const {
        const int k = static_cast<int>(std::llround(elites_ratio * population_size));
        return std::clamp(k, 1, population_size);
    }

    /// Reads the cem_optimizer group out of a configuration; the particle
    /// count is a fixed constant, not a tuned parameter.
    static CemConfig from_config(const Configuration& config, int particles = 5) {
        CemConfig cfg;
        cfg.plan_horizon = static_cast<int>(std::llround(config.at("plan_horizon")));
        cfg.population_size = static_cast<int>(std::llround(config.at("cem_population_size")));
        cfg.elites_ratio = config.at("cem_elites_ratio");
        cfg.alpha = config.at("cem_alpha");
        cfg.iterations = static_cast<int>(std::llround(config.at("cem_iterations")));
        cfg.particles = particles;
        return cfg;
    }
};

/// Diagonal Gaussian over action sequences: horizon x action_dim mean and
/// elementwise variance.
struct ActionDistribution {
    RowMatrixXd mean;
    RowMatrixXd variance;

    bool empty() const { return mean.size() == 0; }
};

struct CemIterationStats {
    double best_score = 0.0;
    double min_elite_score = 0.0;
    double max_non_elite_score = -std::numeric_limits<double>::infinity();
};

struct PlanStats {
    std::vector<CemIterationStats> iterations;
    std::int64_t model_rows = 0;  // model calls: one row propagated one step
    double best_score = 0.0;
};

/// Scores a whole population at once. Row i of `sequences` is action
/// sequence i flattened time-major (h * action_dim entries).
using BatchObjective =
    std::function<void(const RowMatrixXd& sequences, Eigen::VectorXd& scores)>;

/// Cross-entropy method over action sequences: sample, clip, score, refit
/// to the elites with retention weight alpha on the previous distribution.
inline ActionDistribution cem_optimize(const BatchObjective& objective,
                                       const Eigen::VectorXd& action_low,
                                       const Eigen::VectorXd& action_high, const CemConfig& cfg,
                                       ActionDistribution init, Rng& rng,
                                       PlanStats* stats = nullptr) {
    const int h = cfg.plan_horizon;
    const auto a_dim = action_low.size();
    if (init.mean.rows() != h || init.mean.cols() != a_dim)
        throw Error(ErrorCode::DimensionMismatch, "initial distribution shape");
    if (cfg.alpha == 1.0 && init.variance.maxCoeff() == 0.0)
        throw Error(ErrorCode::DegenerateVariance,
                    "alpha = 1 with all-zero variance cannot make progress");

    RowMatrixXd mean = init.mean;
    RowMatrixXd variance = init.variance;
    const int pop = cfg.population_size;
    const int k = cfg.elite_count();
    RowMatrixXd sequences(pop, h * a_dim);
    Eigen::VectorXd scores(pop);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const RowMatrixXd stddev = variance.cwiseMax(0.0).cwiseSqrt();
        for (int i = 0; i < pop; ++i) {
            for (int t = 0; t < h; ++t)
                for (Eigen::Index d = 0; d < a_dim; ++d)
                    sequences(i, t * a_dim + d) =
                        std::clamp(mean(t, d) + stddev(t, d) * rng.normal(), action_low[d],
                                   action_high[d]);
        }
        objective(sequences, scores);

        std::vector<int> order(pop);
        std::iota(order.begin(), order.end(), 0);
        auto ranked_score = [&](int i) {
            const double s = scores[i];
            return std::isfinite(s) ? s : -std::numeric_limits<double>::infinity();
        };
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return ranked_score(a) > ranked_score(b);
        });

        RowMatrixXd elite_mean = RowMatrixXd::Zero(h, a_dim);
        RowMatrixXd elite_sq = RowMatrixXd::Zero(h, a_dim);
        for (int e = 0; e < k; ++e) {
            const auto row = sequences.row(order[e]);
            for (int t = 0; t < h; ++t)
                for (Eigen::Index d = 0; d < a_dim; ++d) {
                    const double v = row[t * a_dim + d];
                    elite_mean(t, d) += v;
                    elite_sq(t, d) += v * v;
                }
        }
        elite_mean /= k;
        const RowMatrixXd elite_var =
            (elite_sq / k - elite_mean.cwiseProduct(elite_mean)).cwiseMax(0.0);

        mean = cfg.alpha * mean + (1.0 - cfg.alpha) * elite_mean;
        variance = cfg.alpha * variance + (1.0 - cfg.alpha) * elite_var;

        if (stats) {
            CemIterationStats it_stats;
            it_stats.best_score = ranked_score(order.front());
            it_stats.min_elite_score = ranked_score(order[k - 1]);
            if (k < pop) it_stats.max_non_elite_score = ranked_score(order[k]);
            stats->iterations.push_back(it_stats);
            stats->best_score = std::max(stats->best_score, it_stats.best_score);
        }
    }
    return {mean, variance};
}

/// Single-sequence objective adapter (sequence given as h x action_dim).
inline ActionDistribution cem_optimize(
    const std::function<double(const RowMatrixXd&)>& objective, const Eigen::VectorXd& action_low,
    const Eigen::VectorXd& action_high, const CemConfig& cfg, ActionDistribution init, Rng& rng,
    PlanStats* stats = nullptr) {
    const auto a_dim = action_low.size();
    BatchObjective batch = [&](const RowMatrixXd& sequences, Eigen::VectorXd& scores) {
        for (Eigen::Index i = 0; i < sequences.rows(); ++i) {
            const Eigen::Map<const RowMatrixXd> seq(sequences.row(i).data(),
                                                    sequences.cols() / a_dim, a_dim);
            scores[i] = objective(seq);
        }
    };
    return cem_optimize(batch, action_low, action_high, cfg, std::move(init), rng, stats);
}

using BatchReward = std::function<void(const Eigen::Ref<const RowMatrixXd>&,
                                       const Eigen::Ref<const RowMatrixXd>&,
                                       Eigen::Ref<Eigen::VectorXd>)>;

/// Trajectory-sampling evaluation of a whole population of action
/// sequences: every (sequence, particle) rollout commits to one uniformly
/// drawn ensemble member for its entire horizon, accumulates
/// sum_t reward(s_t, a_t) under sampled model transitions, and each
/// sequence scores the mean over its particles. Any non-finite rollout
/// pulls its sequence down to the -inf sentinel.
inline void evaluate_population(const RolloutModel& model, const BatchReward& reward,
                                const Eigen::VectorXd& start_state,
                                const RowMatrixXd& sequences, int horizon, int particles,
                                Rng& rng, Eigen::VectorXd& scores,
                                std::int64_t* model_rows = nullptr) {
    const int pop = static_cast<int>(sequences.rows());
    const int s_dim = static_cast<int>(start_state.size());
    const auto a_dim = sequences.cols() / horizon;
    const int b = model.member_count();
    const int n = pop * particles;

    std::vector<int> member_of(n);
    for (int r = 0; r < n; ++r) member_of[r] = static_cast<int>(rng.uniform_int(0, b - 1));

    // Rows permuted so each member's rollouts are one contiguous block.
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](int a, int c) { return member_of[a] < member_of[c]; });
    std::vector<int> block_start(b + 1, 0);
    for (int r : perm) ++block_start[member_of[r] + 1];
    for (int m = 0; m < b; ++m) block_start[m + 1] += block_start[m];

    RowMatrixXd states(n, s_dim), next_states(n, s_dim), actions(n, a_dim);
    states.rowwise() = start_state.transpose();
    Eigen::VectorXd returns = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd step_rewards(n);

    for (int t = 0; t < horizon; ++t) {
        for (int i = 0; i < n; ++i) {
            const int seq = perm[i] / particles;
            actions.row(i) = sequences.row(seq).segment(t * a_dim, a_dim);
        }
        reward(states, actions, step_rewards);
        returns += step_rewards;
        for (int m = 0; m < b; ++m) {
            const int lo = block_start[m], hi = block_start[m + 1];
            if (lo == hi) continue;
            model.step_batch(m, states.middleRows(lo, hi - lo), actions.middleRows(lo, hi - lo),
                             rng, next_states.middleRows(lo, hi - lo));
        }
        states.swap(next_states);
        if (model_rows) *model_rows += n;
    }

    scores.setZero(pop);
    std::vector<bool> finite(pop, true);
    for (int i = 0; i < n; ++i) {
        const int seq = perm[i] / particles;
        if (!std::isfinite(returns[i])) finite[seq] = false;
        scores[seq] += returns[i];
    }
    for (int i = 0; i < pop; ++i)
        scores[i] = finite[i] ? scores[i] / particles
                              : -std::numeric_limits<double>::infinity();
}

/// Spec-level single-sequence form: `actions` is plan_horizon x action_dim.
inline double evaluate_sequence(const RolloutModel& model, const BatchReward& reward,
                                const Eigen::VectorXd& start_state, const RowMatrixXd& actions,
                                int particles, Rng& rng) {
    RowMatrixXd sequences(1, actions.size());
    for (Eigen::Index t = 0; t < actions.rows(); ++t)
        sequences.block(0, t * actions.cols(), 1, actions.cols()) = actions.row(t);
    Eigen::VectorXd scores(1);
    evaluate_population(model, reward, start_state, sequences,
                        static_cast<int>(actions.rows()), particles, rng, scores);
    return scores[0];
}

/// One MPC step: warm-start the sampling distribution by shifting the
/// previous solution, optimize with CEM against the model, execute the
/// first action of the final mean.
inline std::pair<Eigen::VectorXd, ActionDistribution> mpc_act(
    const RolloutModel& model, const BatchReward& reward, const Eigen::VectorXd& action_low,
    const Eigen::VectorXd& action_high, const Eigen::VectorXd& state, const CemConfig& cfg,
    const ActionDistribution& previous, Rng& rng, PlanStats* stats = nullptr) {
    if (!state.allFinite()) throw Error(ErrorCode::NonFiniteInput, "planning from non-finite state");
    const int h = cfg.plan_horizon;
    const auto a_dim = action_low.size();
    const Eigen::RowVectorXd midpoint = 0.5 * (action_low + action_high).transpose();
    const Eigen::RowVectorXd init_var =
        ((action_high - action_low) / 4.0).array().square().matrix().transpose();

    ActionDistribution init;
    init.mean.resize(h, a_dim);
    init.variance.resize(h, a_dim);
    if (previous.empty() || previous.mean.rows() != h) {
        init.mean.rowwise() = midpoint;
        init.variance.rowwise() = init_var;
    } else {
        init.mean.topRows(h - 1) = previous.mean.bottomRows(h - 1);
        init.variance.topRows(h - 1) = previous.variance.bottomRows(h - 1);
        init.mean.row(h - 1) = midpoint;
        init.variance.row(h - 1) = init_var;
    }

    BatchObjective objective = [&](const RowMatrixXd& sequences, Eigen::VectorXd& scores) {
        evaluate_population(model, reward, state, sequences, h, cfg.particles, rng, scores,
                            stats ? &stats->model_rows : nullptr);
    };
    ActionDistribution final_dist =
        cem_optimize(objective, action_low, action_high, cfg, std::move(init), rng, stats);

    Eigen::VectorXd action = final_dist.mean.row(0).transpose();
    for (Eigen::Index d = 0; d < a_dim; ++d)
        action[d] = std::clamp(action[d], action_low[d], action_high[d]);
    return {action, std::move(final_dist)};
}

}  // namespace tunembrl
