#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>

#include "tunembrl/confspace.hpp"
#include "tunembrl/dataset.hpp"
#include "tunembrl/dynamics.hpp"
#include "tunembrl/envs.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/planner.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/trainable.hpp"

namespace tunembrl {

/// Aggregate planning diagnostics for one trial.
struct TrialPlanStats {
    int planning_steps = 0;
    double mean_best_score = 0.0;
    std::int64_t model_rows = 0;
};

/// Model-based trainable: a bootstrap Gaussian ensemble trained on the
/// member's transition history, driven by CEM model-predictive control.
/// One trial = retrain the model on the full dataset, run one episode with
/// MPC, aggregate the new transitions. The very first trial executes
/// uniformly random actions to seed the dataset; the model trains
/// incrementally from its current parameters on every later trial.
class PetsTrainable : public Trainable {
public:
    PetsTrainable(EnvSpec env, ParamSpace tuned_space, Configuration joint_defaults,
                  std::uint64_t init_seed, int ensemble_size = GaussianEnsemble::kDefaultMembers,
                  int particles = 5, bool plan_with_oracle = false)
        : env_(std::move(env)),
          tuned_space_(std::move(tuned_space)),
          defaults_(std::move(joint_defaults)),
          model_(env_.state_dim, env_.action_dim, ensemble_size, init_seed),
          data_(env_.state_dim, env_.action_dim),
          particles_(particles),
          plan_with_oracle_(plan_with_oracle) {
        active_config_ = default_configuration(tuned_space_);
        if (plan_with_oracle_) oracle_ = std::make_unique<EnvOracleModel>(env_);
    }

    const ParamSpace& space() const override { return tuned_space_; }
    const TransitionDataset& dataset() const { return data_; }
    const GaussianEnsemble& model() const { return model_; }
    const EnvSpec& env() const { return env_; }
    const TrialPlanStats& last_plan_stats() const { return plan_stats_; }

    /// The full hyperparameter assignment a trial runs under: joint-space
    /// defaults overlaid with whatever group is being tuned.
    Configuration resolve(const Configuration& tuned) const {
        Configuration full = defaults_;
        for (const auto& [name, value] : tuned.values) full.values[name] = value;
        return full;
    }

    TrainableCheckpoint checkpoint(bool copy_history) const override {
        TrainableCheckpoint ckpt;
        ckpt.copy_history = copy_history;
        ByteWriter w;
        model_.serialize(w);
        ckpt.model_state = w.take();
        if (copy_history) ckpt.history = data_;
        ckpt.hyperparameters = active_config_;
        ckpt.trial_index = trial_index_;
        ckpt.rng_state = rng_.serialize();
        return ckpt;
    }

private:
    double run_trial(const Configuration& config, std::uint64_t seed) override {
        validate_configuration(config, tuned_space_);
        active_config_ = config;
        const Configuration full = resolve(config);
        rng_ = Rng(seed);

        if (trial_index_ > 0 || !data_.empty()) {
            if (!plan_with_oracle_) {
                const auto hp = ModelTrainHp::from_config(full);
                model_.train(data_, hp, splitmix64(seed ^ 0x7261696eULL));
            }
            return planned_episode(full);
        }
        return random_episode();
    }

    void restore_state(const TrainableCheckpoint& ckpt) override {
        ByteReader r(ckpt.model_state.data(), ckpt.model_state.size());
        model_ = GaussianEnsemble::deserialize(r);
        if (ckpt.copy_history) data_ = ckpt.history;
        active_config_ = ckpt.hyperparameters;
        if (!ckpt.rng_state.empty())
            rng_ = Rng::deserialize(ckpt.rng_state.data(), ckpt.rng_state.size());
    }

    double random_episode() {
        Eigen::VectorXd state = env_.reset(rng_);
        Eigen::VectorXd action(env_.action_dim);
        double episode_return = 0.0;
        plan_stats_ = {};
        for (int t = 0; t < env_.horizon; ++t) {
            for (int d = 0; d < env_.action_dim; ++d)
                action[d] = rng_.uniform(env_.action_low[d], env_.action_high[d]);
            const double r = env_.reward(state, action);
            const Eigen::VectorXd next = env_.step(state, action);
            data_.append({state.data(), static_cast<std::size_t>(state.size())},
                         {action.data(), static_cast<std::size_t>(action.size())},
                         {next.data(), static_cast<std::size_t>(next.size())}, r);
            episode_return += r;
            state = next;
            if (!state.allFinite()) return std::numeric_limits<double>::quiet_NaN();
        }
        return episode_return;
    }

    double planned_episode(const Configuration& full) {
        const CemConfig cem = CemConfig::from_config(full, particles_);
        const RolloutModel& model =
            plan_with_oracle_ ? static_cast<const RolloutModel&>(*oracle_) : model_;
        Eigen::VectorXd state = env_.reset(rng_);
        ActionDistribution warm_start;
        double episode_return = 0.0;
        plan_stats_ = {};
        double best_sum = 0.0;
        for (int t = 0; t < env_.horizon; ++t) {
            if (!state.allFinite()) return std::numeric_limits<double>::quiet_NaN();
            PlanStats stats;
            auto [action, dist] = mpc_act(model, env_.reward_batch, env_.action_low,
                                          env_.action_high, state, cem, warm_start, rng_, &stats);
            warm_start = std::move(dist);
            const double r = env_.reward(state, action);
            const Eigen::VectorXd next = env_.step(state, action);
            data_.append({state.data(), static_cast<std::size_t>(state.size())},
                         {action.data(), static_cast<std::size_t>(action.size())},
                         {next.data(), static_cast<std::size_t>(next.size())}, r);
            episode_return += r;
            state = next;
            best_sum += stats.best_score;
            plan_stats_.model_rows += stats.model_rows;
            ++plan_stats_.planning_steps;
        }
        if (plan_stats_.planning_steps > 0)
            plan_stats_.mean_best_score = best_sum / plan_stats_.planning_steps;
        return episode_return;
    }

    EnvSpec env_;
    ParamSpace tuned_space_;
    Configuration defaults_;
    Configuration active_config_;
    GaussianEnsemble model_;
    TransitionDataset data_;
    int particles_;
    bool plan_with_oracle_;
    std::unique_ptr<EnvOracleModel> oracle_;
    Rng rng_{0};
    TrialPlanStats plan_stats_;
};

}  // namespace tunembrl
