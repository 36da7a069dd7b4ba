#pragma once

#include <Eigen/Dense>

#include "tunembrl/rng.hpp"

namespace tunembrl {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Anything the planner can propagate trajectories through. A rollout
/// particle commits to one ensemble member for its whole horizon; the
/// planner groups rows by member and asks for one batched, sampled step at
/// a time. Deterministic models simply ignore the generator.
class RolloutModel {
public:
    virtual ~RolloutModel() = default;

    virtual int member_count() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;

    /// Samples next states for a batch of rows that all use member
    /// `member`. `states` is N x state_dim, `actions` N x action_dim,
    /// `next` N x state_dim (written).
    virtual void step_batch(int member, const Eigen::Ref<const RowMatrixXd>& states,
                            const Eigen::Ref<const RowMatrixXd>& actions, Rng& rng,
                            Eigen::Ref<RowMatrixXd> next) const = 0;
};

}  // namespace tunembrl
