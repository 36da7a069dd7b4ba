#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/rollout_model.hpp"

namespace tunembrl {

/// Self-contained deterministic environment with an analytically known
/// reward. `step` and `reward` are pure; all stochasticity lives in `reset`.
struct EnvSpec {
    std::string name;
    int state_dim = 0;
    int action_dim = 0;
    Eigen::VectorXd action_low;
    Eigen::VectorXd action_high;
    int horizon = 0;
    int n_trials = 0;
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> reward;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> step;
    std::function<Eigen::VectorXd(Rng&)> reset;
    /// Vectorized reward over row-major batches, used by the planner.
    std::function<void(const Eigen::Ref<const RowMatrixXd>&, const Eigen::Ref<const RowMatrixXd>&,
                       Eigen::Ref<Eigen::VectorXd>)>
        reward_batch;
};

/// Torque-limited pendulum swing-up. State is (cos th, sin th, thdot) with
/// th = 0 upright; reward is -(wrap(th)^2 + 0.1 thdot^2 + 0.001 u^2), so the
/// only zero-reward configuration is balancing upright with no torque.
inline EnvSpec pendulum_swingup() {
    constexpr double dt = 0.05;
    constexpr double gravity = 10.0;
    constexpr double mass = 1.0;
    constexpr double length = 1.0;
    constexpr double max_speed = 8.0;
    constexpr double max_torque = 2.0;

    EnvSpec env;
    env.name = "pendulum";
    env.state_dim = 3;
    env.action_dim = 1;
    env.action_low = Eigen::VectorXd::Constant(1, -max_torque);
    env.action_high = Eigen::VectorXd::Constant(1, max_torque);
    env.horizon = 200;
    env.n_trials = 30;
    env.reward = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double theta = std::atan2(s[1], s[0]);
        return -(theta * theta + 0.1 * s[2] * s[2] + 0.001 * a[0] * a[0]);
    };
    env.reward_batch = [](const Eigen::Ref<const RowMatrixXd>& s,
                          const Eigen::Ref<const RowMatrixXd>& a,
                          Eigen::Ref<Eigen::VectorXd> out) {
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double theta = std::atan2(s(i, 1), s(i, 0));
            out[i] = -(theta * theta + 0.1 * s(i, 2) * s(i, 2) + 0.001 * a(i, 0) * a(i, 0));
        }
    };
    env.step = [=](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double theta = std::atan2(s[1], s[0]);
        const double torque = std::clamp(a[0], -max_torque, max_torque);
        double thdot = s[2] + dt * (3.0 * gravity / (2.0 * length) * std::sin(theta) +
                                    3.0 / (mass * length * length) * torque);
        thdot = std::clamp(thdot, -max_speed, max_speed);
        const double next_theta = theta + thdot * dt;
        Eigen::VectorXd next(3);
        next << std::cos(next_theta), std::sin(next_theta), thdot;
        return next;
    };
    env.reset = [](Rng& rng) {
        const double theta = std::numbers::pi + 0.05 * rng.normal();
        const double thdot = 0.05 * rng.normal();
        Eigen::VectorXd s(3);
        s << std::cos(theta), std::sin(theta), thdot;
        return s;
    };
    return env;
}

/// Planar point-mass pusher: a force-controlled robot nudges a puck toward
/// a fixed goal. Contact is modeled as a transfer of the robot's velocity
/// component along the contact normal.
inline EnvSpec point_pusher() {
    constexpr double dt = 0.1;
    constexpr double robot_drag = 0.95;
    constexpr double puck_friction = 0.9;
    constexpr double contact_radius = 0.12;
    const Eigen::Vector2d goal(0.4, 0.0);

    EnvSpec env;
    env.name = "pusher2d";
    env.state_dim = 8;  // robot pos, robot vel, puck pos, puck vel
    env.action_dim = 2;
    env.action_low = Eigen::VectorXd::Constant(2, -1.0);
    env.action_high = Eigen::VectorXd::Constant(2, 1.0);
    env.horizon = 150;
    env.n_trials = 40;
    env.reward = [goal](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const Eigen::Vector2d rp(s[0], s[1]), pp(s[4], s[5]);
        return -((pp - goal).norm() + 0.1 * (rp - pp).norm() + 0.01 * a.squaredNorm());
    };
    env.reward_batch = [goal](const Eigen::Ref<const RowMatrixXd>& s,
                              const Eigen::Ref<const RowMatrixXd>& a,
                              Eigen::Ref<Eigen::VectorXd> out) {
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double dxg = s(i, 4) - goal.x(), dyg = s(i, 5) - goal.y();
            const double dxr = s(i, 0) - s(i, 4), dyr = s(i, 1) - s(i, 5);
            out[i] = -(std::sqrt(dxg * dxg + dyg * dyg) +
                       0.1 * std::sqrt(dxr * dxr + dyr * dyr) +
                       0.01 * (a(i, 0) * a(i, 0) + a(i, 1) * a(i, 1)));
        }
    };
    env.step = [=](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const Eigen::Vector2d rp(s[0], s[1]), rv(s[2], s[3]);
        const Eigen::Vector2d pp(s[4], s[5]), pv(s[6], s[7]);
        const Eigen::Vector2d force(std::clamp(a[0], -1.0, 1.0), std::clamp(a[1], -1.0, 1.0));
        const Eigen::Vector2d rv_next = robot_drag * rv + dt * force;
        const Eigen::Vector2d rp_next = rp + dt * rv_next;
        Eigen::Vector2d pv_next;
        const Eigen::Vector2d offset = pp - rp_next;
        const double dist = offset.norm();
        if (dist <= contact_radius && dist > 1e-9) {
            const Eigen::Vector2d normal = offset / dist;
            pv_next = std::max(0.0, rv_next.dot(normal)) * normal;
        } else {
            pv_next = puck_friction * pv;
        }
        const Eigen::Vector2d pp_next = pp + dt * pv_next;
        Eigen::VectorXd next(8);
        next << rp_next.x(), rp_next.y(), rv_next.x(), rv_next.y(), pp_next.x(), pp_next.y(),
            pv_next.x(), pv_next.y();
        return next;
    };
    env.reset = [](Rng& rng) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(8);
        s[0] = -0.4 + 0.01 * rng.normal();
        s[1] = 0.01 * rng.normal();
        s[4] = 0.01 * rng.normal();
        s[5] = 0.01 * rng.normal();
        return s;
    };
    return env;
}

inline EnvSpec make_env(const std::string& name) {
    if (name == "pendulum") return pendulum_swingup();
    if (name == "pusher2d") return point_pusher();
    throw Error(ErrorCode::InvalidConfig, "unknown environment '" + name + "'");
}

inline std::vector<std::string> env_names() { return {"pendulum", "pusher2d"}; }

/// Exact environment dynamics exposed through the rollout-model interface:
/// a single deterministic "ensemble member". Used to isolate planning
/// quality from model quality.
class EnvOracleModel : public RolloutModel {
public:
    explicit EnvOracleModel(EnvSpec env) : env_(std::move(env)) {}

    int member_count() const override { return 1; }
    int state_dim() const override { return env_.state_dim; }
    int action_dim() const override { return env_.action_dim; }

    void step_batch(int /*member*/, const Eigen::Ref<const RowMatrixXd>& states,
                    const Eigen::Ref<const RowMatrixXd>& actions, Rng& /*rng*/,
                    Eigen::Ref<RowMatrixXd> next) const override {
        for (Eigen::Index i = 0; i < states.rows(); ++i) {
            const Eigen::VectorXd s = states.row(i).transpose();
            const Eigen::VectorXd a = actions.row(i).transpose();
            next.row(i) = env_.step(s, a).transpose();
        }
    }

private:
    EnvSpec env_;
};

}  // namespace tunembrl
