#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tunembrl/confspace.hpp"
#include "tunembrl/dataset.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/mlp.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/rollout_model.hpp"
#include "tunembrl/serialize.hpp"

namespace tunembrl {

/// Diagonal-Gaussian negative log-likelihood, summed over dimensions.
inline double gaussian_nll(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var,
                           const Eigen::VectorXd& target) {
    if (mean.size() != log_var.size() || mean.size() != target.size())
        throw Error(ErrorCode::DimensionMismatch, "gaussian_nll dimension mismatch");
    constexpr double half_log_2pi = 0.9189385332046727;
    double total = 0.0;
    for (Eigen::Index d = 0; d < mean.size(); ++d) {
        const double resid = target[d] - mean[d];
        total += half_log_2pi + 0.5 * log_var[d] + 0.5 * resid * resid * std::exp(-log_var[d]);
    }
    return total;
}

struct ModelTrainHp {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int training_epochs = 5;

    static ModelTrainHp from_config(const Configuration& config) {
        ModelTrainHp hp;
        hp.learning_rate = config.at("learning_rate");
        hp.weight_decay = config.at("weight_decay");
        hp.training_epochs = static_cast<int>(std::llround(config.at("training_epochs")));
        return hp;
    }
};

struct TrainReport {
    /// epoch_nll[member][epoch]: mean NLL over that member's mini-batches.
    std::vector<std::vector<double>> epoch_nll;

    bool empty() const {
        return std::all_of(epoch_nll.begin(), epoch_nll.end(),
                           [](const auto& v) { return v.empty(); });
    }
};

/// Bootstrap ensemble of Gaussian dynamics networks. Each member is an MLP
/// (two hidden layers) predicting the normalized next-state delta as an
/// anisotropic Gaussian. Inputs are (state, action) rows normalized by
/// dataset statistics; members train on independent bootstrap resamples.
///
/// Single-precision parameters keep the planner's batched rollouts fast;
/// the training math is the same templated code exercised in double by the
/// finite-difference tests.
class GaussianEnsemble : public RolloutModel {
public:
    static constexpr int kDefaultMembers = 5;
    static constexpr int kHidden = 64;
    static constexpr int kBatchSize = 32;

    GaussianEnsemble() = default;

    GaussianEnsemble(int state_dim, int action_dim, int members = kDefaultMembers,
                     std::uint64_t seed = 0, int hidden = kHidden)
        : state_dim_(state_dim), action_dim_(action_dim) {
        for (int b = 0; b < members; ++b)
            members_.emplace_back(state_dim + action_dim, state_dim, hidden,
                                  splitmix64(seed ^ (0xd1e5u + static_cast<std::uint64_t>(b))));
        in_mean_ = Eigen::VectorXd::Zero(state_dim + action_dim);
        in_std_ = Eigen::VectorXd::Ones(state_dim + action_dim);
        delta_mean_ = Eigen::VectorXd::Zero(state_dim);
        delta_std_ = Eigen::VectorXd::Ones(state_dim);
        refresh_float_stats();
    }

    int member_count() const override { return static_cast<int>(members_.size()); }
    int state_dim() const override { return state_dim_; }
    int action_dim() const override { return action_dim_; }

    const Eigen::VectorXd& input_mean() const { return in_mean_; }
    const Eigen::VectorXd& input_std() const { return in_std_; }
    const Eigen::VectorXd& delta_mean() const { return delta_mean_; }
    const Eigen::VectorXd& delta_std() const { return delta_std_; }
    const Mlp<float>& member(int b) const { return members_.at(b); }

    /// Per-dimension mean/std of the (state, action) inputs and the state
    /// deltas, with a 1e-8 floor on every std.
    void refresh_norm_stats(const TransitionDataset& data) {
        if (data.empty()) throw Error(ErrorCode::InvalidConfig, "norm stats of empty dataset");
        const auto n = static_cast<Eigen::Index>(data.size());
        const int in_dim = state_dim_ + action_dim_;
        Eigen::VectorXd in_sum = Eigen::VectorXd::Zero(in_dim);
        Eigen::VectorXd in_sq = Eigen::VectorXd::Zero(in_dim);
        Eigen::VectorXd d_sum = Eigen::VectorXd::Zero(state_dim_);
        Eigen::VectorXd d_sq = Eigen::VectorXd::Zero(state_dim_);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int d = 0; d < state_dim_; ++d) {
                const double s = data.states[i * state_dim_ + d];
                in_sum[d] += s;
                in_sq[d] += s * s;
                const double delta = data.next_states[i * state_dim_ + d] - s;
                d_sum[d] += delta;
                d_sq[d] += delta * delta;
            }
            for (int d = 0; d < action_dim_; ++d) {
                const double a = data.actions[i * action_dim_ + d];
                in_sum[state_dim_ + d] += a;
                in_sq[state_dim_ + d] += a * a;
            }
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        in_mean_ = in_sum * inv_n;
        delta_mean_ = d_sum * inv_n;
        in_std_ = (in_sq * inv_n - in_mean_.cwiseProduct(in_mean_))
                      .cwiseMax(0.0)
                      .cwiseSqrt()
                      .cwiseMax(1e-8);
        delta_std_ = (d_sq * inv_n - delta_mean_.cwiseProduct(delta_mean_))
                         .cwiseMax(0.0)
                         .cwiseSqrt()
                         .cwiseMax(1e-8);
        refresh_float_stats();
    }

    /// Trains every member for hp.training_epochs passes over its own
    /// bootstrap resample (mini-batches of 32, AdamW). Refreshes the
    /// normalization statistics from `data` first. Throws NonFiniteLoss if
    /// any batch loss stops being finite.
    TrainReport train(const TransitionDataset& data, const ModelTrainHp& hp, std::uint64_t seed) {
        if (data.empty()) throw Error(ErrorCode::InvalidConfig, "training on empty dataset");
        refresh_norm_stats(data);
        TrainReport report;
        report.epoch_nll.resize(members_.size());
        if (hp.training_epochs <= 0) return report;

        const auto n = static_cast<Eigen::Index>(data.size());
        Eigen::MatrixXf inputs(n, state_dim_ + action_dim_);
        Eigen::MatrixXf targets(n, state_dim_);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int d = 0; d < state_dim_; ++d) {
                inputs(i, d) = static_cast<float>(
                    (data.states[i * state_dim_ + d] - in_mean_[d]) / in_std_[d]);
                targets(i, d) = static_cast<float>(
                    (data.next_states[i * state_dim_ + d] - data.states[i * state_dim_ + d] -
                     delta_mean_[d]) /
                    delta_std_[d]);
            }
            for (int d = 0; d < action_dim_; ++d)
                inputs(i, state_dim_ + d) = static_cast<float>(
                    (data.actions[i * action_dim_ + d] - in_mean_[state_dim_ + d]) /
                    in_std_[state_dim_ + d]);
        }

        for (std::size_t b = 0; b < members_.size(); ++b) {
            Rng rng(splitmix64(seed ^ (0xb007u + static_cast<std::uint64_t>(b))));
            std::vector<Eigen::Index> bootstrap(n);
            for (auto& idx : bootstrap) idx = rng.uniform_int(0, n - 1);

            for (int epoch = 0; epoch < hp.training_epochs; ++epoch) {
                // Fisher-Yates pass over the bootstrap sample.
                for (Eigen::Index i = n - 1; i > 0; --i)
                    std::swap(bootstrap[i], bootstrap[rng.uniform_int(0, i)]);
                double epoch_sum = 0.0;
                int batches = 0;
                for (Eigen::Index start = 0; start < n; start += kBatchSize) {
                    const Eigen::Index len = std::min<Eigen::Index>(kBatchSize, n - start);
                    Eigen::MatrixXf bx(len, inputs.cols()), bt(len, targets.cols());
                    for (Eigen::Index i = 0; i < len; ++i) {
                        bx.row(i) = inputs.row(bootstrap[start + i]);
                        bt.row(i) = targets.row(bootstrap[start + i]);
                    }
                    const double loss = members_[b].nll_and_grad(bx, bt);
                    if (!std::isfinite(loss))
                        throw Error(ErrorCode::NonFiniteLoss, "training loss is not finite");
                    members_[b].adam_step(hp.learning_rate, hp.weight_decay);
                    epoch_sum += loss;
                    ++batches;
                }
                report.epoch_nll[b].push_back(epoch_sum / batches);
            }
            if (!members_[b].finite())
                throw Error(ErrorCode::NonFiniteLoss, "parameters diverged");
        }
        return report;
    }

    /// Denormalized one-step prediction of a single member: the mean state
    /// delta and its variance. Deterministic for fixed inputs.
    void predict(const Eigen::VectorXd& state, const Eigen::VectorXd& action, int member,
                 Eigen::VectorXd& mean_delta, Eigen::VectorXd& variance) const {
        if (member < 0 || member >= member_count())
            throw Error(ErrorCode::InvalidConfig, "ensemble member index out of range");
        if (!state.allFinite() || !action.allFinite())
            throw Error(ErrorCode::NonFiniteInput, "predict on non-finite inputs");
        if (state.size() != state_dim_ || action.size() != action_dim_)
            throw Error(ErrorCode::DimensionMismatch, "predict input dims");
        Eigen::MatrixXf x(1, state_dim_ + action_dim_);
        for (int d = 0; d < state_dim_; ++d)
            x(0, d) = static_cast<float>((state[d] - in_mean_[d]) / in_std_[d]);
        for (int d = 0; d < action_dim_; ++d)
            x(0, state_dim_ + d) =
                static_cast<float>((action[d] - in_mean_[state_dim_ + d]) / in_std_[state_dim_ + d]);
        Eigen::MatrixXf mean_n, log_var;
        members_[member].forward(x, mean_n, log_var);
        mean_delta.resize(state_dim_);
        variance.resize(state_dim_);
        for (int d = 0; d < state_dim_; ++d) {
            mean_delta[d] = static_cast<double>(mean_n(0, d)) * delta_std_[d] + delta_mean_[d];
            variance[d] =
                std::exp(static_cast<double>(log_var(0, d))) * delta_std_[d] * delta_std_[d];
        }
    }

    /// Batched sampled transition used by the planner's rollouts.
    void step_batch(int member, const Eigen::Ref<const RowMatrixXd>& states,
                    const Eigen::Ref<const RowMatrixXd>& actions, Rng& rng,
                    Eigen::Ref<RowMatrixXd> next) const override {
        const auto n = states.rows();
        Eigen::MatrixXf x(n, state_dim_ + action_dim_);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int d = 0; d < state_dim_; ++d)
                x(i, d) = (static_cast<float>(states(i, d)) - in_mean_f_[d]) * in_inv_std_f_[d];
            for (int d = 0; d < action_dim_; ++d)
                x(i, state_dim_ + d) = (static_cast<float>(actions(i, d)) -
                                        in_mean_f_[state_dim_ + d]) *
                                       in_inv_std_f_[state_dim_ + d];
        }
        Eigen::MatrixXf mean_n, log_var;
        members_.at(member).forward(x, mean_n, log_var);
        Eigen::MatrixXf noise(n, state_dim_);
        rng.fill_normal(noise.data(), static_cast<std::size_t>(noise.size()));
        // delta = delta_std * (mean_n + exp(lv/2) * z) + delta_mean
        Eigen::MatrixXf sampled =
            (mean_n.array() + (0.5f * log_var.array()).exp() * noise.array()).matrix();
        for (Eigen::Index i = 0; i < n; ++i)
            for (int d = 0; d < state_dim_; ++d)
                next(i, d) = states(i, d) +
                             static_cast<double>(sampled(i, d)) * delta_std_f_[d] +
                             delta_mean_f_[d];
    }

    void serialize(ByteWriter& w) const {
        w.u32(1);  // ensemble payload version
        w.u32(static_cast<std::uint32_t>(state_dim_));
        w.u32(static_cast<std::uint32_t>(action_dim_));
        w.u32(static_cast<std::uint32_t>(members_.size()));
        for (const auto& m : members_) m.serialize(w);
        auto put = [&w](const Eigen::VectorXd& v) {
            w.u64(static_cast<std::uint64_t>(v.size()));
            w.bytes(v.data(), v.size() * sizeof(double));
        };
        put(in_mean_);
        put(in_std_);
        put(delta_mean_);
        put(delta_std_);
    }

    static GaussianEnsemble deserialize(ByteReader& r) {
        const std::uint32_t version = r.u32();
        if (version != 1) throw Error(ErrorCode::VersionMismatch, "ensemble payload version");
        GaussianEnsemble e;
        e.state_dim_ = static_cast<int>(r.u32());
        e.action_dim_ = static_cast<int>(r.u32());
        const std::uint32_t members = r.u32();
        for (std::uint32_t b = 0; b < members; ++b)
            e.members_.push_back(Mlp<float>::deserialize(r));
        auto get = [&r](Eigen::VectorXd& v) {
            const std::uint64_t n = r.u64();
            v.resize(static_cast<Eigen::Index>(n));
            std::memcpy(v.data(), r.raw(n * sizeof(double)), n * sizeof(double));
        };
        get(e.in_mean_);
        get(e.in_std_);
        get(e.delta_mean_);
        get(e.delta_std_);
        e.refresh_float_stats();
        return e;
    }

private:
    void refresh_float_stats() {
        in_mean_f_ = in_mean_.cast<float>();
        in_inv_std_f_ = in_std_.cwiseInverse().cast<float>();
        delta_mean_f_ = delta_mean_.cast<float>();
        delta_std_f_ = delta_std_.cast<float>();
    }

    int state_dim_ = 0;
    int action_dim_ = 0;
    std::vector<Mlp<float>> members_;
    Eigen::VectorXd in_mean_, in_std_, delta_mean_, delta_std_;
    Eigen::VectorXf in_mean_f_, in_inv_std_f_, delta_mean_f_, delta_std_f_;
};

}  // namespace tunembrl
