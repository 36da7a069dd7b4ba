#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tunembrl/errors.hpp"
#include "tunembrl/serialize.hpp"

namespace tunembrl {

/// Append-only store of (state, action, next_state, reward) transitions,
/// flattened row-major. This is the "history" a population member carries
/// and optionally hands over when it is cloned.
struct TransitionDataset {
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> states;
    std::vector<double> actions;
    std::vector<double> next_states;
    std::vector<double> rewards;

    TransitionDataset() = default;
    TransitionDataset(int sdim, int adim) : state_dim(sdim), action_dim(adim) {}

    bool operator==(const TransitionDataset&) const = default;

    std::size_t size() const { return rewards.size(); }
    bool empty() const { return rewards.empty(); }

    void append(std::span<const double> state, std::span<const double> action,
                std::span<const double> next_state, double reward) {
        if (static_cast<int>(state.size()) != state_dim ||
            static_cast<int>(next_state.size()) != state_dim ||
            static_cast<int>(action.size()) != action_dim)
            throw Error(ErrorCode::DimensionMismatch, "transition dims do not match dataset");
        states.insert(states.end(), state.begin(), state.end());
        actions.insert(actions.end(), action.begin(), action.end());
        next_states.insert(next_states.end(), next_state.begin(), next_state.end());
        rewards.push_back(reward);
    }

    std::span<const double> state(std::size_t i) const {
        return {states.data() + i * state_dim, static_cast<std::size_t>(state_dim)};
    }
    std::span<const double> action(std::size_t i) const {
        return {actions.data() + i * action_dim, static_cast<std::size_t>(action_dim)};
    }
    std::span<const double> next_state(std::size_t i) const {
        return {next_states.data() + i * state_dim, static_cast<std::size_t>(state_dim)};
    }

    /// A view of the trailing `n` transitions (all of them when fewer exist).
    TransitionDataset tail(std::size_t n) const {
        TransitionDataset out(state_dim, action_dim);
        const std::size_t count = n < size() ? n : size();
        const std::size_t begin = size() - count;
        out.states.assign(states.begin() + begin * state_dim, states.end());
        out.actions.assign(actions.begin() + begin * action_dim, actions.end());
        out.next_states.assign(next_states.begin() + begin * state_dim, next_states.end());
        out.rewards.assign(rewards.begin() + begin, rewards.end());
        return out;
    }

    void serialize(ByteWriter& w) const {
        w.u32(static_cast<std::uint32_t>(state_dim));
        w.u32(static_cast<std::uint32_t>(action_dim));
        w.array(states);
        w.array(actions);
        w.array(next_states);
        w.array(rewards);
    }

    static TransitionDataset deserialize(ByteReader& r) {
        TransitionDataset d;
        d.state_dim = static_cast<int>(r.u32());
        d.action_dim = static_cast<int>(r.u32());
        d.states = r.array<double>();
        d.actions = r.array<double>();
        d.next_states = r.array<double>();
        d.rewards = r.array<double>();
        const std::size_t n = d.rewards.size();
        if (d.states.size() != n * d.state_dim || d.next_states.size() != n * d.state_dim ||
            d.actions.size() != n * d.action_dim)
            throw Error(ErrorCode::CorruptCheckpoint, "inconsistent dataset arrays");
        return d;
    }
};

}  // namespace tunembrl
