#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "tunembrl/confspace.hpp"
#include "tunembrl/dataset.hpp"
#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/serialize.hpp"

namespace tunembrl {

// ---------------------------------------------------------------------------
// Score window

/// Rolling objective over the most recent trial returns. The score of a
/// member is the arithmetic mean of its last min(window, n) returns.
struct ScoreWindow {
    int window = 3;
    std::vector<double> returns;

    void record(double r) { returns.push_back(r); }

    double score() const {
        if (returns.empty()) throw Error(ErrorCode::EmptyHistory, "score of empty window");
        const std::size_t n = std::min<std::size_t>(window, returns.size());
        const double sum =
            std::accumulate(returns.end() - static_cast<std::ptrdiff_t>(n), returns.end(), 0.0);
        return sum / static_cast<double>(n);
    }
};

// ---------------------------------------------------------------------------
// Checkpoint container and byte format

/// The unit of state PBT copies between members. `copy_history` is baked
/// into the checkpoint itself: a history-less checkpoint leaves the
/// receiver's own transition data untouched on restore.
struct TrainableCheckpoint {
    bool copy_history = true;
    std::vector<std::uint8_t> model_state;  // opaque: parameters + optimizer moments
    TransitionDataset history;
    Configuration hyperparameters;
    std::int64_t trial_index = 0;
    std::vector<std::uint8_t> rng_state;

    bool operator==(const TrainableCheckpoint&) const = default;
};

// Byte layout (little-endian):
//   bytes 0..7   magic "TMBRLCKP"
//   bytes 8..9   format version (u16), currently 1
//   byte  10     copy_history flag (u8)
//   byte  11     reserved, 0
//   then length-prefixed sections, each { section id u32, payload length u64,
//   payload }. Section ids: 1 model_state, 2 history, 3 hyperparameters,
//   4 counters, 5 rng_state. The history section is omitted entirely when
//   copy_history is false.
namespace checkpoint_format {

inline constexpr char kMagic[8] = {'T', 'M', 'B', 'R', 'L', 'C', 'K', 'P'};
inline constexpr std::uint16_t kVersion = 1;

enum Section : std::uint32_t {
    kModelState = 1,
    kHistory = 2,
    kHyperparameters = 3,
    kCounters = 4,
    kRngState = 5,
};

}  // namespace checkpoint_format

inline std::vector<std::uint8_t> encode_checkpoint(const TrainableCheckpoint& ckpt) {
    namespace fmt = checkpoint_format;
    ByteWriter w;
    w.bytes(fmt::kMagic, 8);
    w.u16(fmt::kVersion);
    w.u8(ckpt.copy_history ? 1 : 0);
    w.u8(0);

    auto section = [&w](std::uint32_t id, const std::vector<std::uint8_t>& payload) {
        w.u32(id);
        w.u64(payload.size());
        w.bytes(payload.data(), payload.size());
    };

    section(fmt::kModelState, ckpt.model_state);
    if (ckpt.copy_history) {
        ByteWriter h;
        ckpt.history.serialize(h);
        section(fmt::kHistory, h.data());
    }
    {
        ByteWriter h;
        h.u32(static_cast<std::uint32_t>(ckpt.hyperparameters.values.size()));
        for (const auto& [name, value] : ckpt.hyperparameters.values) {
            h.str(name);
            h.f64(value);
        }
        section(fmt::kHyperparameters, h.data());
    }
    {
        ByteWriter h;
        h.i64(ckpt.trial_index);
        section(fmt::kCounters, h.data());
    }
    section(fmt::kRngState, ckpt.rng_state);
    return w.take();
}

inline TrainableCheckpoint decode_checkpoint(const std::uint8_t* data, std::size_t size) {
    namespace fmt = checkpoint_format;
    if (size < 12) throw Error(ErrorCode::CorruptCheckpoint, "checkpoint too short");
    ByteReader r(data, size);
    char magic[8];
    std::memcpy(magic, r.raw(8), 8);
    if (std::memcmp(magic, fmt::kMagic, 8) != 0)
        throw Error(ErrorCode::CorruptCheckpoint, "bad checkpoint magic");
    const std::uint16_t version = r.u16();
    if (version != fmt::kVersion)
        throw Error(ErrorCode::VersionMismatch,
                    "checkpoint format version " + std::to_string(version) + " unsupported");
    TrainableCheckpoint ckpt;
    ckpt.copy_history = r.u8() != 0;
    r.u8();  // reserved

    bool saw_history = false;
    while (!r.done()) {
        const std::uint32_t id = r.u32();
        const std::uint64_t len = r.u64();
        const std::uint8_t* payload = r.raw(len);
        ByteReader body(payload, len);
        switch (id) {
            case fmt::kModelState:
                ckpt.model_state.assign(payload, payload + len);
                break;
            case fmt::kHistory:
                ckpt.history = TransitionDataset::deserialize(body);
                saw_history = true;
                break;
            case fmt::kHyperparameters: {
                const std::uint32_t n = body.u32();
                for (std::uint32_t i = 0; i < n; ++i) {
                    std::string name = body.str();
                    ckpt.hyperparameters.values[name] = body.f64();
                }
                break;
            }
            case fmt::kCounters:
                ckpt.trial_index = body.i64();
                break;
            case fmt::kRngState:
                ckpt.rng_state.assign(payload, payload + len);
                break;
            default:
                throw Error(ErrorCode::CorruptCheckpoint,
                            "unknown checkpoint section " + std::to_string(id));
        }
    }
    if (ckpt.copy_history != saw_history)
        throw Error(ErrorCode::CorruptCheckpoint, "history section/flag mismatch");
    return ckpt;
}

inline TrainableCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    return decode_checkpoint(bytes.data(), bytes.size());
}

inline void save_checkpoint(const TrainableCheckpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline TrainableCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Trainable contract

/// The contract every optimizee fulfills: run one trial under the active
/// hyperparameters, report a windowed score, and move state around through
/// checkpoints. Implementations are single-threaded per instance.
class Trainable {
public:
    virtual ~Trainable() = default;

    /// The hyperparameter group this instance is tuned over.
    virtual const ParamSpace& space() const = 0;

    /// Executes exactly one trial under `config`. Increments the trial
    /// counter and appends the trial return to the score window. Throws
    /// Error(NumericalOverflow) and marks the member failed when the trial
    /// produces a non-finite return or state.
    double step(const Configuration& config, std::uint64_t seed) {
        for (const auto& [name, value] : config.values)
            if (!std::isfinite(value))
                throw Error(ErrorCode::NonFiniteInput, "config value " + name + " is not finite");
        if (failed_)
            throw Error(ErrorCode::NumericalOverflow, "member has failed; restore before stepping");
        const double trial_return = run_trial(config, seed);
        ++trial_index_;
        if (!std::isfinite(trial_return)) {
            failed_ = true;
            throw Error(ErrorCode::NumericalOverflow, "trial produced a non-finite return");
        }
        window_.record(trial_return);
        return trial_return;
    }

    /// Windowed objective. Failed members rank below every finite score.
    double score() const {
        if (failed_) return -std::numeric_limits<double>::infinity();
        return window_.score();
    }

    const ScoreWindow& score_window() const { return window_; }
    std::int64_t trial_index() const { return trial_index_; }
    bool failed() const { return failed_; }
    void mark_failed() { failed_ = true; }

    /// Reinstates the return history when a run is resumed from persisted
    /// state (the score window is not part of the checkpoint itself).
    void restore_returns(std::vector<double> returns) { window_.returns = std::move(returns); }

    virtual TrainableCheckpoint checkpoint(bool copy_history) const = 0;

    /// Restores from a checkpoint. With copy_history unset in the checkpoint
    /// the receiver keeps its own transition history; everything else is
    /// overwritten. Clears the failed flag.
    void restore(const TrainableCheckpoint& ckpt) {
        restore_state(ckpt);
        trial_index_ = ckpt.trial_index;
        failed_ = false;
    }

protected:
    virtual double run_trial(const Configuration& config, std::uint64_t seed) = 0;
    virtual void restore_state(const TrainableCheckpoint& ckpt) = 0;

    ScoreWindow window_;
    std::int64_t trial_index_ = 0;
    bool failed_ = false;
};

// ---------------------------------------------------------------------------
// Synthetic trainable

/// Scheduler test harness with a known, drifting response surface:
/// f(h, t) = -(h - m(t))^2 where the optimum m(t) is a sawtooth in log10
/// space with configurable period. Cheap enough for Monte-Carlo scheduler
/// studies, and its best static configuration is provably worse than a
/// schedule that tracks m(t).
class SyntheticTrainable : public Trainable {
public:
    explicit SyntheticTrainable(int drift_period = 50, double drift_low = 1e-3,
                                double drift_high = 1.0)
        : drift_period_(drift_period), drift_low_(drift_low), drift_high_(drift_high) {
        ParamSpec rate;
        rate.name = "rate";
        rate.kind = ParamKind::Continuous;
        rate.lower = 1e-3;
        rate.upper = 2.0;
        rate.log_scale = true;
        rate.default_value = 0.05;
        space_.specs = {rate};
        space_.group = SpaceGroup::ModelTrain;
        active_config_ = default_configuration(space_);
    }

    const ParamSpace& space() const override { return space_; }

    /// Position of the moving optimum at trial t.
    double drift_target(std::int64_t t) const {
        const double phase =
            static_cast<double>(t % drift_period_) / static_cast<double>(drift_period_);
        const double lo = std::log10(drift_low_), hi = std::log10(drift_high_);
        return std::pow(10.0, lo + (hi - lo) * phase);
    }

    TrainableCheckpoint checkpoint(bool copy_history) const override {
        TrainableCheckpoint ckpt;
        ckpt.copy_history = copy_history;
        ByteWriter w;
        w.f64(theta_);
        ckpt.model_state = w.take();
        ckpt.hyperparameters = active_config_;
        ckpt.trial_index = trial_index_;
        ckpt.rng_state = rng_.serialize();
        return ckpt;
    }

    double theta() const { return theta_; }

private:
    double run_trial(const Configuration& config, std::uint64_t seed) override {
        active_config_ = config;
        rng_ = Rng(seed);
        const double h = config.at("rate");
        const double m = drift_target(trial_index_);
        const double value = -(h - m) * (h - m);
        theta_ += 0.1 * (value - theta_);  // slow trace of recent surface values
        return value;
    }

    void restore_state(const TrainableCheckpoint& ckpt) override {
        ByteReader r(ckpt.model_state.data(), ckpt.model_state.size());
        theta_ = r.f64();
        active_config_ = ckpt.hyperparameters;
        if (!ckpt.rng_state.empty())
            rng_ = Rng::deserialize(ckpt.rng_state.data(), ckpt.rng_state.size());
    }

    ParamSpace space_;
    Configuration active_config_;
    double theta_ = 0.0;
    int drift_period_;
    double drift_low_;
    double drift_high_;
    Rng rng_{0};
};

}  // namespace tunembrl
