#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"

namespace tunembrl {

enum class ParamKind { Continuous, Integer };

enum class SpaceGroup { ModelTrain, CemOptimizer, Joint };

inline const char* to_string(SpaceGroup g) {
    switch (g) {
        case SpaceGroup::ModelTrain: return "model_train";
        case SpaceGroup::CemOptimizer: return "cem_optimizer";
        case SpaceGroup::Joint: return "joint";
    }
    return "?";
}

inline std::optional<SpaceGroup> parse_group(const std::string& s) {
    if (s == "model_train") return SpaceGroup::ModelTrain;
    if (s == "cem_optimizer") return SpaceGroup::CemOptimizer;
    if (s == "joint") return SpaceGroup::Joint;
    return std::nullopt;
}

/// One tunable hyperparameter: a bounded continuous or integer domain,
/// optionally sampled uniformly in log10 space.
struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::Continuous;
    double lower = 0.0;
    double upper = 0.0;
    bool log_scale = false;
    double default_value = 0.0;

    void validate() const {
        if (!(lower <= upper))
            throw Error(ErrorCode::InvalidConfig, name + ": lower > upper");
        if (log_scale && !(lower > 0.0))
            throw Error(ErrorCode::InvalidConfig, name + ": log scale needs lower > 0");
        if (!(default_value >= lower && default_value <= upper))
            throw Error(ErrorCode::InvalidConfig, name + ": default out of bounds");
        if (kind == ParamKind::Integer) {
            if (lower != std::floor(lower) || upper != std::floor(upper) ||
                default_value != std::floor(default_value))
                throw Error(ErrorCode::InvalidConfig, name + ": integer spec needs integer bounds/default");
        }
    }

    /// Round-half-away-from-zero, then clamp to the domain.
    double round_and_clamp(double v) const {
        if (kind == ParamKind::Integer) v = std::round(v);
        return std::clamp(v, lower, upper);
    }
};

/// An ordered list of ParamSpecs making up one search group.
struct ParamSpace {
    std::vector<ParamSpec> specs;
    SpaceGroup group = SpaceGroup::Joint;

    bool empty() const { return specs.empty(); }
    std::size_t size() const { return specs.size(); }

    const ParamSpec* find(const std::string& name) const {
        for (const auto& s : specs)
            if (s.name == name) return &s;
        return nullptr;
    }

    void validate() const {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            specs[i].validate();
            for (std::size_t j = i + 1; j < specs.size(); ++j)
                if (specs[i].name == specs[j].name)
                    throw Error(ErrorCode::InvalidConfig, "duplicate parameter " + specs[i].name);
        }
    }
};

/// A concrete assignment of every parameter in some ParamSpace. Integer
/// parameters are stored exactly (integers are representable in double).
struct Configuration {
    std::map<std::string, double> values;

    double at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end())
            throw Error(ErrorCode::InvalidConfig, "missing parameter " + name);
        return it->second;
    }

    bool operator==(const Configuration& other) const = default;
};

inline Configuration default_configuration(const ParamSpace& space) {
    Configuration c;
    for (const auto& s : space.specs) c.values[s.name] = s.default_value;
    return c;
}

inline void validate_configuration(const Configuration& c, const ParamSpace& space) {
    if (c.values.size() != space.specs.size())
        throw Error(ErrorCode::InvalidConfig, "configuration/space key mismatch");
    for (const auto& s : space.specs) {
        const double v = c.at(s.name);
        if (!std::isfinite(v))
            throw Error(ErrorCode::NonFiniteInput, s.name + ": non-finite value");
        if (v < s.lower || v > s.upper)
            throw Error(ErrorCode::InvalidConfig, s.name + ": value out of bounds");
    }
}

/// Draws one value uniformly over the spec's domain (uniform in log10 space
/// when log-scaled); integer specs are rounded to the nearest integer and
/// clamped.
inline double sample_value(const ParamSpec& spec, Rng& rng) {
    double v;
    if (spec.log_scale) {
        const double lo = std::log10(spec.lower), hi = std::log10(spec.upper);
        v = std::pow(10.0, rng.uniform(lo, hi));
    } else {
        v = rng.uniform(spec.lower, spec.upper);
    }
    return spec.round_and_clamp(v);
}

inline Configuration sample(const ParamSpace& space, Rng& rng) {
    Configuration c;
    for (const auto& s : space.specs) c.values[s.name] = sample_value(s, rng);
    return c;
}

inline Configuration sample(const ParamSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    return sample(space, rng);
}

/// PBT exploration step: every value is independently multiplied by 0.8 or
/// 1.2 (fair coin per parameter), integers re-rounded, results clamped.
/// Log-scaled parameters are perturbed on the raw value as well.
inline Configuration perturb(const Configuration& config, const ParamSpace& space, Rng& rng) {
    Configuration out;
    for (const auto& s : space.specs) {
        const double factor = rng.bernoulli(0.5) ? 1.2 : 0.8;
        out.values[s.name] = s.round_and_clamp(config.at(s.name) * factor);
    }
    return out;
}

inline Configuration perturb(const Configuration& config, const ParamSpace& space,
                             std::uint64_t seed) {
    Rng rng(seed);
    return perturb(config, space, rng);
}

/// With probability p_perturb the whole configuration is perturbed, otherwise
/// it is resampled from scratch. The branch is decided once per call, not per
/// parameter.
inline Configuration resample_or_perturb(const Configuration& config, const ParamSpace& space,
                                         double p_perturb, Rng& rng) {
    if (rng.bernoulli(p_perturb)) return perturb(config, space, rng);
    return sample(space, rng);
}

inline Configuration resample_or_perturb(const Configuration& config, const ParamSpace& space,
                                         double p_perturb, std::uint64_t seed) {
    Rng rng(seed);
    return resample_or_perturb(config, space, p_perturb, rng);
}

/// A search-space definition file: both tuning groups plus their defaults.
/// The joint group is the disjoint union of the two.
struct SearchSpaceFile {
    std::string name;
    ParamSpace model_train;
    ParamSpace cem_optimizer;

    ParamSpace for_group(SpaceGroup g) const {
        switch (g) {
            case SpaceGroup::ModelTrain: return model_train;
            case SpaceGroup::CemOptimizer: return cem_optimizer;
            case SpaceGroup::Joint: {
                ParamSpace joint;
                joint.group = SpaceGroup::Joint;
                joint.specs = model_train.specs;
                joint.specs.insert(joint.specs.end(), cem_optimizer.specs.begin(),
                                   cem_optimizer.specs.end());
                return joint;
            }
        }
        return {};
    }

    /// Defaults of the full joint space (used for whatever group is not tuned).
    Configuration defaults() const { return default_configuration(for_group(SpaceGroup::Joint)); }
};

// Line-oriented key/value format, one property per line:
//   space.name = pusher
//   param.learning_rate.group = model_train
//   param.learning_rate.kind = continuous
//   param.learning_rate.lower = 3e-5
//   param.learning_rate.upper = 3e-3
//   param.learning_rate.log = true
//   param.learning_rate.default = 1e-3
// '#' starts a comment. Parse order of properties within a parameter is
// free; parameters keep their first-appearance order.
inline SearchSpaceFile parse_space(std::istream& in, const std::string& origin = "<stream>") {
    SearchSpaceFile file;
    struct Partial {
        ParamSpec spec;
        std::string group;
        bool seen_kind = false, seen_lower = false, seen_upper = false, seen_default = false;
    };
    std::vector<std::string> order;
    std::map<std::string, Partial> partials;

    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw Error(ErrorCode::InvalidConfig,
                    origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) fail("expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "space.name") {
            file.name = value;
            continue;
        }
        if (key.rfind("param.", 0) != 0) fail("unknown key " + key);
        const auto second_dot = key.find('.', 6);
        if (second_dot == std::string::npos) fail("malformed key " + key);
        const std::string pname = key.substr(6, second_dot - 6);
        const std::string prop = key.substr(second_dot + 1);
        if (!partials.count(pname)) {
            order.push_back(pname);
            partials[pname].spec.name = pname;
        }
        Partial& p = partials[pname];
        auto parse_num = [&](const std::string& v) {
            try {
                std::size_t pos = 0;
                const double d = std::stod(v, &pos);
                if (pos != v.size()) fail("trailing characters in number '" + v + "'");
                return d;
            } catch (const std::logic_error&) {
                fail("bad number '" + v + "'");
                return 0.0;
            }
        };
        auto parse_bool = [&](const std::string& v) {
            if (v == "true") return true;
            if (v == "false") return false;
            fail("bad boolean '" + v + "'");
            return false;
        };
        if (prop == "group") {
            p.group = value;
        } else if (prop == "kind") {
            if (value == "continuous") p.spec.kind = ParamKind::Continuous;
            else if (value == "integer") p.spec.kind = ParamKind::Integer;
            else fail("bad kind '" + value + "'");
            p.seen_kind = true;
        } else if (prop == "lower") {
            p.spec.lower = parse_num(value);
            p.seen_lower = true;
        } else if (prop == "upper") {
            p.spec.upper = parse_num(value);
            p.seen_upper = true;
        } else if (prop == "log") {
            p.spec.log_scale = parse_bool(value);
        } else if (prop == "default") {
            p.spec.default_value = parse_num(value);
            p.seen_default = true;
        } else {
            fail("unknown property '" + prop + "'");
        }
    }
    for (const auto& pname : order) {
        const Partial& p = partials.at(pname);
        if (!(p.seen_kind && p.seen_lower && p.seen_upper && p.seen_default))
            throw Error(ErrorCode::InvalidConfig, origin + ": parameter " + pname + " incomplete");
        p.spec.validate();
        if (p.group == "model_train") file.model_train.specs.push_back(p.spec);
        else if (p.group == "cem_optimizer") file.cem_optimizer.specs.push_back(p.spec);
        else
            throw Error(ErrorCode::InvalidConfig,
                        origin + ": parameter " + pname + " has bad group '" + p.group + "'");
    }
    file.model_train.group = SpaceGroup::ModelTrain;
    file.cem_optimizer.group = SpaceGroup::CemOptimizer;
    file.model_train.validate();
    file.cem_optimizer.validate();
    file.for_group(SpaceGroup::Joint).validate();  // joint-level name uniqueness
    return file;
}

inline SearchSpaceFile load_space(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open space file " + path);
    return parse_space(in, path);
}

}  // namespace tunembrl
