#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tunembrl/confspace.hpp"

using namespace tunembrl;

namespace {

ParamSpec continuous_spec(const std::string& name, double lo, double hi, bool log_scale,
                          double def) {
    ParamSpec s;
    s.name = name;
    s.kind = ParamKind::Continuous;
    s.lower = lo;
    s.upper = hi;
    s.log_scale = log_scale;
    s.default_value = def;
    return s;
}

ParamSpec integer_spec(const std::string& name, double lo, double hi, double def) {
    ParamSpec s = continuous_spec(name, lo, hi, false, def);
    s.kind = ParamKind::Integer;
    return s;
}

ParamSpace single(const ParamSpec& spec) {
    ParamSpace space;
    space.specs = {spec};
    return space;
}

}  // namespace

TEST_CASE("degenerate range collapses to its only value") {
    const auto space = single(continuous_spec("x", 5.0, 5.0, false, 5.0));
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        REQUIRE(sample(space, seed).at("x") == 5.0);
}

TEST_CASE("log-scaled sampling stays within bounds") {
    const auto space = single(continuous_spec("learning_rate", 3e-5, 3e-3, true, 1e-3));
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const double v = sample(space, seed).at("learning_rate");
        REQUIRE(v >= 3e-5);
        REQUIRE(v <= 3e-3);
    }
}

TEST_CASE("log-scaled sampling is centered on the geometric mean") {
    const auto space = single(continuous_spec("learning_rate", 3e-5, 3e-3, true, 1e-3));
    std::vector<double> values;
    Rng rng(11);
    for (int i = 0; i < 10000; ++i) values.push_back(sample(space, rng).at("learning_rate"));
    std::sort(values.begin(), values.end());
    const double median = 0.5 * (values[4999] + values[5000]);
    const double geo_mean = 3e-4;  // sqrt(3e-5 * 3e-3)
    REQUIRE(median > 0.75 * geo_mean);
    REQUIRE(median < 1.25 * geo_mean);

    const auto below = std::count_if(values.begin(), values.end(),
                                     [&](double v) { return v < geo_mean; });
    const double fraction = static_cast<double>(below) / values.size();
    REQUIRE(fraction > 0.48);
    REQUIRE(fraction < 0.52);
}

TEST_CASE("perturbation multiplies by 0.8 or 1.2 and both occur") {
    const auto space = single(continuous_spec("x", 1e-9, 1e9, false, 0.1));
    Configuration c;
    c.values["x"] = 0.1;
    int up = 0, down = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        const double v = perturb(c, space, seed).at("x");
        if (v == Catch::Approx(0.12).epsilon(1e-12)) ++up;
        else if (v == Catch::Approx(0.08).epsilon(1e-12)) ++down;
        else FAIL("unexpected perturbed value " << v);
    }
    REQUIRE(up > 0);
    REQUIRE(down > 0);
}

TEST_CASE("perturbation clamps at the upper bound") {
    const auto space = single(continuous_spec("x", 0.0, 0.5, false, 0.5));
    Configuration c;
    c.values["x"] = 0.5;
    bool saw_clamp = false;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double v = perturb(c, space, seed).at("x");
        REQUIRE(v <= 0.5);
        if (v == 0.5) saw_clamp = true;  // 0.5 * 1.2 clamped back
        else REQUIRE(v == Catch::Approx(0.4).epsilon(1e-12));
    }
    REQUIRE(saw_clamp);
}

TEST_CASE("integer perturbation rounds to the nearest integer") {
    const auto space = single(integer_spec("plan_horizon", 5, 40, 30));
    Configuration c;
    c.values["plan_horizon"] = 30.0;
    bool saw_down = false;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double v = perturb(c, space, seed).at("plan_horizon");
        REQUIRE((v == 24.0 || v == 36.0));
        if (v == 24.0) saw_down = true;  // round(30 * 0.8)
    }
    REQUIRE(saw_down);
}

TEST_CASE("two opposite perturbations compose multiplicatively") {
    const auto space = single(continuous_spec("x", 1e-300, 1e300, false, 1.0));
    Configuration c;
    c.values["x"] = 0.37;
    // find one 0.8 draw and one 1.2 draw, chain them
    double after_down = 0.0, after_both = 0.0;
    for (std::uint64_t seed = 0; seed < 100 && after_down == 0.0; ++seed) {
        const double v = perturb(c, space, seed).at("x");
        if (v < 0.37) after_down = v;
    }
    Configuration mid;
    mid.values["x"] = after_down;
    for (std::uint64_t seed = 0; seed < 100 && after_both == 0.0; ++seed) {
        const double v = perturb(mid, space, seed).at("x");
        if (v > after_down) after_both = v;
    }
    REQUIRE(after_both == Catch::Approx(0.96 * 0.37).epsilon(1e-12));
}

TEST_CASE("resample_or_perturb degenerate probabilities") {
    const auto space = single(continuous_spec("x", 0.0, 1000.0, false, 1.0));
    Configuration c;
    c.values["x"] = 100.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const double v = resample_or_perturb(c, space, 1.0, seed).at("x");
        REQUIRE((v == Catch::Approx(80.0) || v == Catch::Approx(120.0)));
    }
    // p = 0: fresh samples essentially never land on the perturbation grid
    int perturbed = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const double v = resample_or_perturb(c, space, 0.0, seed).at("x");
        if (v == 80.0 || v == 120.0) ++perturbed;
    }
    REQUIRE(perturbed == 0);
}

TEST_CASE("resample_or_perturb split matches its probability") {
    const auto space = single(continuous_spec("x", 1e-6, 1e6, true, 1.0));
    Configuration c;
    c.values["x"] = 1.0;
    Rng rng(123);
    int perturbed = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double v = resample_or_perturb(c, space, 0.75, rng).at("x");
        if (v == 0.8 || v == 1.2) ++perturbed;
    }
    const double fraction = static_cast<double>(perturbed) / n;
    REQUIRE(fraction >= 0.73);
    REQUIRE(fraction <= 0.77);
}

TEST_CASE("sampled and perturbed values always satisfy bounds") {
    Rng meta(77);
    for (int round = 0; round < 500; ++round) {
        ParamSpec spec;
        spec.name = "p";
        const bool integer = meta.bernoulli(0.4);
        spec.kind = integer ? ParamKind::Integer : ParamKind::Continuous;
        spec.log_scale = meta.bernoulli(0.4);
        double lo = spec.log_scale ? std::pow(10.0, meta.uniform(-6, 2)) : meta.uniform(-100, 100);
        double hi = lo + (spec.log_scale ? lo * meta.uniform(0.0, 100.0) : meta.uniform(0.0, 200.0));
        if (integer) {
            lo = std::ceil(lo);
            hi = std::max(lo, std::floor(hi));
            if (spec.log_scale && lo < 1) { lo = 1; hi = std::max(hi, 1.0); }
        }
        spec.lower = lo;
        spec.upper = hi;
        spec.default_value = integer ? std::round(0.5 * (lo + hi)) : 0.5 * (lo + hi);
        spec.default_value = std::clamp(spec.default_value, lo, hi);
        spec.validate();
        const auto space = single(spec);
        Configuration c = sample(space, meta);
        for (int k = 0; k < 5; ++k) {
            const double v = c.at("p");
            REQUIRE(v >= spec.lower);
            REQUIRE(v <= spec.upper);
            if (integer) REQUIRE(v == std::round(v));
            c = perturb(c, space, meta);
        }
    }
}

TEST_CASE("joint group is the disjoint union of both groups") {
    const auto file = load_space(std::string(TUNEMBRL_SPACE_DIR) + "/pusher.space");
    const auto joint = file.for_group(SpaceGroup::Joint);
    REQUIRE(joint.size() == file.model_train.size() + file.cem_optimizer.size());
    REQUIRE(file.model_train.size() == 3);
    REQUIRE(file.cem_optimizer.size() == 5);
}

TEST_CASE("shipped search spaces carry the documented values") {
    const auto pusher = load_space(std::string(TUNEMBRL_SPACE_DIR) + "/pusher.space");
    const auto* lr = pusher.for_group(SpaceGroup::ModelTrain).find("learning_rate");
    REQUIRE(lr != nullptr);
    REQUIRE(lr->lower == 3e-5);
    REQUIRE(lr->upper == 3e-3);
    REQUIRE(lr->log_scale);
    REQUIRE(lr->default_value == 1e-3);
    const auto* pop = pusher.for_group(SpaceGroup::CemOptimizer).find("cem_population_size");
    REQUIRE(pop->lower == 100);
    REQUIRE(pop->upper == 700);
    REQUIRE(pop->log_scale);
    REQUIRE(pop->default_value == 500);

    const auto reacher = load_space(std::string(TUNEMBRL_SPACE_DIR) + "/reacher.space");
    REQUIRE(reacher.for_group(SpaceGroup::ModelTrain).find("learning_rate")->default_value ==
            7.5e-4);
    REQUIRE(reacher.for_group(SpaceGroup::CemOptimizer).find("plan_horizon")->default_value == 25);
    REQUIRE(reacher.for_group(SpaceGroup::CemOptimizer).find("cem_iterations")->lower == 4);

    const auto rest = load_space(std::string(TUNEMBRL_SPACE_DIR) + "/hopper_cheetah_daisy.space");
    REQUIRE(rest.for_group(SpaceGroup::ModelTrain).find("weight_decay")->default_value == 7.5e-5);
    REQUIRE(rest.for_group(SpaceGroup::CemOptimizer).find("plan_horizon")->upper == 60);
    REQUIRE(rest.for_group(SpaceGroup::CemOptimizer).find("cem_alpha")->upper == 0.2);
}

TEST_CASE("parser rejects out-of-bound defaults") {
    const std::string path = "bad_space_test.space";
    {
        std::ofstream out(path);
        out << "space.name = bad\n";
        out << "param.x.group = model_train\n";
        out << "param.x.kind = continuous\n";
        out << "param.x.lower = 0.1\n";
        out << "param.x.upper = 1.0\n";
        out << "param.x.log = false\n";
        out << "param.x.default = 2.0\n";
    }
    REQUIRE_THROWS_AS(load_space(path), Error);
    std::remove(path.c_str());
}

TEST_CASE("configuration validation flags bad values") {
    const auto space = single(continuous_spec("x", 0.0, 1.0, false, 0.5));
    Configuration ok;
    ok.values["x"] = 0.25;
    REQUIRE_NOTHROW(validate_configuration(ok, space));
    Configuration out_of_bounds;
    out_of_bounds.values["x"] = 2.0;
    REQUIRE_THROWS_AS(validate_configuration(out_of_bounds, space), Error);
    Configuration wrong_keys;
    wrong_keys.values["y"] = 0.5;
    REQUIRE_THROWS_AS(validate_configuration(wrong_keys, space), Error);
}
