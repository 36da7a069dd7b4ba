#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "tunembrl/schedulers.hpp"

using namespace tunembrl;

namespace {

ParamSpace wide_space() {
    ParamSpec s;
    s.name = "x";
    s.kind = ParamKind::Continuous;
    s.lower = 1e-9;
    s.upper = 1e9;
    s.log_scale = true;
    s.default_value = 1.0;
    ParamSpace space;
    space.specs = {s};
    return space;
}

std::pair<std::vector<MemberScore>, std::map<int, Configuration>> population(int n) {
    std::vector<MemberScore> scores;
    std::map<int, Configuration> configs;
    for (int i = 0; i < n; ++i) {
        scores.push_back({i, static_cast<double>(i)});
        Configuration c;
        c.values["x"] = 1.0 + i;
        configs[i] = c;
    }
    return {scores, configs};
}

PbtOptions options(int n) {
    PbtOptions o;
    o.population_size = n;
    o.truncation_quantile = 0.2;
    o.interval = 4;
    return o;
}

}  // namespace

TEST_CASE("truncation replaces the bottom quantile with top-quantile clones") {
    auto [scores, configs] = population(10);
    Rng rng(1);
    const auto result = pbt_step(scores, options(10), configs, wide_space(), rng);
    REQUIRE(result.directives.size() == 10);
    REQUIRE_FALSE(result.warning.has_value());
    int clones = 0;
    for (const auto& d : result.directives) {
        if (d.action == DirectiveAction::CloneFrom) {
            ++clones;
            REQUIRE((d.member == 0 || d.member == 1));     // scored 0 and 1
            REQUIRE((d.donor == 8 || d.donor == 9));       // scored 8 and 9
            REQUIRE(d.donor != d.member);
            REQUIRE(d.new_config.has_value());
        } else {
            REQUIRE(d.action == DirectiveAction::Continue);
            REQUIRE(d.member >= 2);
        }
    }
    REQUIRE(clones == 2);
}

TEST_CASE("five members yield exactly one replacement") {
    auto [scores, configs] = population(5);
    Rng rng(2);
    const auto result = pbt_step(scores, options(5), configs, wide_space(), rng);
    int clones = 0;
    for (const auto& d : result.directives)
        if (d.action == DirectiveAction::CloneFrom) {
            ++clones;
            REQUIRE(d.member == 0);
            REQUIRE(d.donor == 4);
        }
    REQUIRE(clones == 1);
}

TEST_CASE("the middle of the population is never touched") {
    auto [scores, configs] = population(20);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const auto result = pbt_step(scores, options(20), configs, wide_space(), rng);
        for (const auto& d : result.directives)
            if (d.member >= 4 && d.member < 16)
                REQUIRE(d.action == DirectiveAction::Continue);
    }
}

TEST_CASE("explore split between perturb and resample is 75/25") {
    auto [scores, configs] = population(10);
    const auto space = wide_space();
    int perturbed = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 5000; ++seed) {
        Rng rng(seed);
        const auto result = pbt_step(scores, options(10), configs, space, rng);
        for (const auto& d : result.directives) {
            if (d.action != DirectiveAction::CloneFrom) continue;
            const double donor_value = configs.at(d.donor).at("x");
            const double v = d.new_config->at("x");
            if (v == 0.8 * donor_value || v == 1.2 * donor_value) ++perturbed;
            ++total;
        }
    }
    REQUIRE(total == 10000);
    const double fraction = static_cast<double>(perturbed) / total;
    REQUIRE(fraction >= 0.73);
    REQUIRE(fraction <= 0.77);
}

TEST_CASE("directives are a pure function of their inputs") {
    auto [scores, configs] = population(10);
    Rng a(77), b(77);
    const auto r1 = pbt_step(scores, options(10), configs, wide_space(), a);
    const auto r2 = pbt_step(scores, options(10), configs, wide_space(), b);
    REQUIRE(r1.directives == r2.directives);
}

TEST_CASE("failed members at sentinel scores are prime exploit targets") {
    auto [scores, configs] = population(10);
    scores[7].score = -std::numeric_limits<double>::infinity();
    Rng rng(5);
    const auto result = pbt_step(scores, options(10), configs, wide_space(), rng);
    bool member7_cloned = false;
    for (const auto& d : result.directives)
        if (d.member == 7 && d.action == DirectiveAction::CloneFrom) member7_cloned = true;
    REQUIRE(member7_cloned);
}

TEST_CASE("tiny populations degenerate to a warned no-op") {
    auto [scores, configs] = population(3);  // floor(0.2 * 3) = 0
    Rng rng(1);
    const auto result = pbt_step(scores, options(3), configs, wide_space(), rng);
    REQUIRE(result.warning.has_value());
    for (const auto& d : result.directives) REQUIRE(d.action == DirectiveAction::Continue);
}

TEST_CASE("hyperband ladder for budgets 33..300") {
    const auto plan = hyperband_plan(33, 300, 3);
    REQUIRE(plan.s_max == 2);
    REQUIRE(plan.brackets.size() == 3);

    REQUIRE(plan.brackets[0].s == 2);
    REQUIRE(plan.brackets[0].n_configs == 9);
    REQUIRE(plan.brackets[0].rungs.size() == 3);
    REQUIRE(plan.brackets[0].rungs[0].budget == 33);
    REQUIRE(plan.brackets[0].rungs[0].n_configs == 9);
    REQUIRE(plan.brackets[0].rungs[1].budget == 100);
    REQUIRE(plan.brackets[0].rungs[1].n_configs == 3);
    REQUIRE(plan.brackets[0].rungs[2].budget == 300);
    REQUIRE(plan.brackets[0].rungs[2].n_configs == 1);

    REQUIRE(plan.brackets[1].n_configs == 5);
    REQUIRE(plan.brackets[1].rungs[0].budget == 100);
    REQUIRE(plan.brackets[2].n_configs == 3);
    REQUIRE(plan.brackets[2].rungs[0].budget == 300);
}

TEST_CASE("collapsed budgets give a single one-config bracket") {
    const auto plan = hyperband_plan(1, 1, 3);
    REQUIRE(plan.s_max == 0);
    REQUIRE(plan.brackets.size() == 1);
    REQUIRE(plan.brackets[0].n_configs == 1);
    REQUIRE(plan.brackets[0].rungs.size() == 1);
    REQUIRE(plan.brackets[0].rungs[0].budget == 1);
}

TEST_CASE("budgets 8..80 start the first bracket at 9 trials") {
    const auto plan = hyperband_plan(8, 80, 3);
    REQUIRE(plan.s_max == 2);
    REQUIRE(plan.brackets[0].rungs[0].budget == 9);  // round(80 / 9)
    REQUIRE(plan.brackets[0].rungs[1].budget == 27);
    REQUIRE(plan.brackets[0].rungs[2].budget == 80);
}

TEST_CASE("invalid budgets are rejected") {
    REQUIRE_THROWS_AS(hyperband_plan(10, 5, 3), Error);
    REQUIRE_THROWS_AS(hyperband_plan(0, 5, 3), Error);
    REQUIRE_THROWS_AS(hyperband_plan(1, 5, 1), Error);
}

TEST_CASE("successive halving keeps the top third") {
    std::vector<RungEntry> rung;
    for (int i = 0; i < 9; ++i) rung.push_back({i, static_cast<double>(i)});
    const auto survivors = successive_halving_promote(rung, 3);
    REQUIRE(survivors == std::vector<int>{6, 7, 8});

    std::vector<RungEntry> five;
    for (int i = 0; i < 5; ++i) five.push_back({i, static_cast<double>(-i)});
    REQUIRE(successive_halving_promote(five, 3) == std::vector<int>{0});
}

TEST_CASE("equal scores break ties toward earlier configs") {
    std::vector<RungEntry> rung;
    for (int i = 0; i < 9; ++i) rung.push_back({i, 1.0});
    REQUIRE(successive_halving_promote(rung, 3) == std::vector<int>{0, 1, 2});
}

TEST_CASE("bracket accounting matches an independent recount") {
    Rng rng(9);
    for (int round = 0; round < 200; ++round) {
        const std::int64_t b_min = rng.uniform_int(1, 20);
        const std::int64_t b_max = b_min + rng.uniform_int(0, 300);
        const int eta = static_cast<int>(rng.uniform_int(2, 5));
        const auto plan = hyperband_plan(b_min, b_max, eta, 3);
        std::int64_t recount = 0;
        for (int iter = 0; iter < plan.n_iterations; ++iter) {
            const auto& bracket = plan.brackets[iter % plan.brackets.size()];
            // simulate continuation accounting trial by trial
            for (std::size_t j = 0; j < bracket.rungs.size(); ++j) {
                const std::int64_t from = j == 0 ? 0 : bracket.rungs[j - 1].budget;
                recount += bracket.rungs[j].n_configs * (bracket.rungs[j].budget - from);
            }
        }
        REQUIRE(recount == plan_total_trials(plan));
    }
}

TEST_CASE("elite archive keeps the best entries sorted and bounded") {
    EliteArchive archive(3);
    auto entry = [](double score) {
        EliteArchive::Entry e;
        e.score = score;
        e.checkpoint = std::make_shared<const TrainableCheckpoint>();
        return e;
    };
    REQUIRE(archive.offer(entry(1.0)));
    REQUIRE(archive.offer(entry(5.0)));
    REQUIRE(archive.offer(entry(3.0)));
    REQUIRE(archive.entry(0).score == 5.0);
    REQUIRE(archive.entry(2).score == 1.0);
    REQUIRE_FALSE(archive.offer(entry(0.5)));  // worse than the worst, archive full
    REQUIRE(archive.offer(entry(4.0)));
    REQUIRE(archive.size() == 3);
    REQUIRE(archive.entry(2).score == 3.0);  // 1.0 fell out
}

namespace {

std::vector<PbtBtMember> bt_population(int n) {
    std::vector<PbtBtMember> members;
    for (int i = 0; i < n; ++i) {
        PbtBtMember m;
        m.member = i;
        m.score = static_cast<double>(i);
        m.config.values["x"] = 1.0 + i;
        m.checkpoint = std::make_shared<const TrainableCheckpoint>();
        members.push_back(std::move(m));
    }
    return members;
}

}  // namespace

TEST_CASE("backtracking only fires on the gate step") {
    auto members = bt_population(10);
    EliteArchive archive(10);
    Rng rng(3);
    const auto off_gate = pbt_bt_step(29, members, archive, options(10), wide_space(), rng, 30);
    for (const auto& d : off_gate.directives)
        if (d.action == DirectiveAction::CloneFrom) REQUIRE(d.donor_kind == DonorKind::Member);
    REQUIRE(archive.size() > 0);  // top members were offered either way

    const auto on_gate = pbt_bt_step(30, members, archive, options(10), wide_space(), rng, 30);
    int elite_clones = 0;
    for (const auto& d : on_gate.directives)
        if (d.action == DirectiveAction::CloneFrom) {
            REQUIRE(d.donor_kind == DonorKind::Elite);
            REQUIRE(d.donor >= 0);
            REQUIRE(static_cast<std::size_t>(d.donor) < archive.size());
            ++elite_clones;
        }
    REQUIRE(elite_clones == 2);
}

TEST_CASE("backtracked configs collide with no live member") {
    auto members = bt_population(10);
    EliteArchive archive(10);
    Rng warm(4);
    pbt_bt_step(1, members, archive, options(10), wide_space(), warm, 30);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const auto result = pbt_bt_step(30, members, archive, options(10), wide_space(), rng, 30);
        std::vector<Configuration> final_configs;
        for (const auto& d : result.directives) {
            if (d.action == DirectiveAction::CloneFrom)
                final_configs.push_back(*d.new_config);
            else
                final_configs.push_back(members[d.member].config);
        }
        for (std::size_t i = 0; i < final_configs.size(); ++i)
            for (std::size_t j = i + 1; j < final_configs.size(); ++j)
                REQUIRE_FALSE(final_configs[i] == final_configs[j]);
    }
}

TEST_CASE("empty archive skips backtracking") {
    auto members = bt_population(4);
    // strip checkpoints so nothing can be archived
    for (auto& m : members) m.checkpoint = nullptr;
    EliteArchive archive(10);
    Rng rng(6);
    const auto result = pbt_bt_step(30, members, archive, options(4), wide_space(), rng, 30);
    REQUIRE(archive.empty());
    for (const auto& d : result.directives)
        if (d.action == DirectiveAction::CloneFrom) REQUIRE(d.donor_kind == DonorKind::Member);
}
