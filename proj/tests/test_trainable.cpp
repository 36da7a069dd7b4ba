#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>

#include "tunembrl/trainable.hpp"

using namespace tunembrl;

TEST_CASE("score window means the most recent returns") {
    ScoreWindow w;
    w.record(10);
    w.record(20);
    w.record(30);
    REQUIRE(w.score() == Catch::Approx(20.0));

    ScoreWindow single;
    single.record(5);
    REQUIRE(single.score() == Catch::Approx(5.0));

    ScoreWindow four;
    for (double r : {100.0, 0.0, 50.0, 10.0}) four.record(r);
    REQUIRE(four.score() == Catch::Approx(20.0));  // mean of last three
}

TEST_CASE("empty score window is an error") {
    ScoreWindow w;
    REQUIRE_THROWS_AS(w.score(), Error);
}

TEST_CASE("score ignores returns older than the window") {
    ScoreWindow a, b;
    for (double r : {-1000.0, 42.0, 1.0, 2.0, 3.0}) a.record(r);
    for (double r : {999.0, -7.0, 1.0, 2.0, 3.0}) b.record(r);
    REQUIRE(a.score() == b.score());
}

TEST_CASE("synthetic trainable sits at its surface maximum when stationary") {
    SyntheticTrainable t(1 << 30);  // effectively frozen drift
    Configuration at_optimum;
    at_optimum.values["rate"] = t.drift_target(0);
    const double r = t.step(at_optimum, 0);
    REQUIRE(r == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("step increments the trial counter") {
    SyntheticTrainable t;
    Configuration c;
    c.values["rate"] = 0.05;
    REQUIRE(t.trial_index() == 0);
    t.step(c, 1);
    REQUIRE(t.trial_index() == 1);
    t.step(c, 2);
    REQUIRE(t.trial_index() == 2);
}

TEST_CASE("non-finite config values are rejected before execution") {
    SyntheticTrainable t;
    Configuration c;
    c.values["rate"] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(t.step(c, 0), Error);
    REQUIRE(t.trial_index() == 0);
}

TEST_CASE("equal seeds and configs produce equal returns") {
    SyntheticTrainable a(50), b(50);
    Configuration c;
    c.values["rate"] = 0.2;
    for (int t = 0; t < 10; ++t) REQUIRE(a.step(c, 100 + t) == b.step(c, 100 + t));
}

TEST_CASE("checkpoint round trip is byte identical") {
    SyntheticTrainable t;
    Configuration c;
    c.values["rate"] = 0.3;
    for (int i = 0; i < 4; ++i) t.step(c, i);
    const auto ckpt = t.checkpoint(true);
    const auto bytes = encode_checkpoint(ckpt);
    const auto decoded = decode_checkpoint(bytes);
    REQUIRE(decoded == ckpt);
    REQUIRE(encode_checkpoint(decoded) == bytes);
}

TEST_CASE("restore reproduces state and clears failure") {
    SyntheticTrainable donor, receiver;
    Configuration c;
    c.values["rate"] = 0.3;
    for (int i = 0; i < 5; ++i) donor.step(c, i);
    receiver.mark_failed();
    receiver.restore(donor.checkpoint(true));
    REQUIRE_FALSE(receiver.failed());
    REQUIRE(receiver.trial_index() == donor.trial_index());
    REQUIRE(receiver.theta() == donor.theta());
    // both continue identically
    REQUIRE(receiver.step(c, 99) == donor.step(c, 99));
}

TEST_CASE("failed members rank below every finite score") {
    SyntheticTrainable t;
    Configuration c;
    c.values["rate"] = 0.3;
    t.step(c, 0);
    t.mark_failed();
    REQUIRE(t.score() == -std::numeric_limits<double>::infinity());
}

TEST_CASE("history section honors the copy flag") {
    TrainableCheckpoint ckpt;
    ckpt.copy_history = true;
    ckpt.history = TransitionDataset(2, 1);
    const double s[2] = {1.0, 2.0}, a[1] = {0.5}, n[2] = {1.1, 2.1};
    for (int i = 0; i < 500; ++i) ckpt.history.append({s, 2}, {a, 1}, {n, 2}, -1.0);
    ckpt.hyperparameters.values["x"] = 0.25;
    ckpt.trial_index = 7;
    const auto with_history = encode_checkpoint(ckpt);

    TrainableCheckpoint no_copy = ckpt;
    no_copy.copy_history = false;
    no_copy.history = {};
    const auto without_history = encode_checkpoint(no_copy);

    REQUIRE(without_history.size() < with_history.size());
    const auto decoded = decode_checkpoint(with_history);
    REQUIRE(decoded.history.size() == 500);
    REQUIRE(decode_checkpoint(without_history).history.size() == 0);
}

TEST_CASE("corrupt bytes and bad versions are rejected") {
    SyntheticTrainable t;
    auto bytes = encode_checkpoint(t.checkpoint(true));

    auto garbled = bytes;
    garbled[0] = 'X';
    REQUIRE_THROWS_MATCHES(decode_checkpoint(garbled), Error, Catch::Matchers::MessageMatches(
        Catch::Matchers::ContainsSubstring("magic")));

    auto future = bytes;
    future[8] = 99;  // format version low byte
    try {
        decode_checkpoint(future);
        FAIL("expected a version mismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::VersionMismatch);
    }

    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    REQUIRE_THROWS_AS(decode_checkpoint(truncated), Error);
}

TEST_CASE("checkpoint files round trip through disk") {
    SyntheticTrainable t;
    Configuration c;
    c.values["rate"] = 0.1;
    t.step(c, 3);
    const auto ckpt = t.checkpoint(true);
    const auto path = std::filesystem::temp_directory_path() / "tunembrl_ckpt_test.bin";
    save_checkpoint(ckpt, path);
    REQUIRE(load_checkpoint(path) == ckpt);
    std::filesystem::remove(path);
}

TEST_CASE("synthetic drift target is a sawtooth in log space") {
    SyntheticTrainable t(10, 1e-3, 1.0);
    REQUIRE(t.drift_target(0) == Catch::Approx(1e-3));
    REQUIRE(t.drift_target(5) == Catch::Approx(std::sqrt(1e-3)).epsilon(1e-9));
    REQUIRE(t.drift_target(10) == Catch::Approx(1e-3));  // wraps
    REQUIRE(t.drift_target(9) > t.drift_target(8));
}
