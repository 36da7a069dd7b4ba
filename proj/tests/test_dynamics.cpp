#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "tunembrl/dynamics.hpp"

using namespace tunembrl;

namespace {

/// Linear scalar system s' = 0.9 s + 0.1 a plus small Gaussian noise.
TransitionDataset linear_system_data(int n, std::uint64_t seed, double noise = 0.005,
                                     double lo = -1.0, double hi = 1.0) {
    TransitionDataset data(1, 1);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const double s = rng.uniform(lo, hi);
        const double a = rng.uniform(-1.0, 1.0);
        const double sn = 0.9 * s + 0.1 * a + noise * rng.normal();
        data.append({&s, 1}, {&a, 1}, {&sn, 1}, 0.0);
    }
    return data;
}

double heldout_mse(const GaussianEnsemble& model, const TransitionDataset& data) {
    double mse = 0.0;
    Eigen::VectorXd mean_delta, variance;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Eigen::VectorXd s(1), a(1);
        s[0] = data.states[i];
        a[0] = data.actions[i];
        double pred = 0.0;
        for (int b = 0; b < model.member_count(); ++b) {
            model.predict(s, a, b, mean_delta, variance);
            pred += s[0] + mean_delta[0];
        }
        pred /= model.member_count();
        const double err = pred - data.next_states[i];
        mse += err * err;
    }
    return mse / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("gaussian_nll closed-form values") {
    Eigen::VectorXd mean(1), lv(1), target(1);
    mean << 0.0;
    lv << 0.0;
    target << 0.0;
    REQUIRE(gaussian_nll(mean, lv, target) == Catch::Approx(0.9189385332).epsilon(1e-9));

    target << 1.0;
    REQUIRE(gaussian_nll(mean, lv, target) == Catch::Approx(1.4189385332).epsilon(1e-9));

    // three dimensions summed by hand:
    //   d0: mean 0, lv 0,    target 0 -> 0.918938533
    //   d1: mean 0, lv 0,    target 1 -> 1.418938533
    //   d2: mean 1, lv ln 4, target 3 -> 0.918938533 + 0.5 ln 4 + 0.5*4/4 = 2.112085895
    Eigen::VectorXd m3(3), l3(3), t3(3);
    m3 << 0.0, 0.0, 1.0;
    l3 << 0.0, 0.0, std::log(4.0);
    t3 << 0.0, 1.0, 3.0;
    REQUIRE(gaussian_nll(m3, l3, t3) ==
            Catch::Approx(0.9189385332 + 1.4189385332 + 2.1120858954).epsilon(1e-9));
}

TEST_CASE("gaussian_nll rejects mismatched dimensions") {
    Eigen::VectorXd a(2), b(3);
    a.setZero();
    b.setZero();
    REQUIRE_THROWS_AS(gaussian_nll(a, b, a), Error);
}

TEST_CASE("analytic gradients match central finite differences") {
    Mlp<double> net(3, 2, 8, /*seed=*/7);
    Rng rng(11);
    Eigen::MatrixXd X(16, 3), T(16, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < T.size(); ++i) T.data()[i] = rng.normal();

    net.nll_and_grad(X, T);
    const Eigen::VectorXd analytic = net.grad();
    constexpr double h = 1e-5;
    double max_rel = 0.0;
    for (Eigen::Index p = 0; p < net.params().size(); ++p) {
        const double saved = net.params()[p];
        net.params()[p] = saved + h;
        const double up = net.nll(X, T);
        net.params()[p] = saved - h;
        const double down = net.nll(X, T);
        net.params()[p] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic[p]), 1e-8});
        max_rel = std::max(max_rel, std::fabs(numeric - analytic[p]) / denom);
    }
    REQUIRE(max_rel < 1e-4);
}

TEST_CASE("ensemble learns a linear system to small held-out error") {
    const auto train_data = linear_system_data(2000, 21);
    const auto heldout = linear_system_data(200, 22);
    GaussianEnsemble model(1, 1, 5, /*seed=*/3);
    ModelTrainHp hp{1e-3, 1e-7, 10};
    model.train(train_data, hp, 5);
    REQUIRE(heldout_mse(model, heldout) < 1e-3);
}

TEST_CASE("zero epochs touch nothing and report nothing") {
    const auto data = linear_system_data(100, 31);
    GaussianEnsemble model(1, 1, 3, 4);
    const Eigen::VectorXf before = model.member(0).params();
    const auto report = model.train(data, {1e-3, 1e-4, 0}, 9);
    REQUIRE(report.empty());
    REQUIRE(model.member(0).params() == before);
}

TEST_CASE("constant targets are matched within 1e-2") {
    TransitionDataset data(1, 1);
    Rng rng(41);
    for (int i = 0; i < 500; ++i) {
        const double s = rng.uniform(-1.0, 1.0);
        const double a = rng.uniform(-1.0, 1.0);
        const double sn = 0.7;
        data.append({&s, 1}, {&a, 1}, {&sn, 1}, 0.0);
    }
    GaussianEnsemble model(1, 1, 2, 5);
    model.train(data, {3e-3, 1e-7, 50}, 6);
    Eigen::VectorXd mean_delta, variance, s(1), a(1);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        s[0] = rng.uniform(-1.0, 1.0);
        a[0] = rng.uniform(-1.0, 1.0);
        for (int b = 0; b < model.member_count(); ++b) {
            model.predict(s, a, b, mean_delta, variance);
            worst = std::max(worst, std::fabs(s[0] + mean_delta[0] - 0.7));
        }
    }
    REQUIRE(worst < 1e-2);
}

TEST_CASE("predict is deterministic and positive-variance") {
    const auto data = linear_system_data(300, 51);
    GaussianEnsemble model(1, 1, 5, 6);
    model.train(data, {1e-3, 1e-5, 3}, 7);
    Rng rng(8);
    Eigen::VectorXd m1, v1, m2, v2, s(1), a(1);
    for (int i = 0; i < 1000; ++i) {
        s[0] = rng.uniform(-3.0, 3.0);
        a[0] = rng.uniform(-3.0, 3.0);
        const int b = static_cast<int>(rng.uniform_int(0, 4));
        model.predict(s, a, b, m1, v1);
        model.predict(s, a, b, m2, v2);
        REQUIRE(m1[0] == m2[0]);
        REQUIRE(v1[0] == v2[0]);
        REQUIRE(v1[0] > 0.0);
    }
}

TEST_CASE("predict rejects bad inputs") {
    GaussianEnsemble model(1, 1, 2, 1);
    Eigen::VectorXd m, v, s(1), a(1);
    s[0] = 0.0;
    a[0] = 0.0;
    REQUIRE_THROWS_AS(model.predict(s, a, 5, m, v), Error);
    s[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(model.predict(s, a, 0, m, v), Error);
}

TEST_CASE("fresh network forward pass matches an independent oracle") {
    GaussianEnsemble model(2, 1, 1, /*seed=*/13);
    const auto& net = model.member(0);
    const Eigen::VectorXf& p = net.params();
    const int in = 3, hidden = 64, out = 6;

    // reference forward pass over the flat parameter vector, declaration
    // order W1,b1,W2,b2,W3,b3, matrices column-major
    auto ref_forward = [&](const Eigen::VectorXd& x) {
        const int o_w1 = 0, o_b1 = in * hidden, o_w2 = o_b1 + hidden,
                  o_b2 = o_w2 + hidden * hidden, o_w3 = o_b2 + hidden,
                  o_b3 = o_w3 + hidden * out;
        auto silu = [](double z) { return z / (1.0 + std::exp(-z)); };
        Eigen::VectorXd h1(hidden), h2(hidden), y(out);
        for (int j = 0; j < hidden; ++j) {
            double z = p[o_b1 + j];
            for (int i = 0; i < in; ++i) z += x[i] * p[o_w1 + j * in + i];
            h1[j] = silu(z);
        }
        for (int j = 0; j < hidden; ++j) {
            double z = p[o_b2 + j];
            for (int i = 0; i < hidden; ++i) z += h1[i] * p[o_w2 + j * hidden + i];
            h2[j] = silu(z);
        }
        for (int j = 0; j < out; ++j) {
            double z = p[o_b3 + j];
            for (int i = 0; i < hidden; ++i) z += h2[i] * p[o_w3 + j * hidden + i];
            y[j] = z;
        }
        return y;
    };
    auto softplus = [](double v) {
        return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    };

    Rng rng(99);
    for (int round = 0; round < 20; ++round) {
        Eigen::VectorXd xd(3);
        for (int d = 0; d < 3; ++d) xd[d] = rng.uniform(-2.0, 2.0);
        const Eigen::MatrixXf x = xd.cast<float>().transpose();
        Eigen::MatrixXf mean, log_var;
        net.forward(x, mean, log_var);
        const Eigen::VectorXd y = ref_forward(xd);
        for (int d = 0; d < 2; ++d)
            REQUIRE(mean(0, d) == Catch::Approx(y[d]).margin(1e-4));
        for (int d = 0; d < 2; ++d) {
            const double raw = y[2 + d];
            const double lv1 = kLogVarMax - softplus(kLogVarMax - raw);
            const double lv = kLogVarMin + softplus(lv1 - kLogVarMin);
            REQUIRE(log_var(0, d) == Catch::Approx(lv).margin(1e-4));
            REQUIRE(log_var(0, d) >= kLogVarMin);
            REQUIRE(log_var(0, d) <= kLogVarMax);
        }
    }

    // at the normalization center a fresh net's prediction stays at the
    // initialization scale
    Eigen::VectorXd m, v, s(2), a(1);
    s.setZero();
    a.setZero();
    model.predict(s, a, 0, m, v);
    REQUIRE(m.norm() < 3.0);
}

TEST_CASE("bootstrap resamples differ across members") {
    // replicate the per-member bootstrap seeding and compare the index sets
    const int n = 100;
    std::vector<std::vector<std::int64_t>> sets;
    for (int b = 0; b < 5; ++b) {
        Rng rng(splitmix64(std::uint64_t(12345) ^ (0xb007u + static_cast<std::uint64_t>(b))));
        std::vector<std::int64_t> idx(n);
        for (auto& i : idx) i = rng.uniform_int(0, n - 1);
        sets.push_back(std::move(idx));
    }
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) REQUIRE(sets[i] != sets[j]);
}

TEST_CASE("training NLL is non-increasing in at least 90 percent of epochs") {
    const auto data = linear_system_data(1500, 61);
    GaussianEnsemble model(1, 1, 5, 8);
    const auto report = model.train(data, {1e-3, 1e-7, 15}, 9);
    int good = 0, total = 0;
    for (const auto& per_epoch : report.epoch_nll) {
        for (std::size_t e = 1; e < per_epoch.size(); ++e) {
            ++total;
            if (per_epoch[e] <= per_epoch[e - 1] + 1e-9) ++good;
        }
    }
    REQUIRE(total == 5 * 14);
    REQUIRE(static_cast<double>(good) / total >= 0.9);
}

TEST_CASE("strong weight decay shrinks the parameter norm") {
    const auto data = linear_system_data(500, 71);
    GaussianEnsemble weak(1, 1, 2, 10), strong(1, 1, 2, 10);
    weak.train(data, {1e-3, 1e-7, 10}, 11);
    strong.train(data, {1e-3, 0.1, 10}, 11);
    REQUIRE(strong.member(0).params().norm() < weak.member(0).params().norm());
}

TEST_CASE("diverging training reports a non-finite loss") {
    const auto data = linear_system_data(200, 81);
    GaussianEnsemble model(1, 1, 2, 12);
    try {
        model.train(data, {1e18, 0.0, 50}, 13);
        SUCCEED("extreme learning rate did not diverge");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::NonFiniteLoss);
    }
}

TEST_CASE("ensemble serialization round trips bit-exactly") {
    const auto data = linear_system_data(300, 91);
    GaussianEnsemble model(1, 1, 3, 14);
    model.train(data, {1e-3, 1e-5, 2}, 15);
    ByteWriter w;
    model.serialize(w);
    const auto bytes = w.data();
    ByteReader r(bytes.data(), bytes.size());
    const GaussianEnsemble copy = GaussianEnsemble::deserialize(r);
    ByteWriter w2;
    copy.serialize(w2);
    REQUIRE(w2.data() == bytes);

    Eigen::VectorXd m1, v1, m2, v2, s(1), a(1);
    s[0] = 0.4;
    a[0] = -0.2;
    model.predict(s, a, 1, m1, v1);
    copy.predict(s, a, 1, m2, v2);
    REQUIRE(m1[0] == m2[0]);
    REQUIRE(v1[0] == v2[0]);
}
