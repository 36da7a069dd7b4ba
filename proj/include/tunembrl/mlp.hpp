#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tunembrl/errors.hpp"
#include "tunembrl/rng.hpp"
#include "tunembrl/serialize.hpp"

namespace tunembrl {

// Log-variance soft clamp range. A double-softplus saturating map keeps the
// predicted variance inside [exp(-10), exp(1)] without killing gradients.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 1.0;

namespace mlp_detail {

template <class T>
T softplus(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace mlp_detail

/// Two-hidden-layer perceptron with a Gaussian head: the first half of the
/// output row is the predicted mean, the second half a raw log-variance that
/// is soft-clamped to [kLogVarMin, kLogVarMax]. Parameters live in one flat
/// vector (declaration order W1,b1,W2,b2,W3,b3) together with Adam moments,
/// so serialization and finite-difference checks can address every entry.
template <class T>
class Mlp {
public:
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    using Array = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;

    Mlp() = default;

    Mlp(int in_dim, int gauss_dim, int hidden, std::uint64_t seed)
        : in_dim_(in_dim), gauss_dim_(gauss_dim), hidden_(hidden) {
        const int out = 2 * gauss_dim;
        sizes_ = {in_dim * hidden, hidden, hidden * hidden, hidden, hidden * out, out};
        offsets_.resize(sizes_.size() + 1, 0);
        for (std::size_t i = 0; i < sizes_.size(); ++i) offsets_[i + 1] = offsets_[i] + sizes_[i];
        params_ = Vector::Zero(offsets_.back());
        adam_m_ = Vector::Zero(offsets_.back());
        adam_v_ = Vector::Zero(offsets_.back());
        Rng rng(seed);
        init_weights(rng);
    }

    int in_dim() const { return in_dim_; }
    int gauss_dim() const { return gauss_dim_; }
    int hidden_dim() const { return hidden_; }

    Vector& params() { return params_; }
    const Vector& params() const { return params_; }
    const Vector& grad() const { return grad_; }

    /// Forward pass: rows of X are inputs; returns predicted means and
    /// clamped log-variances, each N x gauss_dim.
    void forward(const Matrix& X, Matrix& mean, Matrix& log_var) const {
        Matrix z1, h1, z2, h2, y;
        forward_impl(X, z1, h1, z2, h2, y);
        split_head(y, mean, log_var);
    }

    /// Batch NLL (summed over dimensions, averaged over rows).
    double nll(const Matrix& X, const Matrix& targets) const {
        Matrix mean, log_var;
        forward(X, mean, log_var);
        return nll_value(mean, log_var, targets);
    }

    /// Batch NLL plus analytic gradient (stored, retrievable via grad()).
    double nll_and_grad(const Matrix& X, const Matrix& targets) {
        const auto n = X.rows();
        Matrix z1, h1, z2, h2, y;
        forward_impl(X, z1, h1, z2, h2, y);
        Matrix mean, log_var;
        split_head(y, mean, log_var);
        const double loss = nll_value(mean, log_var, targets);

        const T inv_n = T(1) / static_cast<T>(n);
        const Array inv_var = (-log_var.array()).exp();
        const Array resid = mean.array() - targets.array();
        // d loss / d mean and d loss / d clamped log-variance
        Array d_mean = resid * inv_var * inv_n;
        Array d_lv = T(0.5) * (T(1) - resid.square() * inv_var) * inv_n;
        // chain through the double softplus clamp
        const Array raw = y.rightCols(gauss_dim_).array();
        const Array lv1 = raw.unaryExpr([](T v) {
            return T(kLogVarMax) - mlp_detail::softplus(T(kLogVarMax) - v);
        });
        const Array d_raw = d_lv *
            lv1.unaryExpr([](T v) { return mlp_detail::sigmoid(v - T(kLogVarMin)); }) *
            raw.unaryExpr([](T v) { return mlp_detail::sigmoid(T(kLogVarMax) - v); });

        Matrix dy(n, 2 * gauss_dim_);
        dy.leftCols(gauss_dim_) = d_mean.matrix();
        dy.rightCols(gauss_dim_) = d_raw.matrix();

        grad_ = Vector::Zero(params_.size());
        auto gW3 = map(grad_, 4, hidden_, 2 * gauss_dim_);
        auto gb3 = vmap(grad_, 5);
        auto gW2 = map(grad_, 2, hidden_, hidden_);
        auto gb2 = vmap(grad_, 3);
        auto gW1 = map(grad_, 0, in_dim_, hidden_);
        auto gb1 = vmap(grad_, 1);

        gW3 = h2.transpose() * dy;
        gb3 = dy.colwise().sum();
        Matrix dh2 = dy * cmap(4, hidden_, 2 * gauss_dim_).transpose();
        Matrix dz2 = (dh2.array() * silu_grad(z2)).matrix();
        gW2 = h1.transpose() * dz2;
        gb2 = dz2.colwise().sum();
        Matrix dh1 = dz2 * cmap(2, hidden_, hidden_).transpose();
        Matrix dz1 = (dh1.array() * silu_grad(z1)).matrix();
        gW1 = X.transpose() * dz1;
        gb1 = dz1.colwise().sum();
        return loss;
    }

    /// AdamW update from the stored gradient: decoupled L2 decay on weight
    /// matrices, none on biases.
    void adam_step(double learning_rate, double weight_decay, double beta1 = 0.9,
                   double beta2 = 0.999, double eps = 1e-8) {
        ++adam_t_;
        const T lr = static_cast<T>(learning_rate);
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        adam_m_ = b1 * adam_m_ + (T(1) - b1) * grad_;
        adam_v_.array() = b2 * adam_v_.array() + (T(1) - b2) * grad_.array().square();
        const T corr1 = T(1) - static_cast<T>(std::pow(beta1, adam_t_));
        const T corr2 = T(1) - static_cast<T>(std::pow(beta2, adam_t_));
        params_.array() -= lr * (adam_m_.array() / corr1) /
                           ((adam_v_.array() / corr2).sqrt() + static_cast<T>(eps));
        if (weight_decay != 0.0) {
            for (int seg : {0, 2, 4}) {
                auto w = params_.segment(offsets_[seg], sizes_[seg]);
                w -= (lr * static_cast<T>(weight_decay)) * w;
            }
        }
    }

    bool finite() const { return params_.allFinite(); }

    void serialize(ByteWriter& w) const {
        w.u32(1);  // model payload version
        w.u32(static_cast<std::uint32_t>(in_dim_));
        w.u32(static_cast<std::uint32_t>(gauss_dim_));
        w.u32(static_cast<std::uint32_t>(hidden_));
        w.u64(static_cast<std::uint64_t>(adam_t_));
        auto put = [&w](const Vector& v) {
            w.u64(static_cast<std::uint64_t>(v.size()));
            w.bytes(v.data(), v.size() * sizeof(T));
        };
        put(params_);
        put(adam_m_);
        put(adam_v_);
    }

    static Mlp deserialize(ByteReader& r) {
        const std::uint32_t version = r.u32();
        if (version != 1) throw Error(ErrorCode::VersionMismatch, "model payload version");
        const int in = static_cast<int>(r.u32());
        const int gauss = static_cast<int>(r.u32());
        const int hidden = static_cast<int>(r.u32());
        Mlp net(in, gauss, hidden, 0);
        net.adam_t_ = static_cast<std::int64_t>(r.u64());
        auto get = [&r](Vector& v) {
            const std::uint64_t n = r.u64();
            v.resize(static_cast<Eigen::Index>(n));
            std::memcpy(v.data(), r.raw(n * sizeof(T)), n * sizeof(T));
        };
        get(net.params_);
        get(net.adam_m_);
        get(net.adam_v_);
        if (net.params_.size() != net.offsets_.back())
            throw Error(ErrorCode::CorruptCheckpoint, "model parameter count mismatch");
        return net;
    }

private:
    void init_weights(Rng& rng) {
        struct Seg { int idx, fan_in; };
        for (const Seg s : {Seg{0, in_dim_}, Seg{2, hidden_}, Seg{4, hidden_}}) {
            auto w = params_.segment(offsets_[s.idx], sizes_[s.idx]);
            const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.fan_in)));
            for (Eigen::Index i = 0; i < w.size(); ++i)
                w[i] = static_cast<T>(rng.normal()) * scale;
        }
    }

    Eigen::Map<Matrix> map(Vector& v, int seg, int rows, int cols) {
        return {v.data() + offsets_[seg], rows, cols};
    }
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> vmap(Vector& v, int seg) {
        return {v.data() + offsets_[seg], 1, static_cast<Eigen::Index>(sizes_[seg])};
    }
    Eigen::Map<const Matrix> cmap(int seg, int rows, int cols) const {
        return {params_.data() + offsets_[seg], rows, cols};
    }
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> cvmap(int seg) const {
        return {params_.data() + offsets_[seg], 1, static_cast<Eigen::Index>(sizes_[seg])};
    }

    static Array silu(const Matrix& z) {
        const Array sig = (T(1) + (-z.array()).exp()).inverse();
        return z.array() * sig;
    }
    static Array silu_grad(const Matrix& z) {
        const Array sig = (T(1) + (-z.array()).exp()).inverse();
        return sig * (T(1) + z.array() * (T(1) - sig));
    }

    void forward_impl(const Matrix& X, Matrix& z1, Matrix& h1, Matrix& z2, Matrix& h2,
                      Matrix& y) const {
        if (X.cols() != in_dim_) throw Error(ErrorCode::DimensionMismatch, "bad input width");
        z1.noalias() = X * cmap(0, in_dim_, hidden_);
        z1.rowwise() += cvmap(1);
        h1 = silu(z1);
        z2.noalias() = h1 * cmap(2, hidden_, hidden_);
        z2.rowwise() += cvmap(3);
        h2 = silu(z2);
        y.noalias() = h2 * cmap(4, hidden_, 2 * gauss_dim_);
        y.rowwise() += cvmap(5);
    }

    void split_head(const Matrix& y, Matrix& mean, Matrix& log_var) const {
        mean = y.leftCols(gauss_dim_);
        log_var = y.rightCols(gauss_dim_).unaryExpr([](T raw) {
            const T upper = T(kLogVarMax) - mlp_detail::softplus(T(kLogVarMax) - raw);
            return T(kLogVarMin) + mlp_detail::softplus(upper - T(kLogVarMin));
        });
    }

    double nll_value(const Matrix& mean, const Matrix& log_var, const Matrix& targets) const {
        if (targets.rows() != mean.rows() || targets.cols() != mean.cols())
            throw Error(ErrorCode::DimensionMismatch, "target shape mismatch");
        constexpr double half_log_2pi = 0.9189385332046727;
        const Array resid = targets.array() - mean.array();
        const double per_dim =
            (T(0.5) * log_var.array() + T(0.5) * resid.square() * (-log_var.array()).exp())
                .template cast<double>()
                .sum();
        return (per_dim + half_log_2pi * static_cast<double>(mean.size())) /
               static_cast<double>(mean.rows());
    }

    int in_dim_ = 0;
    int gauss_dim_ = 0;
    int hidden_ = 0;
    std::vector<int> sizes_;
    std::vector<int> offsets_;
    Vector params_;
    Vector grad_;
    Vector adam_m_;
    Vector adam_v_;
    std::int64_t adam_t_ = 0;
};

}  // namespace tunembrl
