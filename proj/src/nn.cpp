#include "vslot/nn.hpp"

#include <cmath>

namespace vslot::nn {

void zero_grads(const ParamList& params) {
    for (const auto& [name, p] : params) p->zero_grad();
}

double grad_norm(const ParamList& params) {
    double sq = 0.0;
    for (const auto& [name, p] : params) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm) {
        const double scale = max_norm / (norm + 1e-6);
        for (const auto& [name, p] : params) p->grad *= scale;
    }
    return norm;
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void snap_to_float(const ParamList& params) {
    for (const auto& [name, p] : params)
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
            p->value.data()[i] = static_cast<double>(static_cast<float>(p->value.data()[i]));
}

Linear::Linear(int in, int out, bool with_bias) : has_bias(with_bias) {
    weight.resize(out, in);
    bias.resize(1, with_bias ? out : 0);
}

void Linear::init(std::mt19937_64& rng) {
    // Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, in_dim())));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < bias.value.size(); ++i) bias.value.data()[i] = u(rng);
}

Matrix Linear::forward(const Matrix& x) const {
    Matrix y = x * weight.value.transpose();
    if (has_bias) y.rowwise() += bias.value.row(0);
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
    weight.grad.noalias() += dy.transpose() * x;
    if (has_bias) bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value;
}

void Linear::collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".weight", &weight);
    if (has_bias) out.emplace_back(prefix + ".bias", &bias);
}

LayerNorm::LayerNorm(int dim) {
    gamma.resize(1, dim);
    gamma.value.setOnes();
    beta.resize(1, dim);
}

Matrix LayerNorm::forward(const Matrix& x, Cache& cache) const {
    const auto n = x.rows();
    const auto d = static_cast<double>(x.cols());
    cache.xhat.resize(n, x.cols());
    cache.inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).sum() / d;
        const double var = (x.row(i).array() - mean).square().sum() / d;
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std(i) = inv;
        cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
    }
    Matrix y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const double d = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_g = dxhat.row(i).sum() / d;
        const double mean_gx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
        dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - mean_g - cache.xhat.row(i).array() * mean_gx);
    }
    return dx;
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
}

GRUCell::GRUCell(int in, int hidden_dim) : input(in, 3 * hidden_dim), hidden(hidden_dim, 3 * hidden_dim) {}

void GRUCell::init(std::mt19937_64& rng) {
    input.init(rng);
    hidden.init(rng);
}

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Matrix GRUCell::forward(const Matrix& x, const Matrix& h, Cache& cache) const {
    const auto hd = hidden_dim();
    const Matrix gi = input.forward(x);
    const Matrix gh = hidden.forward(h);
    cache.x = x;
    cache.h = h;
    cache.r = (gi.leftCols(hd) + gh.leftCols(hd)).unaryExpr(&sigmoid);
    cache.z = (gi.middleCols(hd, hd) + gh.middleCols(hd, hd)).unaryExpr(&sigmoid);
    cache.hn = gh.rightCols(hd);
    cache.n = (gi.rightCols(hd).array() + cache.r.array() * cache.hn.array()).tanh().matrix();
    return ((1.0 - cache.z.array()) * cache.n.array() + cache.z.array() * h.array()).matrix();
}

std::pair<Matrix, Matrix> GRUCell::backward(const Cache& c, const Matrix& dout) {
    const auto hd = hidden_dim();
    const auto rows = dout.rows();
    const Matrix dn = dout.array() * (1.0 - c.z.array());
    const Matrix dz = dout.array() * (c.h.array() - c.n.array());
    Matrix dh = dout.array() * c.z.array();

    const Matrix dn_pre = dn.array() * (1.0 - c.n.array().square());
    const Matrix dr = dn_pre.array() * c.hn.array();
    const Matrix dr_pre = dr.array() * c.r.array() * (1.0 - c.r.array());
    const Matrix dz_pre = dz.array() * c.z.array() * (1.0 - c.z.array());

    Matrix dgi(rows, 3 * hd), dgh(rows, 3 * hd);
    dgi << dr_pre, dz_pre, dn_pre;
    dgh << dr_pre, dz_pre, (dn_pre.array() * c.r.array()).matrix();

    Matrix dx = input.backward(c.x, dgi);
    dh += hidden.backward(c.h, dgh);
    return {std::move(dx), std::move(dh)};
}

void GRUCell::collect(const std::string& prefix, ParamList& out) {
    input.collect(prefix + ".input", out);
    hidden.collect(prefix + ".hidden", out);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
    return (pre.array() > 0.0).select(dy, 0.0);
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    return y;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = y.row(i).dot(dy.row(i));
        dx.row(i) = y.row(i).array() * (dy.row(i).array() - dot);
    }
    return dx;
}

}  // namespace vslot::nn
