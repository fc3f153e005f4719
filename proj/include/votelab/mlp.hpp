// A small exactly-differentiable MLP with softmax head.
//
// Parameters live in one flat 64-bit vector (per layer: the out x in weight
// matrix column-major, then the bias). Gradients are exact backpropagation;
// Hessian-vector products use the forward-over-reverse (Pearlmutter) rule, so
// no finite differencing enters the implementation path. The default tanh
// activation keeps the loss twice continuously differentiable, which the
// curvature probes rely on; a piecewise-linear option exists for training
// only.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "votelab/error.hpp"
#include "votelab/rng.hpp"
#include "votelab/target.hpp"

namespace votelab {

enum class Activation { tanh, relu };

struct ForwardResult {
    Eigen::VectorXd logits;
    Eigen::VectorXd q;         // softmax(logits)
    Eigen::VectorXd features;  // penultimate activations
};

// Stable column-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd q(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double mx = z.col(j).maxCoeff();
        q.col(j) = (z.col(j).array() - mx).exp();
        q.col(j) /= q.col(j).sum();
    }
    return q;
}

class Mlp {
public:
    // widths = {input dim, hidden..., class count}
    explicit Mlp(std::vector<int> widths, Activation act = Activation::tanh)
        : widths_(std::move(widths)), act_(act) {
        if (widths_.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
        std::size_t count = 0;
        offsets_.resize(num_layers());
        for (int l = 0; l < num_layers(); ++l) {
            offsets_[static_cast<std::size_t>(l)] = count;
            count += static_cast<std::size_t>((in_width(l) + 1) * out_width(l));
        }
        theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count));
    }

    int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
    int input_dim() const { return widths_.front(); }
    int num_classes() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return act_; }
    std::size_t param_count() const { return static_cast<std::size_t>(theta.size()); }

    int in_width(int layer) const { return widths_[static_cast<std::size_t>(layer)]; }
    int out_width(int layer) const { return widths_[static_cast<std::size_t>(layer) + 1]; }

    Eigen::Map<const Eigen::MatrixXd> weight(int layer) const {
        return {theta.data() + offsets_[static_cast<std::size_t>(layer)],
                out_width(layer), in_width(layer)};
    }
    Eigen::Map<Eigen::MatrixXd> weight(int layer) {
        return {theta.data() + offsets_[static_cast<std::size_t>(layer)],
                out_width(layer), in_width(layer)};
    }
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const {
        return {theta.data() + offsets_[static_cast<std::size_t>(layer)] +
                    static_cast<std::size_t>(out_width(layer)) * static_cast<std::size_t>(in_width(layer)),
                out_width(layer)};
    }
    Eigen::Map<Eigen::VectorXd> bias(int layer) {
        return {theta.data() + offsets_[static_cast<std::size_t>(layer)] +
                    static_cast<std::size_t>(out_width(layer)) * static_cast<std::size_t>(in_width(layer)),
                out_width(layer)};
    }

    // Same W/b views over an arbitrary flat vector (gradients, directions).
    Eigen::Map<const Eigen::MatrixXd> weight_view(const Eigen::VectorXd& v, int layer) const {
        return {v.data() + offsets_[static_cast<std::size_t>(layer)], out_width(layer), in_width(layer)};
    }
    Eigen::Map<Eigen::MatrixXd> weight_view(Eigen::VectorXd& v, int layer) const {
        return {v.data() + offsets_[static_cast<std::size_t>(layer)], out_width(layer), in_width(layer)};
    }
    Eigen::Map<const Eigen::VectorXd> bias_view(const Eigen::VectorXd& v, int layer) const {
        return {v.data() + offsets_[static_cast<std::size_t>(layer)] +
                    static_cast<std::size_t>(out_width(layer)) * static_cast<std::size_t>(in_width(layer)),
                out_width(layer)};
    }
    Eigen::Map<Eigen::VectorXd> bias_view(Eigen::VectorXd& v, int layer) const {
        return {v.data() + offsets_[static_cast<std::size_t>(layer)] +
                    static_cast<std::size_t>(out_width(layer)) * static_cast<std::size_t>(in_width(layer)),
                out_width(layer)};
    }

    // Gaussian fan-in initialization, biases zero; draws in layer order.
    void init_params(Stream& rng) {
        for (int l = 0; l < num_layers(); ++l) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(in_width(l)));
            auto w = weight(l);
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = scale * rng.gaussian();
            bias(l).setZero();
        }
    }

    Eigen::VectorXd theta;

private:
    std::vector<int> widths_;
    Activation act_;
    std::vector<std::size_t> offsets_;
};

// One training batch: inputs as columns plus per-column targets.
struct Batch {
    Eigen::MatrixXd inputs;  // d x B
    std::vector<TrainingTarget> targets;

    Eigen::Index size() const { return inputs.cols(); }
};

namespace detail {

struct ForwardTrace {
    std::vector<Eigen::MatrixXd> a;  // a[0] = inputs, a[L] = logits
    Eigen::MatrixXd q;
};

inline ForwardTrace forward_trace(const Mlp& m, const Eigen::MatrixXd& inputs) {
    if (!m.theta.allFinite()) throw NumericFault("forward: non-finite parameters");
    ForwardTrace t;
    t.a.resize(static_cast<std::size_t>(m.num_layers()) + 1);
    t.a[0] = inputs;
    for (int l = 0; l < m.num_layers(); ++l) {
        Eigen::MatrixXd z =
            (m.weight(l) * t.a[static_cast<std::size_t>(l)]).colwise() + m.bias(l);
        if (l + 1 < m.num_layers()) {
            if (m.activation() == Activation::tanh)
                t.a[static_cast<std::size_t>(l) + 1] = z.array().tanh();
            else
                t.a[static_cast<std::size_t>(l) + 1] = z.cwiseMax(0.0);
        } else {
            t.a[static_cast<std::size_t>(l) + 1] = std::move(z);
        }
    }
    t.q = softmax_columns(t.a.back());
    return t;
}

inline Eigen::MatrixXd dense_targets(const Mlp& m, const std::vector<TrainingTarget>& targets) {
    Eigen::MatrixXd t(m.num_classes(), static_cast<Eigen::Index>(targets.size()));
    for (std::size_t j = 0; j < targets.size(); ++j)
        t.col(static_cast<Eigen::Index>(j)) = targets[j].dense(m.num_classes());
    return t;
}

// Mean cross-entropy from logits via stable log-softmax.
inline double mean_cross_entropy(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& t) {
    double loss = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double mx = logits.col(j).maxCoeff();
        const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
        loss += t.col(j).dot(Eigen::VectorXd::Constant(logits.rows(), lse) - logits.col(j));
    }
    return loss / static_cast<double>(logits.cols());
}

// Activation derivative from the stored activations (tanh) or sign (relu).
inline Eigen::MatrixXd act_deriv(const Mlp& m, const Eigen::MatrixXd& a) {
    if (m.activation() == Activation::tanh) return 1.0 - a.array().square();
    return (a.array() > 0.0).cast<double>();
}

}  // namespace detail

inline ForwardResult forward(const Mlp& m, const Eigen::VectorXd& x) {
    if (x.size() != m.input_dim()) throw InvalidInput("forward: input dimension mismatch");
    const auto t = detail::forward_trace(m, x);
    ForwardResult r;
    r.logits = t.a.back().col(0);
    r.q = t.q.col(0);
    r.features = t.a[t.a.size() - 2].col(0);
    return r;
}

inline double loss_value(const Mlp& m, const Batch& batch) {
    if (static_cast<Eigen::Index>(batch.targets.size()) != batch.size())
        throw InvalidInput("loss: target count mismatch");
    const auto trace = detail::forward_trace(m, batch.inputs);
    return detail::mean_cross_entropy(trace.a.back(), detail::dense_targets(m, batch.targets));
}

// Mean loss over the batch and its exact gradient. The logit-space gradient
// is (q - t) per example before the parameter Jacobian.
inline std::pair<double, Eigen::VectorXd> loss_and_grad(const Mlp& m, const Batch& batch) {
    if (static_cast<Eigen::Index>(batch.targets.size()) != batch.size())
        throw InvalidInput("loss_and_grad: target count mismatch");
    const auto trace = detail::forward_trace(m, batch.inputs);
    const Eigen::MatrixXd t = detail::dense_targets(m, batch.targets);
    const double loss = detail::mean_cross_entropy(trace.a.back(), t);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.param_count()));
    Eigen::MatrixXd delta = (trace.q - t) * inv_b;
    for (int l = m.num_layers() - 1; l >= 0; --l) {
        m.weight_view(grad, l) = delta * trace.a[static_cast<std::size_t>(l)].transpose();
        m.bias_view(grad, l) = delta.rowwise().sum();
        if (l > 0) {
            delta = (m.weight(l).transpose() * delta)
                        .cwiseProduct(detail::act_deriv(m, trace.a[static_cast<std::size_t>(l)]));
        }
    }
    return {loss, std::move(grad)};
}

// Exact Hessian-vector product of the mean batch loss at theta, by the
// R-operator: a directional forward pass followed by the differentiated
// backward pass. Linear in v.
inline Eigen::VectorXd hvp(const Mlp& m, const Batch& batch, const Eigen::VectorXd& v) {
    if (v.size() != static_cast<Eigen::Index>(m.param_count()))
        throw InvalidInput("hvp: direction length mismatch");
    const int layers = m.num_layers();
    const auto trace = detail::forward_trace(m, batch.inputs);
    const Eigen::MatrixXd t = detail::dense_targets(m, batch.targets);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    // R-forward: directional derivatives of every activation.
    std::vector<Eigen::MatrixXd> ra(static_cast<std::size_t>(layers) + 1);
    ra[0] = Eigen::MatrixXd::Zero(batch.inputs.rows(), batch.inputs.cols());
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd rz =
            ((m.weight(l) * ra[static_cast<std::size_t>(l)] +
              m.weight_view(v, l) * trace.a[static_cast<std::size_t>(l)])
                 .colwise() +
             m.bias_view(v, l));
        if (l + 1 < layers)
            ra[static_cast<std::size_t>(l) + 1] =
                rz.cwiseProduct(detail::act_deriv(m, trace.a[static_cast<std::size_t>(l) + 1]));
        else
            ra[static_cast<std::size_t>(l) + 1] = std::move(rz);
    }

    // R of the softmax: rq = q .* rz - q * (q . rz) columnwise.
    const Eigen::MatrixXd& rz_out = ra[static_cast<std::size_t>(layers)];
    Eigen::MatrixXd rq(rz_out.rows(), rz_out.cols());
    for (Eigen::Index j = 0; j < rz_out.cols(); ++j) {
        const auto qj = trace.q.col(j);
        const double dot = qj.dot(rz_out.col(j));
        rq.col(j) = qj.cwiseProduct(rz_out.col(j)) - qj * dot;
    }

    Eigen::VectorXd result = Eigen::VectorXd::Zero(v.size());
    Eigen::MatrixXd delta = (trace.q - t) * inv_b;
    Eigen::MatrixXd rdelta = rq * inv_b;
    for (int l = layers - 1; l >= 0; --l) {
        const auto& al = trace.a[static_cast<std::size_t>(l)];
        m.weight_view(result, l) = rdelta * al.transpose() + delta * ra[static_cast<std::size_t>(l)].transpose();
        m.bias_view(result, l) = rdelta.rowwise().sum();
        if (l > 0) {
            const auto& a_here = trace.a[static_cast<std::size_t>(l)];
            const Eigen::MatrixXd d_here = detail::act_deriv(m, a_here);
            const Eigen::MatrixXd back = m.weight(l).transpose() * delta;
            Eigen::MatrixXd rback =
                m.weight_view(v, l).transpose() * delta + m.weight(l).transpose() * rdelta;
            if (m.activation() == Activation::tanh) {
                const Eigen::MatrixXd rd_here =
                    -2.0 * a_here.cwiseProduct(ra[static_cast<std::size_t>(l)]);
                rdelta = rback.cwiseProduct(d_here) + back.cwiseProduct(rd_here);
            } else {
                rdelta = rback.cwiseProduct(d_here);
            }
            delta = back.cwiseProduct(d_here);
        }
    }
    if (!result.allFinite()) throw NumericFault("hvp: non-finite result");
    return result;
}

// Logit Jacobian dz/dtheta at a single input: one backward pass per class.
inline Eigen::MatrixXd logit_jacobian(const Mlp& m, const Eigen::VectorXd& x) {
    const auto trace = detail::forward_trace(m, x);
    const int c = m.num_classes();
    Eigen::MatrixXd jac(c, static_cast<Eigen::Index>(m.param_count()));
    for (int k = 0; k < c; ++k) {
        Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.param_count()));
        Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(c, 1);
        delta(k, 0) = 1.0;
        for (int l = m.num_layers() - 1; l >= 0; --l) {
            m.weight_view(row, l) = delta * trace.a[static_cast<std::size_t>(l)].transpose();
            m.bias_view(row, l) = delta.col(0);
            if (l > 0)
                delta = (m.weight(l).transpose() * delta)
                            .cwiseProduct(detail::act_deriv(m, trace.a[static_cast<std::size_t>(l)]));
        }
        jac.row(k) = row;
    }
    return jac;
}

// Gradient with respect to the input of a scalar score of the logits.
// logit_grad maps the forward result to d(score)/d(logits).
template <typename LogitGrad>
Eigen::VectorXd input_gradient(const Mlp& m, const Eigen::VectorXd& x, LogitGrad&& logit_grad) {
    const auto trace = detail::forward_trace(m, x);
    ForwardResult fr;
    fr.logits = trace.a.back().col(0);
    fr.q = trace.q.col(0);
    fr.features = trace.a[trace.a.size() - 2].col(0);

    Eigen::VectorXd delta = logit_grad(fr);
    for (int l = m.num_layers() - 1; l >= 1; --l) {
        delta = (m.weight(l).transpose() * delta)
                    .cwiseProduct(detail::act_deriv(m, trace.a[static_cast<std::size_t>(l)]).col(0));
    }
    return m.weight(0).transpose() * delta;
}

// --- checkpoints -------------------------------------------------------------
//
// Binary little-endian layout:
//   u32 magic 0x564C434B ("VLCK")   u32 version = 1
//   u32 n_widths, u32 widths[n]     u32 activation
//   u64 seed, u32 epoch             f64 metric
//   f64 theta[param_count]

struct Checkpoint {
    Mlp model{std::vector<int>{1, 2}};
    std::uint64_t seed = 0;
    int epoch = 0;
    double metric = 0.0;
};

inline void save_checkpoint(const Mlp& m, std::uint64_t seed, int epoch, double metric,
                            const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("save_checkpoint: cannot open " + path);
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(0x564C434BU);
    put_u32(1U);
    put_u32(static_cast<std::uint32_t>(m.widths().size()));
    for (int w : m.widths()) put_u32(static_cast<std::uint32_t>(w));
    put_u32(static_cast<std::uint32_t>(m.activation()));
    put_u64(seed);
    put_u32(static_cast<std::uint32_t>(epoch));
    put_f64(metric);
    os.write(reinterpret_cast<const char*>(m.theta.data()),
             static_cast<std::streamsize>(m.param_count() * sizeof(double)));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("load_checkpoint: cannot open " + path);
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&] {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_u32() != 0x564C434BU) throw InvalidInput("load_checkpoint: bad magic");
    if (get_u32() != 1U) throw InvalidInput("load_checkpoint: unsupported version");
    const std::uint32_t n = get_u32();
    std::vector<int> widths(n);
    for (auto& w : widths) w = static_cast<int>(get_u32());
    const auto act = static_cast<Activation>(get_u32());
    Checkpoint ck{Mlp(widths, act)};
    ck.seed = get_u64();
    ck.epoch = static_cast<int>(get_u32());
    is.read(reinterpret_cast<char*>(&ck.metric), 8);
    is.read(reinterpret_cast<char*>(ck.model.theta.data()),
            static_cast<std::streamsize>(ck.model.param_count() * sizeof(double)));
    if (!is) throw InvalidInput("load_checkpoint: truncated file");
    return ck;
}

}  // namespace votelab
