#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "memchain/errors.hpp"
#include "memchain/tensor.hpp"

namespace memchain {


constexpr double kSigmoidClamp = 709.0;  // largest safe exp() argument
constexpr double kNormEps = 1e-12;       // l2_normalize zero-norm floor
constexpr double kBceEps = 1e-12;        // log clamp in cross entropy

enum class Op {
    kLeaf,
    kAdd,
    kSub,
    kHadamard,
    kMatvec,
    kDot,
    kSigmoid,
    kTanh,
    kPrelu,
    kSoftmax,
    kL2Normalize,
    kAffine,   // a*x + b elementwise, constants
    kScaleBy,  // scalar node times vector node
    kPick,     // one component of a vector as a scalar
    kConcat,
    kRow,  // one row of a matrix as a vector
    kBce,  // binary cross entropy against a constant label
    kSum,
};

/// Reverse-mode tape. Nodes are recorded in construction order, which is by
/// definition topological; values are computed eagerly at construction and
/// cached for the backward sweep. A tape is built fresh for every example and
/// never mutated after backward().
class Tape {
public:
    struct Node {
        Op op;
        std::vector<NodeId> in;
        Tensor val;
        Tensor grad;
        ParamId pid = -1;  // >= 0 marks a trainable leaf
        double a = 0.0;    // op constants (affine scale, bce label)
        double b = 0.0;
        std::size_t idx = 0;  // pick / row index
    };

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(NodeId id) const { return nodes_[check(id)].val; }
    const Tensor& grad(NodeId id) const { return nodes_[check(id)].grad; }
    ParamId param_of(NodeId id) const { return nodes_[check(id)].pid; }

    NodeId leaf(Tensor v, ParamId pid = -1) {
        return push(Op::kLeaf, {}, std::move(v), pid);
    }
    NodeId constant(Tensor v) { return leaf(std::move(v), -1); }

    NodeId add(NodeId x, NodeId y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        require_same_shape(a, b, "add");
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return push(Op::kAdd, {x, y}, std::move(out));
    }

    NodeId sub(NodeId x, NodeId y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        require_same_shape(a, b, "sub");
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        return push(Op::kSub, {x, y}, std::move(out));
    }

    NodeId hadamard(NodeId x, NodeId y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        require_same_shape(a, b, "hadamard");
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        return push(Op::kHadamard, {x, y}, std::move(out));
    }

    /// Elementwise product with a fixed mask; the canonical dropout op. The
    /// mask carries the 1/(1-rate) scale and receives no gradient.
    NodeId dropout(NodeId x, const Tensor& mask) {
        return hadamard(x, constant(mask));
    }

    NodeId matvec(NodeId m, NodeId v) {
        const Tensor& M = val(m);
        const Tensor& x = val(v);
        if (M.rank() != 2 || x.rank() != 1 || M.cols() != x.size())
            throw DimError("matvec: incompatible shapes " + M.shape_str() +
                           " vs " + x.shape_str());
        Tensor out = Tensor::zeros({M.rows()});
        for (std::size_t i = 0; i < M.rows(); ++i) {
            double s = 0.0;
            const double* row = M.data.data() + i * M.cols();
            for (std::size_t j = 0; j < M.cols(); ++j) s += row[j] * x[j];
            out[i] = s;
        }
        return push(Op::kMatvec, {m, v}, std::move(out));
    }

    NodeId dot(NodeId x, NodeId y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        require_same_shape(a, b, "dot");
        return push(Op::kDot, {x, y}, Tensor::scalar(dot_raw(a, b)));
    }

    NodeId sigmoid(NodeId x) {
        Tensor out = val(x);
        for (double& v : out.data) v = sigmoid_val(v);
        return push(Op::kSigmoid, {x}, std::move(out));
    }

    NodeId tanh(NodeId x) {
        Tensor out = val(x);
        for (double& v : out.data) v = std::tanh(v);
        return push(Op::kTanh, {x}, std::move(out));
    }

    /// Parametric ReLU, one slope per channel. Gradient reaches the slope only
    /// through negative inputs.
    NodeId prelu(NodeId x, NodeId slope) {
        const Tensor& a = val(x);
        const Tensor& s = val(slope);
        require_same_shape(a, s, "prelu");
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i] < 0.0) out[i] *= s[i];
        return push(Op::kPrelu, {x, slope}, std::move(out));
    }

    NodeId softmax(NodeId x) {
        const Tensor& a = val(x);
        if (a.rank() != 1 || a.size() == 0)
            throw DimError("softmax: expected non-empty vector, got " + a.shape_str());
        Tensor out = a;
        double mx = *std::max_element(out.data.begin(), out.data.end());
        double z = 0.0;
        for (double& v : out.data) {
            v = std::exp(v - mx);
            z += v;
        }
        for (double& v : out.data) v /= z;
        return push(Op::kSoftmax, {x}, std::move(out));
    }

    NodeId l2_normalize(NodeId x) {
        const Tensor& a = val(x);
        double n = std::max(a.norm2(), kNormEps);
        Tensor out = a;
        for (double& v : out.data) v /= n;
        NodeId id = push(Op::kL2Normalize, {x}, std::move(out));
        nodes_[id].a = n;  // cache the (floored) norm for backward
        return id;
    }

    NodeId affine(NodeId x, double scale, double shift) {
        Tensor out = val(x);
        for (double& v : out.data) v = scale * v + shift;
        NodeId id = push(Op::kAffine, {x}, std::move(out));
        nodes_[id].a = scale;
        nodes_[id].b = shift;
        return id;
    }

    NodeId scale(NodeId x, double c) { return affine(x, c, 0.0); }

    /// s must be a 1-element tensor; broadcasts over v.
    NodeId scale_by(NodeId s, NodeId v) {
        const Tensor& sv = val(s);
        if (sv.size() != 1)
            throw DimError("scale_by: scalar operand has shape " + sv.shape_str());
        Tensor out = val(v);
        for (double& x : out.data) x *= sv[0];
        return push(Op::kScaleBy, {s, v}, std::move(out));
    }

    NodeId pick(NodeId v, std::size_t i) {
        const Tensor& a = val(v);
        if (i >= a.size())
            throw DimError("pick: index " + std::to_string(i) + " out of range for " +
                           a.shape_str());
        NodeId id = push(Op::kPick, {v}, Tensor::scalar(a[i]));
        nodes_[id].idx = i;
        return id;
    }

    NodeId concat(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw DimError("concat: no inputs");
        std::size_t n = 0;
        for (NodeId p : parts) n += val(p).size();
        Tensor out = Tensor::zeros({n});
        std::size_t off = 0;
        for (NodeId p : parts) {
            const Tensor& t = val(p);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
            off += t.size();
        }
        return push(Op::kConcat, parts, std::move(out));
    }

    NodeId row(NodeId m, std::size_t i) {
        const Tensor& M = val(m);
        if (M.rank() != 2 || i >= M.rows())
            throw DimError("row: index " + std::to_string(i) + " out of range for " +
                           M.shape_str());
        Tensor out = Tensor::zeros({M.cols()});
        std::copy(M.data.begin() + i * M.cols(), M.data.begin() + (i + 1) * M.cols(),
                  out.data.begin());
        NodeId id = push(Op::kRow, {m}, std::move(out));
        nodes_[id].idx = i;
        return id;
    }

    /// -(y*log(p) + (1-y)*log(1-p)) with p clamped to [eps, 1-eps].
    NodeId bce(NodeId p, double y) {
        const Tensor& pv = val(p);
        if (pv.size() != 1)
            throw DimError("bce: prediction has shape " + pv.shape_str());
        double pc = clamp_prob(pv[0]);
        double loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        NodeId id = push(Op::kBce, {p}, Tensor::scalar(loss));
        nodes_[id].a = y;
        return id;
    }

    NodeId sum(NodeId x) {
        const Tensor& a = val(x);
        double s = 0.0;
        for (double v : a.data) s += v;
        return push(Op::kSum, {x}, Tensor::scalar(s));
    }

    /// Reverse sweep from a scalar loss. Fills every node's grad; visits each
    /// node exactly once. Gradients accumulate across shared subexpressions.
    void backward(NodeId loss) {
        const Tensor& lv = val(loss);
        if (lv.size() != 1)
            throw ContractError("backward: loss must be scalar, got " + lv.shape_str());
        for (Node& n : nodes_) n.grad = Tensor::zeros(n.val.shape);
        nodes_[loss].grad[0] = 1.0;
        for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id)
            backprop(id);
        ran_backward_ = true;
    }

    /// Per-parameter gradients after backward(); parameters never touched by
    /// the graph get zeros of the given shapes.
    std::vector<Tensor> param_grads(const std::vector<Tensor>& param_values) const {
        std::vector<Tensor> out;
        out.reserve(param_values.size());
        for (const Tensor& p : param_values) out.push_back(Tensor::zeros(p.shape));
        if (!ran_backward_) return out;
        for (const Node& n : nodes_) {
            if (n.op != Op::kLeaf || n.pid < 0) continue;
            Tensor& g = out.at(static_cast<std::size_t>(n.pid));
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        return out;
    }

    static double sigmoid_val(double x) {
        double c = std::clamp(x, -kSigmoidClamp, kSigmoidClamp);
        if (c >= 0.0) return 1.0 / (1.0 + std::exp(-c));
        double e = std::exp(c);
        return e / (1.0 + e);
    }

    static double clamp_prob(double p) {
        return std::clamp(p, kBceEps, 1.0 - kBceEps);
    }

private:
    const Tensor& val(NodeId id) const { return nodes_[check(id)].val; }

    NodeId check(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw ContractError("tape: bad node id " + std::to_string(id));
        return id;
    }

    NodeId push(Op op, std::vector<NodeId> in, Tensor v, ParamId pid = -1) {
        for (NodeId i : in) check(i);
        Node n;
        n.op = op;
        n.in = std::move(in);
        n.val = std::move(v);
        n.pid = pid;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void backprop(NodeId id) {
        Node& n = nodes_[id];
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kAdd: {
                accum(n.in[0], g);
                accum(n.in[1], g);
                break;
            }
            case Op::kSub: {
                accum(n.in[0], g);
                Tensor& gb = nodes_[n.in[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                break;
            }
            case Op::kHadamard: {
                const Tensor& a = nodes_[n.in[0]].val;
                const Tensor& b = nodes_[n.in[1]].val;
                Tensor& ga = nodes_[n.in[0]].grad;
                Tensor& gb = nodes_[n.in[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b[i];
                    gb[i] += g[i] * a[i];
                }
                break;
            }
            case Op::kMatvec: {
                const Tensor& M = nodes_[n.in[0]].val;
                const Tensor& x = nodes_[n.in[1]].val;
                Tensor& gM = nodes_[n.in[0]].grad;
                Tensor& gx = nodes_[n.in[1]].grad;
                for (std::size_t i = 0; i < M.rows(); ++i) {
                    const double gi = g[i];
                    const double* row = M.data.data() + i * M.cols();
                    double* grow = gM.data.data() + i * M.cols();
                    for (std::size_t j = 0; j < M.cols(); ++j) {
                        grow[j] += gi * x[j];
                        gx[j] += gi * row[j];
                    }
                }
                break;
            }
            case Op::kDot: {
                const Tensor& a = nodes_[n.in[0]].val;
                const Tensor& b = nodes_[n.in[1]].val;
                Tensor& ga = nodes_[n.in[0]].grad;
                Tensor& gb = nodes_[n.in[1]].grad;
                const double gs = g[0];
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ga[i] += gs * b[i];
                    gb[i] += gs * a[i];
                }
                break;
            }
            case Op::kSigmoid: {
                Tensor& gx = nodes_[n.in[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double s = n.val[i];
                    gx[i] += g[i] * s * (1.0 - s);
                }
                break;
            }
            case Op::kTanh: {
                Tensor& gx = nodes_[n.in[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double t = n.val[i];
                    gx[i] += g[i] * (1.0 - t * t);
                }
                break;
            }
            case Op::kPrelu: {
                const Tensor& x = nodes_[n.in[0]].val;
                const Tensor& s = nodes_[n.in[1]].val;
                Tensor& gx = nodes_[n.in[0]].grad;
                Tensor& gs = nodes_[n.in[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x[i] >= 0.0) {
                        gx[i] += g[i];
                    } else {
                        gx[i] += g[i] * s[i];
                        gs[i] += g[i] * x[i];
                    }
                }
                break;
            }
            case Op::kSoftmax: {
                Tensor& gx = nodes_[n.in[0]].grad;
                double inner = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * n.val[i];
                for (std::size_t i = 0; i < g.size(); ++i)
                    gx[i] += n.val[i] * (g[i] - inner);
                break;
            }
            case Op::kL2Normalize: {
                // y = x / n with n the floored norm; dx = (g - y*(y.g)) / n.
                Tensor& gx = nodes_[n.in[0]].grad;
                const double norm = n.a;
                const Tensor& x = nodes_[n.in[0]].val;
                bool floored = x.norm2() < kNormEps;
                if (floored) {
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / norm;
                } else {
                    double yg = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) yg += g[i] * n.val[i];
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gx[i] += (g[i] - n.val[i] * yg) / norm;
                }
                break;
            }
            case Op::kAffine: {
                Tensor& gx = nodes_[n.in[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.a * g[i];
                break;
            }
            case Op::kScaleBy: {
                const Tensor& s = nodes_[n.in[0]].val;
                const Tensor& v = nodes_[n.in[1]].val;
                Tensor& gs = nodes_[n.in[0]].grad;
                Tensor& gv = nodes_[n.in[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gs[0] += g[i] * v[i];
                    gv[i] += g[i] * s[0];
                }
                break;
            }
            case Op::kPick: {
                nodes_[n.in[0]].grad[n.idx] += g[0];
                break;
            }
            case Op::kConcat: {
                std::size_t off = 0;
                for (NodeId p : n.in) {
                    Tensor& gp = nodes_[p].grad;
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                    off += gp.size();
                }
                break;
            }
            case Op::kRow: {
                Tensor& gM = nodes_[n.in[0]].grad;
                std::size_t c = nodes_[n.in[0]].val.cols();
                for (std::size_t j = 0; j < c; ++j) gM.data[n.idx * c + j] += g[j];
                break;
            }
            case Op::kBce: {
                double p = nodes_[n.in[0]].val[0];
                // Zero slope outside the clamp band.
                if (p > kBceEps && p < 1.0 - kBceEps) {
                    double y = n.a;
                    nodes_[n.in[0]].grad[0] += g[0] * (p - y) / (p * (1.0 - p));
                }
                break;
            }
            case Op::kSum: {
                Tensor& gx = nodes_[n.in[0]].grad;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                break;
            }
        }
    }

    void accum(NodeId id, const Tensor& g) {
        Tensor& t = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace memchain
