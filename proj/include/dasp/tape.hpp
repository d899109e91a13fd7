#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dasp/errors.hpp"
#include "dasp/tensor.hpp"

namespace dasp {

// Gradients keyed by parameter name. Parameters registered on the tape but
// unused by the differentiated output keep zero gradients.
using GradientMap = std::map<std::string, Tensor>;

// Dynamic reverse-mode tape. Forward calls record one node per primitive;
// backward replays the adjoint rules in reverse recording order (which is a
// topological order by construction).
class Tape {
public:
    using ValueId = std::size_t;

    ValueId constant(Tensor value) { return push(Op::Leaf, std::move(value)); }

    ValueId param(const std::string& name, Tensor value) {
        const ValueId id = push(Op::Leaf, std::move(value));
        nodes_[id].name = name;
        nodes_[id].trainable = true;
        params_.emplace_back(name, id);
        return id;
    }

    ValueId matmul(ValueId a, ValueId b) {
        return push(Op::MatMul, dasp::matmul(val(a), val(b)), a, b);
    }

    ValueId add(ValueId a, ValueId b) { return push(Op::Add, dasp::add(val(a), val(b)), a, b); }

    ValueId add_rowvec(ValueId a, ValueId bias) {
        return push(Op::AddRowVec, dasp::add_rowvec(val(a), val(bias)), a, bias);
    }

    ValueId scale(ValueId a, double s) {
        const ValueId id = push(Op::Scale, dasp::scale(val(a), s), a);
        nodes_[id].factor = s;
        return id;
    }

    ValueId sub(ValueId a, ValueId b) { return add(a, scale(b, -1.0)); }

    ValueId mul(ValueId a, ValueId b) { return push(Op::Mul, dasp::mul(val(a), val(b)), a, b); }

    ValueId relu(ValueId a) { return push(Op::Relu, dasp::relu(val(a)), a); }

    ValueId log_clamped(ValueId a, double floor = 1e-12) {
        const ValueId id = push(Op::LogClamped, dasp::log_clamped(val(a), floor), a);
        nodes_[id].factor = floor;
        return id;
    }

    ValueId softmax_rows(ValueId a) {
        return push(Op::SoftmaxRows, dasp::softmax_rows(val(a)), a);
    }

    ValueId batch_mean(ValueId a) { return push(Op::BatchMean, dasp::batch_mean(val(a)), a); }

    ValueId sum_all(ValueId a) { return push(Op::SumAll, dasp::sum_all(val(a)), a); }

    const Tensor& value(ValueId id) const { return nodes_[id].value; }

    double scalar_value(ValueId id) const {
        if (nodes_[id].value.size() != 1) {
            throw ContractError("scalar_value: node value has shape " +
                                nodes_[id].value.shape_str());
        }
        return nodes_[id].value[0];
    }

    std::size_t node_count() const { return nodes_.size(); }

    // Accumulates d(output)/d(parameter) for every registered parameter.
    // Rebuilds adjoint buffers from scratch, so repeated calls on the same
    // tape and output produce bit-identical results.
    GradientMap backward(ValueId output) const {
        if (nodes_[output].value.size() != 1) {
            throw ContractError("backward: output must be a scalar, got shape " +
                                nodes_[output].value.shape_str());
        }
        std::vector<Tensor> adj(nodes_.size());
        std::vector<bool> live(nodes_.size(), false);
        adj[output] = Tensor::full(nodes_[output].value.shape(), 1.0);
        live[output] = true;

        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (!live[i]) continue;
            const Node& n = nodes_[i];
            const Tensor& g = adj[i];
            switch (n.op) {
                case Op::Leaf:
                    break;
                case Op::MatMul:
                    accumulate(adj, live, n.a, dasp::matmul(g, transpose(val(n.b))));
                    accumulate(adj, live, n.b, dasp::matmul(transpose(val(n.a)), g));
                    break;
                case Op::Add:
                    accumulate(adj, live, n.a, g);
                    accumulate(adj, live, n.b, g);
                    break;
                case Op::AddRowVec: {
                    accumulate(adj, live, n.a, g);
                    Tensor gb({g.cols()});
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
                    accumulate(adj, live, n.b, gb);
                    break;
                }
                case Op::Scale:
                    accumulate(adj, live, n.a, dasp::scale(g, n.factor));
                    break;
                case Op::Mul:
                    accumulate(adj, live, n.a, dasp::mul(g, val(n.b)));
                    accumulate(adj, live, n.b, dasp::mul(g, val(n.a)));
                    break;
                case Op::Relu: {
                    Tensor ga = g;
                    const Tensor& x = val(n.a);
                    for (std::size_t k = 0; k < ga.size(); ++k)
                        if (x[k] <= 0.0) ga[k] = 0.0;
                    accumulate(adj, live, n.a, ga);
                    break;
                }
                case Op::LogClamped: {
                    Tensor ga = g;
                    const Tensor& x = val(n.a);
                    for (std::size_t k = 0; k < ga.size(); ++k)
                        ga[k] = x[k] > n.factor ? ga[k] / x[k] : 0.0;
                    accumulate(adj, live, n.a, ga);
                    break;
                }
                case Op::SoftmaxRows: {
                    const Tensor& y = n.value;
                    Tensor ga(y.shape());
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                        double dot = 0.0;
                        for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
                        for (std::size_t c = 0; c < y.cols(); ++c)
                            ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                    }
                    accumulate(adj, live, n.a, ga);
                    break;
                }
                case Op::BatchMean: {
                    const Tensor& x = val(n.a);
                    const double inv = 1.0 / static_cast<double>(x.rows());
                    Tensor ga(x.shape());
                    for (std::size_t r = 0; r < x.rows(); ++r)
                        for (std::size_t c = 0; c < x.cols(); ++c) ga.at(r, c) = g.at(0, c) * inv;
                    accumulate(adj, live, n.a, ga);
                    break;
                }
                case Op::SumAll: {
                    accumulate(adj, live, n.a, Tensor::full(val(n.a).shape(), g[0]));
                    break;
                }
            }
        }

        GradientMap grads;
        for (const auto& [name, id] : params_) {
            grads[name] = live[id] ? std::move(adj[id]) : Tensor(nodes_[id].value.shape());
        }
        return grads;
    }

private:
    enum class Op {
        Leaf,
        MatMul,
        Add,
        AddRowVec,
        Scale,
        Mul,
        Relu,
        LogClamped,
        SoftmaxRows,
        BatchMean,
        SumAll
    };

    struct Node {
        Op op;
        Tensor value;
        std::size_t a = 0, b = 0;
        double factor = 0.0;  // scale factor or log floor
        bool trainable = false;
        std::string name;
    };

    ValueId push(Op op, Tensor value, std::size_t a = 0, std::size_t b = 0) {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.a = a;
        n.b = b;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    const Tensor& val(std::size_t id) const { return nodes_[id].value; }

    static void accumulate(std::vector<Tensor>& adj, std::vector<bool>& live, std::size_t id,
                           const Tensor& g) {
        if (!live[id]) {
            adj[id] = g;
            live[id] = true;
        } else {
            adj[id] = dasp::add(adj[id], g);
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, ValueId>> params_;
};

}  // namespace dasp
