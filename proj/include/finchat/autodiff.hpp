#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "finchat/common.hpp"

namespace finchat {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation tape over 2-D double tensors. Nodes are
// created in topological order by construction, so backward() is a single
// reverse sweep. A Tape is built per forward pass and discarded afterwards;
// it is neither copyable nor thread-safe.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Mat value, bool needs_grad = true);
    Var constant(Mat value) { return leaf(std::move(value), false); }

    const Mat& value(Var v) const { return nodes_[check(v)].value; }
    const Mat& grad(Var v) const { return nodes_[check(v)].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Rows of `table` selected by `ids` (entries may repeat).
    Var gather_rows(Var table, const std::vector<int>& ids);
    Var matmul(Var a, Var b);
    // a * b^T without materializing the transpose.
    Var matmul_nt(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    // Broadcast-add a 1xN row vector to every row of `a`.
    Var add_rowvec(Var a, Var row);
    Var mul_scalar(Var a, double c);
    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_cols(Var a, int start, int count);
    Var slice_rows(Var a, int start, int count);
    // Row-major reinterpretation; element count must match.
    Var reshape(Var a, int rows, int cols);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var gelu(Var x);
    Var tanh_act(Var x);
    Var softplus(Var x);
    // Softmax over each row of `scores` restricted to the visibility set of
    // causal attention with `prefix` leading memory slots. Real row i (i >=
    // prefix) sees alive prefix slots and real slots j <= i. Prefix rows see
    // alive prefix slots up to themselves, always including themselves.
    Var causal_softmax(Var scores, int prefix, const std::vector<bool>& prefix_alive);
    Var log_softmax_rows(Var x);
    // Column vector of x(r,c) for each (r,c) pair.
    Var gather_entries(Var x, const std::vector<std::pair<int, int>>& entries);
    Var sum_all(Var x);
    Var mean_all(Var x);
    // 1xC mean over rows.
    Var mean_rows(Var x);

    // Accumulates 1 into the gradient of `loss` (must be 1x1) and sweeps the
    // tape in reverse. May be called once per tape.
    void backward(Var loss);

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> backprop;
        bool needs_grad = false;
    };

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
            throw Error("autodiff: invalid tape node");
        }
        return v.id;
    }

    Var push(Mat value, bool needs_grad, std::function<void()> backprop);
    Mat& grad_mut(Var v) { return nodes_[check(v)].grad; }
    bool needs(Var v) const { return nodes_[check(v)].needs_grad; }

    std::vector<Node> nodes_;
    bool swept_ = false;
};

}  // namespace finchat
