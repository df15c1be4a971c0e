#include "finchat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace finchat {

Var Tape::push(Mat value, bool needs_grad, std::function<void()> backprop) {
    Node node;
    node.grad = Mat::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
    const Mat& t = value(table);
    Mat out(static_cast<Eigen::Index>(ids.size()), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= t.rows()) throw Error("gather_rows: id out of range");
        out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
    }
    const bool ng = needs(table);
    Var result{};
    result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, table, result, ids] {
            Mat& tg = grad_mut(table);
            const Mat& g = grad(result);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                tg.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
            }
        };
    }
    return result;
}

Var Tape::matmul(Var a, Var b) {
    const Mat& ma = value(a);
    const Mat& mb = value(b);
    if (ma.cols() != mb.rows()) throw Error("matmul: inner dimension mismatch");
    const bool ng = needs(a) || needs(b);
    Var result = push(ma * mb, ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, b, result] {
            const Mat& g = grad(result);
            if (needs(a)) grad_mut(a) += g * value(b).transpose();
            if (needs(b)) grad_mut(b) += value(a).transpose() * g;
        };
    }
    return result;
}

Var Tape::matmul_nt(Var a, Var b) {
    const Mat& ma = value(a);
    const Mat& mb = value(b);
    if (ma.cols() != mb.cols()) throw Error("matmul_nt: dimension mismatch");
    const bool ng = needs(a) || needs(b);
    Var result = push(ma * mb.transpose(), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, b, result] {
            const Mat& g = grad(result);
            if (needs(a)) grad_mut(a) += g * value(b);
            if (needs(b)) grad_mut(b) += g.transpose() * value(a);
        };
    }
    return result;
}

Var Tape::add(Var a, Var b) {
    const Mat& ma = value(a);
    const Mat& mb = value(b);
    if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) throw Error("add: shape mismatch");
    const bool ng = needs(a) || needs(b);
    Var result = push(ma + mb, ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, b, result] {
            const Mat& g = grad(result);
            if (needs(a)) grad_mut(a) += g;
            if (needs(b)) grad_mut(b) += g;
        };
    }
    return result;
}

Var Tape::sub(Var a, Var b) {
    const Mat& ma = value(a);
    const Mat& mb = value(b);
    if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) throw Error("sub: shape mismatch");
    const bool ng = needs(a) || needs(b);
    Var result = push(ma - mb, ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, b, result] {
            const Mat& g = grad(result);
            if (needs(a)) grad_mut(a) += g;
            if (needs(b)) grad_mut(b) -= g;
        };
    }
    return result;
}

Var Tape::add_rowvec(Var a, Var row) {
    const Mat& ma = value(a);
    const Mat& mr = value(row);
    if (mr.rows() != 1 || mr.cols() != ma.cols()) throw Error("add_rowvec: shape mismatch");
    const bool ng = needs(a) || needs(row);
    Mat out = ma;
    out.rowwise() += mr.row(0);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, row, result] {
            const Mat& g = grad(result);
            if (needs(a)) grad_mut(a) += g;
            if (needs(row)) grad_mut(row).row(0) += g.colwise().sum();
        };
    }
    return result;
}

Var Tape::mul_scalar(Var a, double c) {
    const bool ng = needs(a);
    Var result = push(value(a) * c, ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, c, result] { grad_mut(a) += grad(result) * c; };
    }
    return result;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_cols: no parts");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool ng = false;
    for (Var p : parts) {
        if (value(p).rows() != rows) throw Error("concat_cols: row mismatch");
        cols += value(p).cols();
        ng = ng || needs(p);
    }
    Mat out(rows, cols);
    Eigen::Index offset = 0;
    for (Var p : parts) {
        out.middleCols(offset, value(p).cols()) = value(p);
        offset += value(p).cols();
    }
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        std::vector<Var> parts_copy = parts;
        nodes_[result.id].backprop = [this, parts_copy, result] {
            const Mat& g = grad(result);
            Eigen::Index off = 0;
            for (Var p : parts_copy) {
                const Eigen::Index w = value(p).cols();
                if (needs(p)) grad_mut(p) += g.middleCols(off, w);
                off += w;
            }
        };
    }
    return result;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: no parts");
    const Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool ng = false;
    for (Var p : parts) {
        if (value(p).cols() != cols) throw Error("concat_rows: column mismatch");
        rows += value(p).rows();
        ng = ng || needs(p);
    }
    Mat out(rows, cols);
    Eigen::Index offset = 0;
    for (Var p : parts) {
        out.middleRows(offset, value(p).rows()) = value(p);
        offset += value(p).rows();
    }
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        std::vector<Var> parts_copy = parts;
        nodes_[result.id].backprop = [this, parts_copy, result] {
            const Mat& g = grad(result);
            Eigen::Index off = 0;
            for (Var p : parts_copy) {
                const Eigen::Index h = value(p).rows();
                if (needs(p)) grad_mut(p) += g.middleRows(off, h);
                off += h;
            }
        };
    }
    return result;
}

Var Tape::slice_cols(Var a, int start, int count) {
    const Mat& ma = value(a);
    if (start < 0 || count < 0 || start + count > ma.cols()) throw Error("slice_cols: out of range");
    const bool ng = needs(a);
    Var result = push(ma.middleCols(start, count), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, start, count, result] {
            grad_mut(a).middleCols(start, count) += grad(result);
        };
    }
    return result;
}

Var Tape::slice_rows(Var a, int start, int count) {
    const Mat& ma = value(a);
    if (start < 0 || count < 0 || start + count > ma.rows()) throw Error("slice_rows: out of range");
    const bool ng = needs(a);
    Var result = push(ma.middleRows(start, count), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, start, count, result] {
            grad_mut(a).middleRows(start, count) += grad(result);
        };
    }
    return result;
}

Var Tape::reshape(Var a, int rows, int cols) {
    const Mat& ma = value(a);
    if (ma.size() != static_cast<Eigen::Index>(rows) * cols) throw Error("reshape: size mismatch");
    Mat out(rows, cols);
    // Row-major storage on both sides makes this a flat copy.
    std::copy(ma.data(), ma.data() + ma.size(), out.data());
    const bool ng = needs(a);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, a, result] {
            const Mat& g = grad(result);
            Mat& ga = grad_mut(a);
            for (Eigen::Index i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
        };
    }
    return result;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Mat& mx = value(x);
    const Mat& mg = value(gain);
    const Mat& mb = value(bias);
    if (mg.rows() != 1 || mb.rows() != 1 || mg.cols() != mx.cols() || mb.cols() != mx.cols()) {
        throw Error("layer_norm: gain/bias must be 1 x cols");
    }
    const auto rows = mx.rows();
    const auto cols = mx.cols();
    Mat normalized(rows, cols);
    Mat rstd(rows, 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mean = mx.row(r).mean();
        const double var = (mx.row(r).array() - mean).square().sum() / static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd(r, 0) = rs;
        normalized.row(r) = (mx.row(r).array() - mean) * rs;
    }
    Mat out = (normalized.array().rowwise() * mg.row(0).array()).rowwise() + mb.row(0).array();
    const bool ng = needs(x) || needs(gain) || needs(bias);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, gain, bias, result, normalized, rstd] {
            const Mat& g = grad(result);
            if (needs(gain)) {
                grad_mut(gain).row(0) += (g.array() * normalized.array()).colwise().sum().matrix();
            }
            if (needs(bias)) grad_mut(bias).row(0) += g.colwise().sum();
            if (needs(x)) {
                Mat& gx = grad_mut(x);
                const Mat& mgain = value(gain);
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    Eigen::ArrayXd a = g.row(r).array() * mgain.row(0).array();
                    const double mean_a = a.mean();
                    const double mean_ax = (a * normalized.row(r).array().transpose()).mean();
                    gx.row(r) += (rstd(r, 0) *
                                  (a - mean_a - normalized.row(r).array().transpose() * mean_ax))
                                     .matrix();
                }
            }
        };
    }
    return result;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var Tape::gelu(Var x) {
    const Mat& mx = value(x);
    Mat out(mx.rows(), mx.cols());
    for (Eigen::Index i = 0; i < mx.size(); ++i) {
        const double v = mx.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result] {
            const Mat& g = grad(result);
            const Mat& mx2 = value(x);
            Mat& gx = grad_mut(x);
            for (Eigen::Index i = 0; i < mx2.size(); ++i) {
                const double v = mx2.data()[i];
                const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                const double d = 0.5 * (1.0 + t) +
                                 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                gx.data()[i] += g.data()[i] * d;
            }
        };
    }
    return result;
}

Var Tape::tanh_act(Var x) {
    const Mat& mx = value(x);
    Mat out = mx.array().tanh().matrix();
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result] {
            const Mat& g = grad(result);
            const Mat& y = value(result);
            grad_mut(x).array() += g.array() * (1.0 - y.array().square());
        };
    }
    return result;
}

Var Tape::softplus(Var x) {
    const Mat& mx = value(x);
    Mat out(mx.rows(), mx.cols());
    for (Eigen::Index i = 0; i < mx.size(); ++i) {
        const double v = mx.data()[i];
        out.data()[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result] {
            const Mat& g = grad(result);
            const Mat& mx2 = value(x);
            Mat& gx = grad_mut(x);
            for (Eigen::Index i = 0; i < mx2.size(); ++i) {
                const double v = mx2.data()[i];
                const double sig = v > 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                           : std::exp(v) / (1.0 + std::exp(v));
                gx.data()[i] += g.data()[i] * sig;
            }
        };
    }
    return result;
}

Var Tape::causal_softmax(Var scores, int prefix, const std::vector<bool>& prefix_alive) {
    const Mat& s = value(scores);
    if (s.rows() != s.cols()) throw Error("causal_softmax: scores must be square");
    if (static_cast<int>(prefix_alive.size()) != prefix) {
        throw Error("causal_softmax: prefix_alive size mismatch");
    }
    const Eigen::Index n = s.rows();

    auto visible = [&](Eigen::Index row, Eigen::Index col) -> bool {
        if (col < prefix) {
            if (row < prefix) return col == row || (col < row && prefix_alive[col]);
            return prefix_alive[col];
        }
        if (row < prefix) return false;
        return col <= row;
    };

    Mat out = Mat::Zero(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        double maxv = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < n; ++c) {
            if (visible(r, c)) maxv = std::max(maxv, s(r, c));
        }
        double total = 0.0;
        for (Eigen::Index c = 0; c < n; ++c) {
            if (visible(r, c)) {
                out(r, c) = std::exp(s(r, c) - maxv);
                total += out(r, c);
            }
        }
        out.row(r) /= total;
    }
    const bool ng = needs(scores);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, scores, result] {
            const Mat& a = value(result);
            const Mat& g = grad(result);
            Mat& gs = grad_mut(scores);
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                const double inner = (g.row(r).array() * a.row(r).array()).sum();
                gs.row(r).array() += a.row(r).array() * (g.row(r).array() - inner);
            }
        };
    }
    return result;
}

Var Tape::log_softmax_rows(Var x) {
    const Mat& mx = value(x);
    Mat out(mx.rows(), mx.cols());
    for (Eigen::Index r = 0; r < mx.rows(); ++r) {
        const double maxv = mx.row(r).maxCoeff();
        const double lse = maxv + std::log((mx.row(r).array() - maxv).exp().sum());
        out.row(r) = mx.row(r).array() - lse;
    }
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result] {
            const Mat& y = value(result);
            const Mat& g = grad(result);
            Mat& gx = grad_mut(x);
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double gsum = g.row(r).sum();
                gx.row(r).array() += g.row(r).array() - y.row(r).array().exp() * gsum;
            }
        };
    }
    return result;
}

Var Tape::gather_entries(Var x, const std::vector<std::pair<int, int>>& entries) {
    const Mat& mx = value(x);
    Mat out(static_cast<Eigen::Index>(entries.size()), 1);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto [r, c] = entries[i];
        if (r < 0 || r >= mx.rows() || c < 0 || c >= mx.cols()) {
            throw Error("gather_entries: index out of range");
        }
        out(static_cast<Eigen::Index>(i), 0) = mx(r, c);
    }
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, entries, result] {
            const Mat& g = grad(result);
            Mat& gx = grad_mut(x);
            for (std::size_t i = 0; i < entries.size(); ++i) {
                gx(entries[i].first, entries[i].second) += g(static_cast<Eigen::Index>(i), 0);
            }
        };
    }
    return result;
}

Var Tape::sum_all(Var x) {
    Mat out(1, 1);
    out(0, 0) = value(x).sum();
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result] {
            grad_mut(x).array() += grad(result)(0, 0);
        };
    }
    return result;
}

Var Tape::mean_all(Var x) {
    const double n = static_cast<double>(value(x).size());
    Mat out(1, 1);
    out(0, 0) = value(x).sum() / n;
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result, n] {
            grad_mut(x).array() += grad(result)(0, 0) / n;
        };
    }
    return result;
}

Var Tape::mean_rows(Var x) {
    const Mat& mx = value(x);
    const double n = static_cast<double>(mx.rows());
    Mat out = mx.colwise().sum() / n;
    const bool ng = needs(x);
    Var result = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[result.id].backprop = [this, x, result, n] {
            const Mat& g = grad(result);
            grad_mut(x).rowwise() += (g.row(0) / n);
        };
    }
    return result;
}

void Tape::backward(Var loss) {
    if (swept_) throw Error("backward: tape already swept");
    swept_ = true;
    const int id = check(loss);
    if (nodes_[id].value.rows() != 1 || nodes_[id].value.cols() != 1) {
        throw Error("backward: loss must be a scalar node");
    }
    nodes_[id].grad(0, 0) += 1.0;
    for (int i = id; i >= 0; --i) {
        if (nodes_[i].backprop) nodes_[i].backprop();
    }
}

}  // namespace finchat
