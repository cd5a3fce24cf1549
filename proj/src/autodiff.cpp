#include "prba/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace prba::ad {

// ---------------------------------------------------------------------------
// Tensor / Node

void Node::accumulate(const Matrix& g) {
    if (grad.size() == 0)
        grad = g;
    else
        grad += g;
}

Tensor Tensor::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Tensor(std::move(node));
}

const Matrix& Tensor::value() const {
    if (!node_) throw InvalidArgument("use of an undefined tensor");
    return node_->value;
}

const Matrix& Tensor::grad() const {
    if (!node_) throw InvalidArgument("use of an undefined tensor");
    return node_->grad;
}

Matrix Tensor::grad_or_zero() const {
    const Matrix& g = grad();
    if (g.size() == 0) return Matrix::Zero(rows(), cols());
    return g;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw InvalidArgument("item() on a non-scalar tensor");
    return value()(0, 0);
}

void Tensor::zero_grad() {
    if (node_) node_->grad.resize(0, 0);
}

const char* primitive_name(Primitive kind) {
    switch (kind) {
        case Primitive::matmul: return "matmul";
        case Primitive::affine: return "affine";
        case Primitive::add: return "add";
        case Primitive::sub: return "sub";
        case Primitive::mul: return "mul";
        case Primitive::scale: return "scale";
        case Primitive::softmax_rows: return "softmax";
        case Primitive::layer_norm: return "layer_norm";
        case Primitive::relu: return "relu";
        case Primitive::sigmoid: return "sigmoid";
        case Primitive::tanh: return "tanh";
        case Primitive::cos: return "cos";
        case Primitive::sin: return "sin";
        case Primitive::sqrt: return "sqrt";
        case Primitive::l2_normalize_rows: return "l2_normalize";
        case Primitive::concat_cols: return "concat";
        case Primitive::slice_cols: return "slice";
        case Primitive::take_rows: return "take_rows";
        case Primitive::take_cols: return "take_cols";
        case Primitive::stack_sequence: return "stack_sequence";
        case Primitive::broadcast_rows: return "broadcast_rows";
        case Primitive::sum: return "sum";
        case Primitive::row_sum: return "row_sum";
        case Primitive::complex_mul: return "complex_mul";
        case Primitive::complex_inner: return "complex_inner";
        case Primitive::abs2: return "abs2";
        case Primitive::polarize: return "polarize";
        case Primitive::channel_apply: return "channel_apply";
        case Primitive::attention: return "attention";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Tape core

Tensor Tape::record(const char* op, Matrix value, std::vector<Tensor> inputs, BackwardFn fn) {
    if (!value.allFinite()) throw NumericFault(std::string(op) + " produced a non-finite value");
    const bool track =
        recording_ && std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor& t) { return t.requires_grad(); });
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (track) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& t : inputs) node->inputs.push_back(t.node_);
        node->backward = std::move(fn);
        nodes_.push_back(node);
    }
    return Tensor(std::move(node));
}

void Tape::backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw InvalidArgument("backward: loss must be a 1 x 1 scalar");
    if (nodes_.empty() || !loss.requires_grad())
        throw InvalidArgument("backward: nothing recorded on the tape");
    loss.node_->accumulate(Matrix::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.size() != 0 && n.backward) n.backward(n);
    }
}

void Tape::clear() {
    nodes_.clear();
    guarded_ = 0;
}

namespace {

inline void push(Node& self, std::size_t i, const Matrix& g) {
    Node& in = *self.inputs[i];
    if (in.requires_grad) in.accumulate(g);
}

inline bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

void require(bool ok, const char* op, const std::string& msg) {
    if (!ok) throw InvalidArgument(std::string(op) + ": " + msg);
}

std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename F>
Matrix unary_map(const Matrix& a, F f) {
    return a.unaryExpr(f);
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    require(a.cols() == b.rows(), "matmul", dims(a.value()) + " * " + dims(b.value()));
    Matrix out = a.value() * b.value();
    return record("matmul", std::move(out), {a, b}, [](Node& self) {
        const Matrix& x = self.inputs[0]->value;
        const Matrix& y = self.inputs[1]->value;
        if (wants(self, 0)) push(self, 0, self.grad * y.transpose());
        if (wants(self, 1)) push(self, 1, x.transpose() * self.grad);
    });
}

Tensor Tape::affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.cols() == w.rows(), "affine", dims(x.value()) + " * " + dims(w.value()));
    require(b.rows() == 1 && b.cols() == w.cols(), "affine", "bias must be 1 x " +
                                                                  std::to_string(w.cols()));
    Matrix out = x.value() * w.value();
    out.rowwise() += b.value().row(0);
    return record("affine", std::move(out), {x, w, b}, [](Node& self) {
        const Matrix& xv = self.inputs[0]->value;
        const Matrix& wv = self.inputs[1]->value;
        if (wants(self, 0)) push(self, 0, self.grad * wv.transpose());
        if (wants(self, 1)) push(self, 1, xv.transpose() * self.grad);
        if (wants(self, 2)) push(self, 2, self.grad.colwise().sum());
    });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const bool broadcast = b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
    require(broadcast || (a.rows() == b.rows() && a.cols() == b.cols()), "add",
            dims(a.value()) + " + " + dims(b.value()));
    Matrix out = a.value();
    if (broadcast)
        out.rowwise() += b.value().row(0);
    else
        out += b.value();
    return record("add", std::move(out), {a, b}, [broadcast](Node& self) {
        if (wants(self, 0)) push(self, 0, self.grad);
        if (wants(self, 1)) push(self, 1, broadcast ? Matrix(self.grad.colwise().sum()) : self.grad);
    });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    const bool broadcast = b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
    require(broadcast || (a.rows() == b.rows() && a.cols() == b.cols()), "sub",
            dims(a.value()) + " - " + dims(b.value()));
    Matrix out = a.value();
    if (broadcast)
        out.rowwise() -= b.value().row(0);
    else
        out -= b.value();
    return record("sub", std::move(out), {a, b}, [broadcast](Node& self) {
        if (wants(self, 0)) push(self, 0, self.grad);
        if (wants(self, 1))
            push(self, 1, broadcast ? Matrix(-self.grad.colwise().sum()) : Matrix(-self.grad));
    });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul",
            dims(a.value()) + " .* " + dims(b.value()));
    Matrix out = a.value().cwiseProduct(b.value());
    return record("mul", std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) push(self, 0, self.grad.cwiseProduct(self.inputs[1]->value));
        if (wants(self, 1)) push(self, 1, self.grad.cwiseProduct(self.inputs[0]->value));
    });
}

Tensor Tape::scale(const Tensor& a, double factor) {
    return record("scale", a.value() * factor, {a},
                  [factor](Node& self) { push(self, 0, self.grad * factor); });
}

Tensor Tape::softmax_rows(const Tensor& a) {
    Matrix out(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) {
        const double m = a.value().row(r).maxCoeff();
        out.row(r) = (a.value().row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return record("softmax", std::move(out), {a}, [](Node& self) {
        const Matrix& y = self.value;
        Matrix g = self.grad;
        const Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
        g.colwise() -= dots;
        push(self, 0, g.cwiseProduct(y));
    });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index n = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
            "layer_norm", "affine parameters must be 1 x " + std::to_string(n));
    auto xhat = std::make_shared<Matrix>(x.rows(), n);
    auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        const auto row = x.value().row(r).array();
        const double mean = row.mean();
        const double var = (row - mean).square().mean();
        (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
        xhat->row(r) = (row - mean) * (*inv_std)(r);
    }
    Matrix out = xhat->array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    return record("layer_norm", std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& self) {
        const Matrix& g = self.grad;
        const auto gamma_row = self.inputs[1]->value.row(0).array();
        if (wants(self, 0)) {
            Matrix dxhat = g.array().rowwise() * gamma_row;
            const double inv_n = 1.0 / static_cast<double>(g.cols());
            Matrix dx(g.rows(), g.cols());
            for (Index r = 0; r < g.rows(); ++r) {
                const double m1 = dxhat.row(r).sum() * inv_n;
                const double m2 = dxhat.row(r).dot(xhat->row(r)) * inv_n;
                dx.row(r) = (*inv_std)(r) *
                            (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2).matrix();
            }
            push(self, 0, dx);
        }
        if (wants(self, 1)) push(self, 1, g.cwiseProduct(*xhat).colwise().sum());
        if (wants(self, 2)) push(self, 2, g.colwise().sum());
    });
}

Tensor Tape::relu(const Tensor& a) {
    return record("relu", unary_map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                  [](Node& self) {
                      const Matrix& x = self.inputs[0]->value;
                      push(self, 0,
                           self.grad.cwiseProduct(unary_map(
                               x, [](double v) { return v > 0.0 ? 1.0 : 0.0; })));
                  });
}

Tensor Tape::sigmoid(const Tensor& a) {
    auto f = [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    };
    return record("sigmoid", unary_map(a.value(), f), {a}, [](Node& self) {
        const Matrix& y = self.value;
        push(self, 0, self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
    });
}

Tensor Tape::tanh(const Tensor& a) {
    return record("tanh", unary_map(a.value(), [](double v) { return std::tanh(v); }), {a},
                  [](Node& self) {
                      const Matrix& y = self.value;
                      push(self, 0, self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
                  });
}

Tensor Tape::cos(const Tensor& a) {
    return record("cos", unary_map(a.value(), [](double v) { return std::cos(v); }), {a},
                  [](Node& self) {
                      const Matrix& x = self.inputs[0]->value;
                      push(self, 0,
                           -self.grad.cwiseProduct(unary_map(x, [](double v) { return std::sin(v); })));
                  });
}

Tensor Tape::sin(const Tensor& a) {
    return record("sin", unary_map(a.value(), [](double v) { return std::sin(v); }), {a},
                  [](Node& self) {
                      const Matrix& x = self.inputs[0]->value;
                      push(self, 0,
                           self.grad.cwiseProduct(unary_map(x, [](double v) { return std::cos(v); })));
                  });
}

Tensor Tape::sqrt(const Tensor& a) {
    require((a.value().array() >= 0.0).all(), "sqrt", "negative input");
    return record("sqrt", a.value().cwiseSqrt(), {a}, [](Node& self) {
        push(self, 0, (self.grad.array() / (2.0 * self.value.array())).matrix());
    });
}

Tensor Tape::l2_normalize_rows(const Tensor& a) {
    Matrix out(a.rows(), a.cols());
    auto norms = std::make_shared<Eigen::VectorXd>(a.rows());
    for (Index r = 0; r < a.rows(); ++r) {
        const double n = a.value().row(r).norm();
        (*norms)(r) = n;
        if (n < 1e-12) {
            out.row(r).setZero();
            out(r, 0) = 1.0;
            ++guarded_;
        } else {
            out.row(r) = a.value().row(r) / n;
        }
    }
    return record("l2_normalize", std::move(out), {a}, [norms](Node& self) {
        const Matrix& y = self.value;
        Matrix g = Matrix::Zero(y.rows(), y.cols());
        for (Index r = 0; r < y.rows(); ++r) {
            const double n = (*norms)(r);
            if (n < 1e-12) continue;
            const double proj = y.row(r).dot(self.grad.row(r));
            g.row(r) = (self.grad.row(r) - proj * y.row(r)) / n;
        }
        push(self, 0, g);
    });
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
    require(!parts.empty(), "concat", "no inputs");
    const Index rows = parts[0].rows();
    Index cols = 0;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat", "row counts differ");
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return record("concat", std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                  [widths](Node& self) {
                      Index off = 0;
                      for (std::size_t i = 0; i < widths.size(); ++i) {
                          if (wants(self, i)) push(self, i, self.grad.middleCols(off, widths[i]));
                          off += widths[i];
                      }
                  });
}

Tensor Tape::slice_cols(const Tensor& a, Index begin, Index end) {
    require(0 <= begin && begin <= end && end <= a.cols(), "slice", "bad column range");
    return record("slice", a.value().middleCols(begin, end - begin), {a},
                  [begin, end](Node& self) {
                      Matrix g = Matrix::Zero(self.inputs[0]->value.rows(),
                                              self.inputs[0]->value.cols());
                      g.middleCols(begin, end - begin) = self.grad;
                      push(self, 0, g);
                  });
}

Tensor Tape::take_rows(const Tensor& a, std::vector<Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < a.rows(), "take_rows", "row index out of range");
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    return record("take_rows", std::move(out), {a}, [rows = std::move(rows)](Node& self) {
        Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
        push(self, 0, g);
    });
}

Tensor Tape::take_cols(const Tensor& a, std::vector<Index> cols) {
    Matrix out(a.rows(), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        require(cols[i] >= 0 && cols[i] < a.cols(), "take_cols", "column index out of range");
        out.col(static_cast<Index>(i)) = a.value().col(cols[i]);
    }
    return record("take_cols", std::move(out), {a}, [cols = std::move(cols)](Node& self) {
        Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
        for (std::size_t i = 0; i < cols.size(); ++i) g.col(cols[i]) += self.grad.col(static_cast<Index>(i));
        push(self, 0, g);
    });
}

Tensor Tape::stack_sequence(std::span<const Tensor> steps) {
    require(!steps.empty(), "stack_sequence", "empty sequence");
    const Index batch = steps[0].rows();
    const Index width = steps[0].cols();
    const auto len = static_cast<Index>(steps.size());
    Matrix out(batch * len, width);
    for (Index t = 0; t < len; ++t) {
        const auto& s = steps[static_cast<std::size_t>(t)];
        require(s.rows() == batch && s.cols() == width, "stack_sequence", "step shapes differ");
        for (Index b = 0; b < batch; ++b) out.row(b * len + t) = s.value().row(b);
    }
    return record("stack_sequence", std::move(out),
                  std::vector<Tensor>(steps.begin(), steps.end()), [batch, len](Node& self) {
                      for (Index t = 0; t < len; ++t) {
                          if (!wants(self, static_cast<std::size_t>(t))) continue;
                          Matrix g(batch, self.grad.cols());
                          for (Index b = 0; b < batch; ++b) g.row(b) = self.grad.row(b * len + t);
                          push(self, static_cast<std::size_t>(t), g);
                      }
                  });
}

Tensor Tape::broadcast_rows(const Tensor& row, Index count) {
    require(row.rows() == 1, "broadcast_rows", "input must be a single row");
    Matrix out = row.value().replicate(count, 1);
    return record("broadcast_rows", std::move(out), {row},
                  [](Node& self) { push(self, 0, self.grad.colwise().sum()); });
}

Tensor Tape::sum(const Tensor& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return record("sum", std::move(out), {a}, [](Node& self) {
        const auto& in = self.inputs[0]->value;
        push(self, 0, Matrix::Constant(in.rows(), in.cols(), self.grad(0, 0)));
    });
}

Tensor Tape::row_sum(const Tensor& a) {
    Matrix out = a.value().rowwise().sum();
    return record("row_sum", std::move(out), {a}, [](Node& self) {
        const auto& in = self.inputs[0]->value;
        push(self, 0, self.grad.col(0).replicate(1, in.cols()));
    });
}

Tensor Tape::complex_mul(const Tensor& a, const Tensor& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols() && a.cols() % 2 == 0, "complex_mul",
            "paired operands must share an even width");
    const Index n = a.cols() / 2;
    const auto& av = a.value();
    const auto& bv = b.value();
    Matrix out(a.rows(), a.cols());
    out.leftCols(n) = av.leftCols(n).cwiseProduct(bv.leftCols(n)) -
                      av.rightCols(n).cwiseProduct(bv.rightCols(n));
    out.rightCols(n) = av.leftCols(n).cwiseProduct(bv.rightCols(n)) +
                       av.rightCols(n).cwiseProduct(bv.leftCols(n));
    return record("complex_mul", std::move(out), {a, b}, [n](Node& self) {
        const auto gr = self.grad.leftCols(n);
        const auto gi = self.grad.rightCols(n);
        for (std::size_t s = 0; s < 2; ++s) {
            if (!wants(self, s)) continue;
            const Matrix& o = self.inputs[1 - s]->value;
            Matrix g(o.rows(), o.cols());
            g.leftCols(n) = gr.cwiseProduct(o.leftCols(n)) + gi.cwiseProduct(o.rightCols(n));
            g.rightCols(n) = -gr.cwiseProduct(o.rightCols(n)) + gi.cwiseProduct(o.leftCols(n));
            push(self, s, g);
        }
    });
}

Tensor Tape::complex_inner(const Tensor& q, const Tensor& u) {
    require(q.rows() == u.rows() && q.cols() == u.cols() && q.cols() % 2 == 0, "complex_inner",
            "paired operands must share an even width");
    const Index n = q.cols() / 2;
    const auto& qv = q.value();
    const auto& uv = u.value();
    Matrix out(q.rows(), 2);
    out.col(0) = (qv.leftCols(n).cwiseProduct(uv.leftCols(n)) +
                  qv.rightCols(n).cwiseProduct(uv.rightCols(n)))
                     .rowwise()
                     .sum();
    out.col(1) = (qv.leftCols(n).cwiseProduct(uv.rightCols(n)) -
                  qv.rightCols(n).cwiseProduct(uv.leftCols(n)))
                     .rowwise()
                     .sum();
    return record("complex_inner", std::move(out), {q, u}, [n](Node& self) {
        const Matrix& qv = self.inputs[0]->value;
        const Matrix& uv = self.inputs[1]->value;
        const auto dsr = self.grad.col(0);
        const auto dsi = self.grad.col(1);
        if (wants(self, 0)) {
            Matrix g(qv.rows(), qv.cols());
            g.leftCols(n) = uv.leftCols(n).array().colwise() * dsr.array() +
                            uv.rightCols(n).array().colwise() * dsi.array();
            g.rightCols(n) = uv.rightCols(n).array().colwise() * dsr.array() -
                             uv.leftCols(n).array().colwise() * dsi.array();
            push(self, 0, g);
        }
        if (wants(self, 1)) {
            Matrix g(uv.rows(), uv.cols());
            g.leftCols(n) = qv.leftCols(n).array().colwise() * dsr.array() -
                            qv.rightCols(n).array().colwise() * dsi.array();
            g.rightCols(n) = qv.rightCols(n).array().colwise() * dsr.array() +
                             qv.leftCols(n).array().colwise() * dsi.array();
            push(self, 1, g);
        }
    });
}

Tensor Tape::abs2(const Tensor& z) {
    require(z.cols() % 2 == 0, "abs2", "paired operand must have even width");
    const Index n = z.cols() / 2;
    Matrix out = z.value().leftCols(n).cwiseAbs2() + z.value().rightCols(n).cwiseAbs2();
    return record("abs2", std::move(out), {z}, [n](Node& self) {
        const Matrix& zv = self.inputs[0]->value;
        Matrix g(zv.rows(), zv.cols());
        g.leftCols(n) = 2.0 * self.grad.cwiseProduct(zv.leftCols(n));
        g.rightCols(n) = 2.0 * self.grad.cwiseProduct(zv.rightCols(n));
        push(self, 0, g);
    });
}

Tensor Tape::polarize(const Tensor& angles, const Tensor& w) {
    const Index n = angles.cols();
    require(w.rows() == angles.rows() && w.cols() == 2 * n, "polarize",
            "beamformer must be B x 2N for B x N angles");
    const auto& th = angles.value();
    const auto& wv = w.value();
    Matrix out(th.rows(), 4 * n);
    for (Index b = 0; b < th.rows(); ++b) {
        for (Index k = 0; k < n; ++k) {
            const double c = std::cos(th(b, k));
            const double s = std::sin(th(b, k));
            out(b, 2 * k) = c * wv(b, k);
            out(b, 2 * k + 1) = s * wv(b, k);
            out(b, 2 * n + 2 * k) = c * wv(b, n + k);
            out(b, 2 * n + 2 * k + 1) = s * wv(b, n + k);
        }
    }
    return record("polarize", std::move(out), {angles, w}, [n](Node& self) {
        const Matrix& th = self.inputs[0]->value;
        const Matrix& wv = self.inputs[1]->value;
        const Matrix& g = self.grad;
        Matrix gth(th.rows(), n);
        Matrix gw(wv.rows(), 2 * n);
        for (Index b = 0; b < th.rows(); ++b) {
            for (Index k = 0; k < n; ++k) {
                const double c = std::cos(th(b, k));
                const double s = std::sin(th(b, k));
                const double wr = wv(b, k);
                const double wi = wv(b, n + k);
                const double gh_r = g(b, 2 * k), gv_r = g(b, 2 * k + 1);
                const double gh_i = g(b, 2 * n + 2 * k), gv_i = g(b, 2 * n + 2 * k + 1);
                gth(b, k) = -s * (gh_r * wr + gh_i * wi) + c * (gv_r * wr + gv_i * wi);
                gw(b, k) = c * gh_r + s * gv_r;
                gw(b, n + k) = c * gh_i + s * gv_i;
            }
        }
        if (wants(self, 0)) push(self, 0, gth);
        if (wants(self, 1)) push(self, 1, gw);
    });
}

namespace {

CVector unpair_row(const Matrix& m, Index r) {
    const Index n = m.cols() / 2;
    CVector v(n);
    for (Index k = 0; k < n; ++k) v(k) = cplx(m(r, k), m(r, n + k));
    return v;
}

void pair_into(Matrix& m, Index r, const CVector& v) {
    const Index n = v.size();
    for (Index k = 0; k < n; ++k) {
        m(r, k) = v(k).real();
        m(r, n + k) = v(k).imag();
    }
}

}  // namespace

Tensor Tape::channel_apply(const Tensor& v, std::shared_ptr<const std::vector<CMatrix>> matrices,
                           bool adjoint) {
    require(matrices && static_cast<Index>(matrices->size()) == v.rows(), "channel_apply",
            "one matrix per batch row required");
    const Index in_dim = v.cols() / 2;
    const auto& first = matrices->front();
    const Index expected_in = adjoint ? first.rows() : first.cols();
    const Index out_dim = adjoint ? first.cols() : first.rows();
    require(v.cols() % 2 == 0 && in_dim == expected_in, "channel_apply",
            "vector length does not match the channel");
    Matrix out(v.rows(), 2 * out_dim);
    for (Index b = 0; b < v.rows(); ++b) {
        const CMatrix& m = (*matrices)[static_cast<std::size_t>(b)];
        const CVector x = unpair_row(v.value(), b);
        pair_into(out, b, adjoint ? CVector(m.adjoint() * x) : CVector(m * x));
    }
    return record("channel_apply", std::move(out), {v}, [matrices, adjoint](Node& self) {
        const Matrix& in = self.inputs[0]->value;
        Matrix g(in.rows(), in.cols());
        for (Index b = 0; b < in.rows(); ++b) {
            const CMatrix& m = (*matrices)[static_cast<std::size_t>(b)];
            const CVector gu = unpair_row(self.grad, b);
            pair_into(g, b, adjoint ? CVector(m * gu) : CVector(m.adjoint() * gu));
        }
        push(self, 0, g);
    });
}

Tensor Tape::attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionSpec& spec, std::vector<Matrix>* scores) {
    const Index len = spec.length;
    const Index kvl = spec.kv_length > 0 ? spec.kv_length : len;
    const Index heads = spec.heads;
    const Index dh = spec.head_dim;
    require(q.rows() == spec.batch * len && q.cols() == heads * dh, "attention",
            "query shape " + dims(q.value()) + " does not match AttentionSpec");
    require(kvl >= len, "attention", "kv_length must be at least the query length");
    require(k.rows() == spec.batch * kvl && k.cols() == q.cols() && v.rows() == k.rows() &&
                v.cols() == q.cols(),
            "attention", "key/value shapes do not match AttentionSpec");
    require(spec.scale > 0.0, "attention", "scale must be positive");

    auto probs = std::make_shared<std::vector<Matrix>>(
        static_cast<std::size_t>(spec.batch * heads));
    Matrix out(q.rows(), q.cols());
    const double inv_scale = 1.0 / spec.scale;
    const Index offset = kvl - len;
    for (Index b = 0; b < spec.batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
            const auto qb = q.value().block(b * len, h * dh, len, dh);
            const auto kb = k.value().block(b * kvl, h * dh, kvl, dh);
            const auto vb = v.value().block(b * kvl, h * dh, kvl, dh);
            Matrix s = (qb * kb.transpose()) * inv_scale;
            Matrix p = Matrix::Zero(len, kvl);
            for (Index i = 0; i < len; ++i) {
                const Index allowed = spec.causal ? offset + i + 1 : kvl;
                const double m = s.row(i).head(allowed).maxCoeff();
                p.row(i).head(allowed) = (s.row(i).head(allowed).array() - m).exp();
                p.row(i).head(allowed) /= p.row(i).head(allowed).sum();
            }
            out.block(b * len, h * dh, len, dh) = p * vb;
            (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(p);
        }
    }
    if (scores) *scores = *probs;
    return record("attention", std::move(out), {q, k, v},
                  [spec, probs, inv_scale, kvl](Node& self) {
        const Index len = spec.length;
        const Index dh = spec.head_dim;
        const Matrix& qv = self.inputs[0]->value;
        const Matrix& kv = self.inputs[1]->value;
        const Matrix& vv = self.inputs[2]->value;
        Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix gv = Matrix::Zero(vv.rows(), vv.cols());
        for (Index b = 0; b < spec.batch; ++b) {
            for (Index h = 0; h < spec.heads; ++h) {
                const Matrix& p = (*probs)[static_cast<std::size_t>(b * spec.heads + h)];
                const auto go = self.grad.block(b * len, h * dh, len, dh);
                const auto qb = qv.block(b * len, h * dh, len, dh);
                const auto kb = kv.block(b * kvl, h * dh, kvl, dh);
                const auto vb = vv.block(b * kvl, h * dh, kvl, dh);
                gv.block(b * kvl, h * dh, kvl, dh) = p.transpose() * go;
                Matrix dp = go * vb.transpose();
                const Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
                dp.colwise() -= dots;
                const Matrix ds = p.cwiseProduct(dp) * inv_scale;
                gq.block(b * len, h * dh, len, dh) = ds * kb;
                gk.block(b * kvl, h * dh, kvl, dh) = ds.transpose() * qb;
            }
        }
        if (wants(self, 0)) push(self, 0, gq);
        if (wants(self, 1)) push(self, 1, gk);
        if (wants(self, 2)) push(self, 2, gv);
    });
}

// ---------------------------------------------------------------------------
// Generic dispatch

Tensor Tape::apply(Primitive kind, std::span<const Tensor> in, const Attrs& attrs) {
    auto need = [&](std::size_t n) {
        if (in.size() != n)
            throw InvalidArgument(std::string(primitive_name(kind)) + ": expected " +
                                  std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    };
    switch (kind) {
        case Primitive::matmul: need(2); return matmul(in[0], in[1]);
        case Primitive::affine: need(3); return affine(in[0], in[1], in[2]);
        case Primitive::add: need(2); return add(in[0], in[1]);
        case Primitive::sub: need(2); return sub(in[0], in[1]);
        case Primitive::mul: need(2); return mul(in[0], in[1]);
        case Primitive::scale: need(1); return scale(in[0], attrs.scalar);
        case Primitive::softmax_rows: need(1); return softmax_rows(in[0]);
        case Primitive::layer_norm:
            need(3);
            return layer_norm(in[0], in[1], in[2], attrs.scalar > 0.0 ? attrs.scalar : 1e-5);
        case Primitive::relu: need(1); return relu(in[0]);
        case Primitive::sigmoid: need(1); return sigmoid(in[0]);
        case Primitive::tanh: need(1); return tanh(in[0]);
        case Primitive::cos: need(1); return cos(in[0]);
        case Primitive::sin: need(1); return sin(in[0]);
        case Primitive::sqrt: need(1); return sqrt(in[0]);
        case Primitive::l2_normalize_rows: need(1); return l2_normalize_rows(in[0]);
        case Primitive::concat_cols: return concat_cols(in);
        case Primitive::slice_cols: need(1); return slice_cols(in[0], attrs.begin, attrs.end);
        case Primitive::take_rows: need(1); return take_rows(in[0], attrs.indices);
        case Primitive::take_cols: need(1); return take_cols(in[0], attrs.indices);
        case Primitive::stack_sequence: return stack_sequence(in);
        case Primitive::broadcast_rows: need(1); return broadcast_rows(in[0], attrs.count);
        case Primitive::sum: need(1); return sum(in[0]);
        case Primitive::row_sum: need(1); return row_sum(in[0]);
        case Primitive::complex_mul: need(2); return complex_mul(in[0], in[1]);
        case Primitive::complex_inner: need(2); return complex_inner(in[0], in[1]);
        case Primitive::abs2: need(1); return abs2(in[0]);
        case Primitive::polarize: need(2); return polarize(in[0], in[1]);
        case Primitive::channel_apply: need(1); return channel_apply(in[0], attrs.matrices, attrs.adjoint);
        case Primitive::attention: need(3); return attention(in[0], in[1], in[2], attrs.attention);
    }
    throw InvalidArgument("unknown primitive");
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDifferenceReport finite_difference_check(const ScalarFunction& f, const Matrix& x, double h,
                                               int probes, Rng& rng) {
    return finite_difference_check(f, x, h, probes, rng, [](Index) { return true; });
}

FiniteDifferenceReport finite_difference_check(const ScalarFunction& f, const Matrix& x, double h,
                                               int probes, Rng& rng,
                                               const std::function<bool(Index)>& admissible) {
    if (!(h > 0.0)) throw InvalidArgument("finite_difference_check: h must be > 0");
    if (probes < 1) throw InvalidArgument("finite_difference_check: probes must be >= 1");

    Tape tape;
    Tensor leaf = Tensor::parameter(x);
    Tensor loss = f(tape, leaf);
    tape.backward(loss);
    const Matrix analytic = leaf.grad_or_zero();

    std::vector<Index> candidates;
    for (Index i = 0; i < x.size(); ++i)
        if (admissible(i)) candidates.push_back(i);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (static_cast<Index>(candidates.size()) > probes) candidates.resize(static_cast<std::size_t>(probes));

    auto evaluate = [&](const Matrix& at) {
        Tape quiet(false);
        return f(quiet, Tensor::constant(at)).item();
    };

    FiniteDifferenceReport report;
    for (Index flat : candidates) {
        Matrix plus = x;
        Matrix minus = x;
        plus.data()[flat] += h;
        minus.data()[flat] -= h;
        const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h);
        const double a = analytic.data()[flat];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
        report.probed.push_back(flat);
    }
    return report;
}

}  // namespace prba::ad
