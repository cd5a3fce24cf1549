#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value is a 2-D real matrix; vectors are 1 x n rows and scalars 1 x 1.
// Batched code folds the batch into the row dimension. Complex quantities use
// the paired layout: a row of 2n reals holds n real parts followed by n
// imaginary parts.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prba/common.hpp"
#include "prba/random.hpp"

namespace prba::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node;

class Tensor {
public:
    Tensor() = default;

    // Leaf without gradient tracking.
    static Tensor constant(Matrix value);
    // Leaf whose gradient is accumulated by Tape::backward.
    static Tensor parameter(Matrix value);

    bool defined() const { return node_ != nullptr; }
    const Matrix& value() const;
    // Zero-shaped until a backward pass reaches this tensor.
    const Matrix& grad() const;
    Matrix grad_or_zero() const;
    bool requires_grad() const;

    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    std::vector<Index> shape() const { return {rows(), cols()}; }
    double item() const;

    void zero_grad();

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
    friend class Tape;
};

enum class Primitive {
    matmul,
    affine,
    add,
    sub,
    mul,
    scale,
    softmax_rows,
    layer_norm,
    relu,
    sigmoid,
    tanh,
    cos,
    sin,
    sqrt,
    l2_normalize_rows,
    concat_cols,
    slice_cols,
    take_rows,
    take_cols,
    stack_sequence,
    broadcast_rows,
    sum,
    row_sum,
    complex_mul,
    complex_inner,
    abs2,
    polarize,
    channel_apply,
    attention,
};

const char* primitive_name(Primitive kind);

struct AttentionSpec {
    Index batch = 1;
    Index length = 1;  // query rows per episode

    Index heads = 1;
    Index head_dim = 1;
    double scale = 1.0;  // scores are divided by this
    bool causal = true;
    Index kv_length = 0;  // key/value rows per episode; 0 means `length`
};

// Attributes for the generic Tape::apply entry point.
struct Attrs {
    double scalar = 0.0;
    Index begin = 0;
    Index end = 0;
    Index count = 0;
    std::vector<Index> indices;
    AttentionSpec attention;
    bool adjoint = false;
    std::shared_ptr<const std::vector<CMatrix>> matrices;
};

class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }
    // Number of l2_normalize rows that hit the zero-norm guard.
    std::size_t guarded_normalizations() const { return guarded_; }

    Tensor apply(Primitive kind, std::span<const Tensor> inputs, const Attrs& attrs = {});

    Tensor matmul(const Tensor& a, const Tensor& b);
    // x W + b, with b a 1 x n row broadcast over rows.
    Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
    // Same shapes, or b a 1 x n row broadcast over the rows of a.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double factor);
    Tensor softmax_rows(const Tensor& a);
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
    Tensor relu(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor tanh(const Tensor& a);
    Tensor cos(const Tensor& a);
    Tensor sin(const Tensor& a);
    Tensor sqrt(const Tensor& a);
    // Rows with norm below 1e-12 map to e_1 with zero gradient.
    Tensor l2_normalize_rows(const Tensor& a);
    Tensor concat_cols(std::span<const Tensor> parts);
    Tensor slice_cols(const Tensor& a, Index begin, Index end);
    Tensor take_rows(const Tensor& a, std::vector<Index> rows);
    Tensor take_cols(const Tensor& a, std::vector<Index> cols);
    // l tensors of shape B x d -> (B l) x d with row b*l + t = steps[t].row(b).
    Tensor stack_sequence(std::span<const Tensor> steps);
    Tensor broadcast_rows(const Tensor& row, Index count);
    Tensor sum(const Tensor& a);
    Tensor row_sum(const Tensor& a);
    // Paired-layout elementwise complex product.
    Tensor complex_mul(const Tensor& a, const Tensor& b);
    // Per row sum_i conj(q_i) u_i, output B x 2.
    Tensor complex_inner(const Tensor& q, const Tensor& u);
    // Paired B x 2n -> B x n squared magnitudes.
    Tensor abs2(const Tensor& z);
    // angles B x N, beamformer B x 2N (paired) -> P w, paired B x 4N with
    // entry 2k = cos(t_k) w_k and 2k+1 = sin(t_k) w_k.
    Tensor polarize(const Tensor& angles, const Tensor& w);
    // Row b: M_b v_b (or M_b^H v_b when adjoint), paired layout.
    Tensor channel_apply(const Tensor& v, std::shared_ptr<const std::vector<CMatrix>> matrices,
                         bool adjoint);
    // q: (B l) x (heads * head_dim), k and v: (B m) x (heads * head_dim) with
    // m = kv_length >= l; the queries are the last l of the m positions.
    // Output has the shape of q with the heads concatenated. When `scores` is
    // non-null it receives B * heads row-stochastic l x m matrices, index
    // b * heads + h.
    Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                     std::vector<Matrix>* scores = nullptr);

    // Reverse sweep from a 1 x 1 loss. Gradients accumulate additively into
    // every reachable tensor that requires grad.
    void backward(const Tensor& loss);
    void clear();

private:
    using BackwardFn = std::function<void(Node&)>;
    Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs, BackwardFn fn);

    bool recording_ = true;
    std::size_t guarded_ = 0;
    std::vector<std::shared_ptr<Node>> nodes_;
};

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void accumulate(const Matrix& g);
};

// f maps a leaf tensor to a scalar. Compares central differences with the
// reverse-mode gradient at `probes` random coordinates and returns the worst
// relative error, with denominator max(|analytic|, |numeric|, 1e-8).
using ScalarFunction = std::function<Tensor(Tape&, const Tensor&)>;

struct FiniteDifferenceReport {
    double max_relative_error = 0.0;
    std::vector<Index> probed;  // flat indices
};

FiniteDifferenceReport finite_difference_check(const ScalarFunction& f, const Matrix& x, double h,
                                               int probes, Rng& rng);

// As above but only coordinates accepted by `admissible` are probed (e.g. to
// keep away from ReLU kinks).
FiniteDifferenceReport finite_difference_check(const ScalarFunction& f, const Matrix& x, double h,
                                               int probes, Rng& rng,
                                               const std::function<bool(Index)>& admissible);

}  // namespace prba::ad
