#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace muqar {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Per-pass execution mode. Dropout draws from rng only in training mode;
// inference never touches it.
struct RunContext {
    bool training = false;
    Rng* rng = nullptr;
};

enum class Op {
    Leaf,
    Matmul,
    Conv1d,
    Embedding,
    Concat,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    SoftmaxXent,
    Dropout,
    Mean,
    L2Normalize,
    GlobalAvgPool,
    Slice,
    Reshape,
};
const char* op_name(Op op);

class Tensor;
using Var = std::shared_ptr<Tensor>;

// Dense row-major f64 tensor doubling as a node of the computation graph.
// Building an op eagerly computes its forward value and records the inputs
// plus a backward closure; backward() walks the DAG once in reverse
// topological order and accumulates gradients additively across fan-out.
class Tensor {
public:
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily; same length as value when present
    bool requires_grad = false;

    Op op = Op::Leaf;
    std::string name;  // set for named parameters, used in diagnostics
    std::vector<Var> inputs;
    std::function<void(Tensor&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    // Rows of the trailing axis: numel / shape.back().
    std::int64_t rows() const;

    void ensure_grad();
    void zero_grad();
    void check_finite(const char* where) const;
};

// ---- leaf constructors ----------------------------------------------------

Var constant(Shape shape, std::vector<double> data);
Var constant_scalar(double v);
Var zeros(Shape shape);
Var full(Shape shape, double v);
// Trainable leaf (requires_grad = true).
Var parameter(std::string name, Shape shape, std::vector<double> data);

// ---- initializers ---------------------------------------------------------

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
std::vector<double> glorot_uniform(int fan_in, int fan_out, std::int64_t count, Rng& rng);
// Uniform in +-1/sqrt(hidden); used for recurrent matrices.
std::vector<double> recurrent_uniform(int hidden, std::int64_t count, Rng& rng);

// ---- ops ------------------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);
// Temporal convolution, same padding, stride 1.
// x: [b,n,cin], w: [kw,cin,cout], bias: [cout] -> [b,n,cout]
Var conv1d(const Var& x, const Var& w, const Var& bias);
// Row lookup with concatenation: table [v,d], indices len b*len -> [b, len*d].
// Gradient is never accumulated into rows < frozen_rows (reserved PAD rows).
Var embedding(const Var& table, const std::vector<int>& indices, int batch, int len,
              int frozen_rows = 0);
// Concatenate along the trailing axis. All inputs share leading dims.
Var concat(const std::vector<Var>& parts);
// Elementwise; b may be same-shape, a trailing-suffix shape (broadcast over
// leading dims), or a scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
// Softmax over the trailing axis; each row sums to 1.
Var softmax(const Var& a);
// Mean of -log softmax(logits)[label] over rows; labels in [0, classes).
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
// Inverted dropout: train mode zeroes each element with prob rate and scales
// survivors by 1/(1-rate); inference mode is a pass-through of the input node.
Var dropout(const Var& a, double rate, bool training, Rng& rng);
// Mean over all elements -> scalar [1].
Var mean(const Var& a);
// Normalize each trailing-axis row to unit Euclidean norm; all-zero rows pass
// through unchanged.
Var l2_normalize(const Var& a);
// [b,n,c] -> [b,c] (mean over axis 1), or [n,c] -> [c] (mean over axis 0).
Var global_avg_pool(const Var& a);
Var slice(const Var& a, int axis, int start, int len);
Var reshape(const Var& a, Shape shape);

// slice + reshape: x [b,n,c], returns [b,c] at time t.
Var time_step(const Var& x, int t);
// mean((a-b)^2) over every element -> scalar [1].
Var mse_loss(const Var& pred, const Var& target);

// ---- autodiff -------------------------------------------------------------

// Reverse-mode pass from a scalar loss. Visits each node exactly once.
void backward(const Var& loss);

// Central-difference gradient oracle. build must construct a scalar loss from
// the given leaves; eps is the probe step. Returns the max over all scalar
// parameters of |analytic - numeric| / max(|numeric|, 1e-8); any NaN on
// either side reports as +inf.
double grad_check(const std::function<Var(const std::vector<Var>&)>& build,
                  const std::vector<Var>& points, double eps);

// ---- parameter registry ---------------------------------------------------

// Flat registry of named trainable tensors; owns nothing beyond the shared
// handles. Serializes to a little-endian f64 stream plus a JSON manifest of
// (name, shape, byte offset).
class ParamStore {
public:
    Var add(const std::string& name, Shape shape, std::vector<double> data);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<Var>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::int64_t scalar_count() const;

    void zero_grads();
    // Deep copies of current values, index-aligned with all().
    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& snap);

    void save(const std::string& bin_path, const std::string& manifest_path) const;
    // Loads values into already-registered parameters; shapes must match.
    void load(const std::string& bin_path, const std::string& manifest_path);

private:
    std::vector<Var> params_;
};

}  // namespace muqar
