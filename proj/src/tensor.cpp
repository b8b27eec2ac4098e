#include "muqar/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace muqar {

static_assert(std::endian::native == std::endian::little,
              "parameter dumps are little-endian; big-endian hosts are unsupported");

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Matmul: return "matmul";
        case Op::Conv1d: return "conv1d";
        case Op::Embedding: return "embedding";
        case Op::Concat: return "concat";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Softmax: return "softmax";
        case Op::SoftmaxXent: return "softmax_cross_entropy";
        case Op::Dropout: return "dropout";
        case Op::Mean: return "mean";
        case Op::L2Normalize: return "l2_normalize";
        case Op::GlobalAvgPool: return "global_avg_pool";
        case Op::Slice: return "slice";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(Op op, const std::string& msg) {
    throw std::runtime_error(std::string(op_name(op)) + ": " + msg);
}

void check_shape_positive(Op op, const Shape& s) {
    if (s.empty()) fail(op, "empty shape");
    for (int d : s) {
        if (d <= 0) fail(op, "non-positive dimension in shape " + shape_str(s));
    }
}

Var make_node(Op op, Shape shape, std::vector<Var> inputs) {
    check_shape_positive(op, shape);
    auto n = std::make_shared<Tensor>();
    n->op = op;
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), 0.0);
    n->inputs = std::move(inputs);
    for (const Var& in : n->inputs) {
        if (!in) fail(op, "null input");
        if (in->requires_grad) n->requires_grad = true;
    }
    return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// b broadcasts onto a when b's shape is a trailing suffix of a's (or scalar).
bool suffix_shape(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.begin(), b.end(), a.end() - b.size());
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::int64_t Tensor::rows() const {
    if (shape.empty()) return 0;
    return numel() / shape.back();
}

void Tensor::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::check_finite(const char* where) const {
    for (double v : value) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(where) + ": non-finite value in " +
                                     (name.empty() ? op_name(op) : name));
        }
    }
}

// ---- leaf constructors ----------------------------------------------------

Var constant(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::runtime_error("constant: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
    }
    auto n = make_node(Op::Leaf, std::move(shape), {});
    n->value = std::move(data);
    return n;
}

Var constant_scalar(double v) { return constant({1}, {v}); }

Var zeros(Shape shape) {
    auto n = make_node(Op::Leaf, std::move(shape), {});
    return n;
}

Var full(Shape shape, double v) {
    auto n = make_node(Op::Leaf, std::move(shape), {});
    std::fill(n->value.begin(), n->value.end(), v);
    return n;
}

Var parameter(std::string name, Shape shape, std::vector<double> data) {
    Var n = constant(std::move(shape), std::move(data));
    n->name = std::move(name);
    n->requires_grad = true;
    return n;
}

// ---- initializers ----------------------------------------------------------

std::vector<double> glorot_uniform(int fan_in, int fan_out, std::int64_t count, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> out(count);
    for (double& v : out) v = dist(rng);
    return out;
}

std::vector<double> recurrent_uniform(int hidden, std::int64_t count, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> out(count);
    for (double& v : out) v = dist(rng);
    return out;
}

// ---- ops --------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a->rank() != 2 || b->rank() != 2) {
        fail(Op::Matmul, "expects rank-2 operands, got " + shape_str(a->shape) + " and " +
                             shape_str(b->shape));
    }
    if (a->shape[1] != b->shape[0]) {
        fail(Op::Matmul,
             "inner dimensions differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
    }
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    Var out = make_node(Op::Matmul, {m, n}, {a, b});
    ConstMatMap A(a->value.data(), m, k), B(b->value.data(), k, n);
    MatMap C(out->value.data(), m, n);
    C.noalias() = A * B;
    out->backward_fn = [m, k, n](Tensor& self) {
        Var a_in = self.inputs[0], b_in = self.inputs[1];
        ConstMatMap dC(self.grad.data(), m, n);
        if (a_in->requires_grad) {
            a_in->ensure_grad();
            ConstMatMap B(b_in->value.data(), k, n);
            MatMap dA(a_in->grad.data(), m, k);
            dA.noalias() += dC * B.transpose();
        }
        if (b_in->requires_grad) {
            b_in->ensure_grad();
            ConstMatMap A(a_in->value.data(), m, k);
            MatMap dB(b_in->grad.data(), k, n);
            dB.noalias() += A.transpose() * dC;
        }
    };
    return out;
}

Var conv1d(const Var& x, const Var& w, const Var& bias) {
    if (x->rank() != 3) fail(Op::Conv1d, "input must be [batch,time,channels], got " + shape_str(x->shape));
    if (w->rank() != 3) fail(Op::Conv1d, "kernel must be [width,cin,cout], got " + shape_str(w->shape));
    const int b = x->shape[0], n = x->shape[1], cin = x->shape[2];
    const int kw = w->shape[0], cout = w->shape[2];
    if (w->shape[1] != cin) {
        fail(Op::Conv1d, "kernel cin mismatch: input " + shape_str(x->shape) + " vs kernel " +
                             shape_str(w->shape));
    }
    if (kw % 2 == 0) fail(Op::Conv1d, "kernel width must be odd for same padding");
    if (bias->rank() != 1 || bias->shape[0] != cout) {
        fail(Op::Conv1d, "bias must be [cout]=" + std::to_string(cout) + ", got " + shape_str(bias->shape));
    }
    const int pad = kw / 2;

    // im2col: rows = b*n, cols = kw*cin; zero-padded outside the window.
    auto col = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(b) * n * kw * cin, 0.0);
    for (int i = 0; i < b; ++i) {
        for (int t = 0; t < n; ++t) {
            double* row = col->data() + (static_cast<std::int64_t>(i) * n + t) * kw * cin;
            for (int dt = 0; dt < kw; ++dt) {
                const int src = t + dt - pad;
                if (src < 0 || src >= n) continue;
                const double* xp = x->value.data() + (static_cast<std::int64_t>(i) * n + src) * cin;
                std::memcpy(row + dt * cin, xp, sizeof(double) * cin);
            }
        }
    }

    Var out = make_node(Op::Conv1d, {b, n, cout}, {x, w, bias});
    ConstMatMap Col(col->data(), static_cast<std::int64_t>(b) * n, kw * cin);
    ConstMatMap W(w->value.data(), kw * cin, cout);
    MatMap Y(out->value.data(), static_cast<std::int64_t>(b) * n, cout);
    Y.noalias() = Col * W;
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->value.data(), cout);

    out->backward_fn = [b, n, cin, kw, cout, pad, col](Tensor& self) {
        Var x_in = self.inputs[0], w_in = self.inputs[1], b_in = self.inputs[2];
        ConstMatMap dY(self.grad.data(), static_cast<std::int64_t>(b) * n, cout);
        if (w_in->requires_grad) {
            w_in->ensure_grad();
            ConstMatMap Col(col->data(), static_cast<std::int64_t>(b) * n, kw * cin);
            MatMap dW(w_in->grad.data(), kw * cin, cout);
            dW.noalias() += Col.transpose() * dY;
        }
        if (b_in->requires_grad) {
            b_in->ensure_grad();
            Eigen::Map<Eigen::RowVectorXd> db(b_in->grad.data(), cout);
            db += dY.colwise().sum();
        }
        if (x_in->requires_grad) {
            x_in->ensure_grad();
            ConstMatMap W(w_in->value.data(), kw * cin, cout);
            RowMat dCol = dY * W.transpose();  // [b*n, kw*cin]
            for (int i = 0; i < b; ++i) {
                for (int t = 0; t < n; ++t) {
                    const double* row = dCol.data() + (static_cast<std::int64_t>(i) * n + t) * kw * cin;
                    for (int dt = 0; dt < kw; ++dt) {
                        const int src = t + dt - pad;
                        if (src < 0 || src >= n) continue;
                        double* gx = x_in->grad.data() + (static_cast<std::int64_t>(i) * n + src) * cin;
                        const double* gr = row + dt * cin;
                        for (int c = 0; c < cin; ++c) gx[c] += gr[c];
                    }
                }
            }
        }
    };
    return out;
}

Var embedding(const Var& table, const std::vector<int>& indices, int batch, int len,
              int frozen_rows) {
    if (table->rank() != 2) fail(Op::Embedding, "table must be rank-2, got " + shape_str(table->shape));
    if (static_cast<std::int64_t>(indices.size()) != static_cast<std::int64_t>(batch) * len) {
        fail(Op::Embedding, "expected " + std::to_string(batch * len) + " indices, got " +
                                std::to_string(indices.size()));
    }
    const int v = table->shape[0], d = table->shape[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= v) {
            fail(Op::Embedding, "index " + std::to_string(idx) + " out of range for table " +
                                    shape_str(table->shape));
        }
    }
    Var out = make_node(Op::Embedding, {batch, len * d}, {table});
    for (int i = 0; i < batch; ++i) {
        for (int l = 0; l < len; ++l) {
            const double* src = table->value.data() + static_cast<std::int64_t>(indices[i * len + l]) * d;
            double* dst = out->value.data() + (static_cast<std::int64_t>(i) * len + l) * d;
            std::memcpy(dst, src, sizeof(double) * d);
        }
    }
    auto idx_copy = std::make_shared<std::vector<int>>(indices);
    out->backward_fn = [batch, len, d, frozen_rows, idx_copy](Tensor& self) {
        Var table_in = self.inputs[0];
        if (!table_in->requires_grad) return;
        table_in->ensure_grad();
        for (int i = 0; i < batch; ++i) {
            for (int l = 0; l < len; ++l) {
                const int idx = (*idx_copy)[i * len + l];
                if (idx < frozen_rows) continue;
                double* dst = table_in->grad.data() + static_cast<std::int64_t>(idx) * d;
                const double* src = self.grad.data() + (static_cast<std::int64_t>(i) * len + l) * d;
                for (int c = 0; c < d; ++c) dst[c] += src[c];
            }
        }
    };
    return out;
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) fail(Op::Concat, "no inputs");
    const Shape& head = parts[0]->shape;
    Shape out_shape = head;
    std::int64_t rows = parts[0]->rows();
    int total_last = 0;
    for (const Var& p : parts) {
        if (p->rank() != static_cast<int>(head.size()) || p->rows() != rows ||
            !std::equal(head.begin(), head.end() - 1, p->shape.begin())) {
            fail(Op::Concat, "leading dims differ: " + shape_str(head) + " vs " + shape_str(p->shape));
        }
        total_last += p->shape.back();
    }
    out_shape.back() = total_last;
    Var out = make_node(Op::Concat, out_shape, parts);
    std::int64_t off = 0;
    for (const Var& p : parts) {
        const int w = p->shape.back();
        for (std::int64_t r = 0; r < rows; ++r) {
            std::memcpy(out->value.data() + r * total_last + off, p->value.data() + r * w,
                        sizeof(double) * w);
        }
        off += w;
    }
    out->backward_fn = [rows, total_last](Tensor& self) {
        std::int64_t off = 0;
        for (Var& p : self.inputs) {
            const int w = p->shape.back();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* src = self.grad.data() + r * total_last + off;
                    double* dst = p->grad.data() + r * w;
                    for (int c = 0; c < w; ++c) dst[c] += src[c];
                }
            }
            off += w;
        }
    };
    return out;
}

namespace {

Var binary_elementwise(Op op, const Var& a, const Var& b) {
    const bool bc = !same_shape(a->shape, b->shape);
    if (bc && !suffix_shape(a->shape, b->shape)) {
        fail(op, "shapes " + shape_str(a->shape) + " and " + shape_str(b->shape) +
                     " are neither equal nor suffix-broadcastable");
    }
    Var out = make_node(op, a->shape, {a, b});
    const std::int64_t n = a->numel(), m = b->numel();
    const double* av = a->value.data();
    const double* bv = b->value.data();
    double* ov = out->value.data();
    // Broadcast index: b repeats every m elements (m == n when shapes match).
    switch (op) {
        case Op::Add:
            if (m == n) {
                ArrMap(ov, n) = ConstArrMap(av, n) + ConstArrMap(bv, n);
            } else {
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % m];
            }
            break;
        case Op::Sub:
            if (m == n) {
                ArrMap(ov, n) = ConstArrMap(av, n) - ConstArrMap(bv, n);
            } else {
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i % m];
            }
            break;
        case Op::Mul:
            if (m == n) {
                ArrMap(ov, n) = ConstArrMap(av, n) * ConstArrMap(bv, n);
            } else {
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i % m];
            }
            break;
        default:
            fail(op, "not elementwise");
    }
    out->backward_fn = [op, n, m](Tensor& self) {
        Var a_in = self.inputs[0], b_in = self.inputs[1];
        const double* g = self.grad.data();
        if (a_in->requires_grad) {
            a_in->ensure_grad();
            double* da = a_in->grad.data();
            const double* bv = b_in->value.data();
            switch (op) {
                case Op::Add:
                case Op::Sub:
                    ArrMap(da, n) += ConstArrMap(g, n);
                    break;
                case Op::Mul:
                    if (m == n) {
                        ArrMap(da, n) += ConstArrMap(g, n) * ConstArrMap(bv, n);
                    } else {
                        for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * bv[i % m];
                    }
                    break;
                default:
                    break;
            }
        }
        if (b_in->requires_grad) {
            b_in->ensure_grad();
            double* db = b_in->grad.data();
            const double* av = a_in->value.data();
            switch (op) {
                case Op::Add:
                    if (m == n) {
                        ArrMap(db, n) += ConstArrMap(g, n);
                    } else {
                        for (std::int64_t i = 0; i < n; ++i) db[i % m] += g[i];
                    }
                    break;
                case Op::Sub:
                    if (m == n) {
                        ArrMap(db, n) -= ConstArrMap(g, n);
                    } else {
                        for (std::int64_t i = 0; i < n; ++i) db[i % m] -= g[i];
                    }
                    break;
                case Op::Mul:
                    if (m == n) {
                        ArrMap(db, n) += ConstArrMap(g, n) * ConstArrMap(av, n);
                    } else {
                        for (std::int64_t i = 0; i < n; ++i) db[i % m] += g[i] * av[i];
                    }
                    break;
                default:
                    break;
            }
        }
    };
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary_elementwise(Op::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary_elementwise(Op::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary_elementwise(Op::Mul, a, b); }

Var scale(const Var& a, double c) {
    Var out = make_node(Op::Scale, a->shape, {a});
    ConstArrMap av(a->value.data(), a->numel());
    ArrMap(out->value.data(), out->numel()) = av * c;
    out->backward_fn = [c](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        ArrMap(a_in->grad.data(), a_in->numel()) +=
            ConstArrMap(self.grad.data(), self.numel()) * c;
    };
    return out;
}

Var relu(const Var& a) {
    Var out = make_node(Op::Relu, a->shape, {a});
    const std::int64_t n = a->numel();
    for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    out->backward_fn = [n](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            if (a_in->value[i] > 0.0) a_in->grad[i] += self.grad[i];
        }
    };
    return out;
}

Var sigmoid(const Var& a) {
    Var out = make_node(Op::Sigmoid, a->shape, {a});
    const std::int64_t n = a->numel();
    for (std::int64_t i = 0; i < n; ++i) out->value[i] = sigmoid_scalar(a->value[i]);
    out->backward_fn = [n](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double y = self.value[i];
            a_in->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    };
    return out;
}

Var tanh_op(const Var& a) {
    Var out = make_node(Op::Tanh, a->shape, {a});
    const std::int64_t n = a->numel();
    for (std::int64_t i = 0; i < n; ++i) out->value[i] = std::tanh(a->value[i]);
    out->backward_fn = [n](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double y = self.value[i];
            a_in->grad[i] += self.grad[i] * (1.0 - y * y);
        }
    };
    return out;
}

Var softmax(const Var& a) {
    Var out = make_node(Op::Softmax, a->shape, {a});
    const int w = a->shape.back();
    const std::int64_t rows = a->rows();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * w;
        double* y = out->value.data() + r * w;
        double mx = x[0];
        for (int i = 1; i < w; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int i = 0; i < w; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        for (int i = 0; i < w; ++i) y[i] /= sum;
    }
    out->backward_fn = [w, rows](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * w;
            const double* g = self.grad.data() + r * w;
            double* dx = a_in->grad.data() + r * w;
            double dot = 0.0;
            for (int i = 0; i < w; ++i) dot += y[i] * g[i];
            for (int i = 0; i < w; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    };
    return out;
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    if (logits->rank() != 2) {
        fail(Op::SoftmaxXent, "logits must be [batch,classes], got " + shape_str(logits->shape));
    }
    const int b = logits->shape[0], c = logits->shape[1];
    if (static_cast<int>(labels.size()) != b) {
        fail(Op::SoftmaxXent, "expected " + std::to_string(b) + " labels, got " +
                                  std::to_string(labels.size()));
    }
    for (int l : labels) {
        if (l < 0 || l >= c) fail(Op::SoftmaxXent, "label " + std::to_string(l) + " out of range");
    }
    Var out = make_node(Op::SoftmaxXent, {1}, {logits});
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * c);
    double loss = 0.0;
    for (int r = 0; r < b; ++r) {
        const double* x = logits->value.data() + static_cast<std::int64_t>(r) * c;
        double* p = probs->data() + static_cast<std::int64_t>(r) * c;
        double mx = x[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int i = 0; i < c; ++i) {
            p[i] = std::exp(x[i] - mx);
            sum += p[i];
        }
        for (int i = 0; i < c; ++i) p[i] /= sum;
        loss -= std::log(std::max(p[labels[r]], 1e-300));
    }
    out->value[0] = loss / b;
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    out->backward_fn = [b, c, probs, labels_copy](Tensor& self) {
        Var in = self.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        const double g = self.grad[0] / b;
        for (int r = 0; r < b; ++r) {
            const double* p = probs->data() + static_cast<std::int64_t>(r) * c;
            double* dx = in->grad.data() + static_cast<std::int64_t>(r) * c;
            for (int i = 0; i < c; ++i) {
                dx[i] += g * (p[i] - (i == (*labels_copy)[r] ? 1.0 : 0.0));
            }
        }
    };
    return out;
}

Var dropout(const Var& a, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) fail(Op::Dropout, "rate must be in [0,1)");
    if (!training || rate == 0.0) return a;
    Var out = make_node(Op::Dropout, a->shape, {a});
    const std::int64_t n = a->numel();
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double m = u(rng) < rate ? 0.0 : 1.0 / keep;
        (*mask)[i] = m;
        out->value[i] = a->value[i] * m;
    }
    out->backward_fn = [n, mask](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) a_in->grad[i] += self.grad[i] * (*mask)[i];
    };
    return out;
}

Var mean(const Var& a) {
    Var out = make_node(Op::Mean, {1}, {a});
    const std::int64_t n = a->numel();
    out->value[0] = ConstArrMap(a->value.data(), n).sum() / static_cast<double>(n);
    out->backward_fn = [n](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        ArrMap(a_in->grad.data(), n) += g;
    };
    return out;
}

Var l2_normalize(const Var& a) {
    Var out = make_node(Op::L2Normalize, a->shape, {a});
    const int w = a->shape.back();
    const std::int64_t rows = a->rows();
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
        ConstArrMap x(a->value.data() + r * w, w);
        const double nrm = std::sqrt(x.square().sum());
        (*norms)[r] = nrm;
        ArrMap y(out->value.data() + r * w, w);
        y = nrm > 0.0 ? (x / nrm).eval() : x.eval();
    }
    out->backward_fn = [w, rows, norms](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double nrm = (*norms)[r];
            ConstArrMap g(self.grad.data() + r * w, w);
            ArrMap dx(a_in->grad.data() + r * w, w);
            if (nrm > 0.0) {
                ConstArrMap y(self.value.data() + r * w, w);
                const double dot = (y * g).sum();
                dx += (g - y * dot) / nrm;
            } else {
                dx += g;  // zero rows pass through
            }
        }
    };
    return out;
}

Var global_avg_pool(const Var& a) {
    if (a->rank() == 3) {
        const int b = a->shape[0], n = a->shape[1], c = a->shape[2];
        Var out = make_node(Op::GlobalAvgPool, {b, c}, {a});
        for (int i = 0; i < b; ++i) {
            ArrMap y(out->value.data() + static_cast<std::int64_t>(i) * c, c);
            y.setZero();
            for (int t = 0; t < n; ++t) {
                y += ConstArrMap(a->value.data() + (static_cast<std::int64_t>(i) * n + t) * c, c);
            }
            y /= static_cast<double>(n);
        }
        out->backward_fn = [b, n, c](Tensor& self) {
            Var a_in = self.inputs[0];
            if (!a_in->requires_grad) return;
            a_in->ensure_grad();
            for (int i = 0; i < b; ++i) {
                ConstArrMap g(self.grad.data() + static_cast<std::int64_t>(i) * c, c);
                for (int t = 0; t < n; ++t) {
                    ArrMap dx(a_in->grad.data() + (static_cast<std::int64_t>(i) * n + t) * c, c);
                    dx += g / static_cast<double>(n);
                }
            }
        };
        return out;
    }
    if (a->rank() == 2) {
        const int n = a->shape[0], c = a->shape[1];
        Var out = make_node(Op::GlobalAvgPool, {c}, {a});
        ArrMap y(out->value.data(), c);
        y.setZero();
        for (int t = 0; t < n; ++t) y += ConstArrMap(a->value.data() + static_cast<std::int64_t>(t) * c, c);
        y /= static_cast<double>(n);
        out->backward_fn = [n, c](Tensor& self) {
            Var a_in = self.inputs[0];
            if (!a_in->requires_grad) return;
            a_in->ensure_grad();
            ConstArrMap g(self.grad.data(), c);
            for (int t = 0; t < n; ++t) {
                ArrMap dx(a_in->grad.data() + static_cast<std::int64_t>(t) * c, c);
                dx += g / static_cast<double>(n);
            }
        };
        return out;
    }
    fail(Op::GlobalAvgPool, "expects rank-2 or rank-3 input, got " + shape_str(a->shape));
}

namespace {

// Strides of a row-major shape.
std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace

Var slice(const Var& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a->rank()) fail(Op::Slice, "axis " + std::to_string(axis) + " out of range");
    if (start < 0 || len <= 0 || start + len > a->shape[axis]) {
        fail(Op::Slice, "window [" + std::to_string(start) + "," + std::to_string(start + len) +
                            ") out of range for " + shape_str(a->shape));
    }
    Shape out_shape = a->shape;
    out_shape[axis] = len;
    Var out = make_node(Op::Slice, out_shape, {a});

    const auto in_strides = strides_of(a->shape);
    // outer: elements before the axis; inner: contiguous run after it.
    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= a->shape[i];
    const std::int64_t inner = in_strides[axis];
    const std::int64_t in_axis = a->shape[axis];
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = a->value.data() + (o * in_axis + start) * inner;
        double* dst = out->value.data() + o * len * inner;
        std::memcpy(dst, src, sizeof(double) * len * inner);
    }
    out->backward_fn = [outer, inner, in_axis, start, len](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            double* dst = a_in->grad.data() + (o * in_axis + start) * inner;
            const double* src = self.grad.data() + o * len * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    };
    return out;
}

Var reshape(const Var& a, Shape shape) {
    if (shape_numel(shape) != a->numel()) {
        fail(Op::Reshape, "cannot reshape " + shape_str(a->shape) + " to " + shape_str(shape));
    }
    Var out = make_node(Op::Reshape, std::move(shape), {a});
    out->value = a->value;
    out->backward_fn = [](Tensor& self) {
        Var a_in = self.inputs[0];
        if (!a_in->requires_grad) return;
        a_in->ensure_grad();
        const std::int64_t n = self.numel();
        for (std::int64_t i = 0; i < n; ++i) a_in->grad[i] += self.grad[i];
    };
    return out;
}

Var time_step(const Var& x, int t) {
    if (x->rank() != 3) fail(Op::Slice, "time_step expects [b,n,c], got " + shape_str(x->shape));
    return reshape(slice(x, 1, t, 1), {x->shape[0], x->shape[2]});
}

Var mse_loss(const Var& pred, const Var& target) {
    Var d = sub(pred, target);
    return mean(mul(d, d));
}

// ---- autodiff ---------------------------------------------------------------

void backward(const Var& loss) {
    if (!loss) throw std::runtime_error("backward: null loss");
    if (loss->numel() != 1) {
        throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (loss->value.empty()) throw std::runtime_error("backward: loss has no forward value");

    // Iterative post-order DFS; each node enters the order exactly once.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Tensor* child = node->inputs[next].get();
            ++next;
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn && node->requires_grad && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

double grad_check(const std::function<Var(const std::vector<Var>&)>& build,
                  const std::vector<Var>& points, double eps) {
    // Analytic gradients.
    for (const Var& p : points) {
        p->grad.clear();
        p->ensure_grad();
    }
    Var loss = build(points);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(points.size());
    for (const Var& p : points) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        Var p = points[pi];
        for (std::int64_t i = 0; i < p->numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            const double up = build(points)->value[0];
            p->value[i] = saved - eps;
            const double down = build(points)->value[0];
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                return std::numeric_limits<double>::infinity();
            }
            const double err = std::abs(a - numeric) / std::max(std::abs(numeric), 1e-8);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// ---- parameter registry -------------------------------------------------------

Var ParamStore::add(const std::string& name, Shape shape, std::vector<double> data) {
    if (contains(name)) throw std::runtime_error("ParamStore: duplicate parameter '" + name + "'");
    Var p = parameter(name, std::move(shape), std::move(data));
    params_.push_back(p);
    return p;
}

Var ParamStore::get(const std::string& name) const {
    for (const Var& p : params_) {
        if (p->name == name) return p;
    }
    throw std::runtime_error("ParamStore: unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
    for (const Var& p : params_) {
        if (p->name == name) return true;
    }
    return false;
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t n = 0;
    for (const Var& p : params_) n += p->numel();
    return n;
}

void ParamStore::zero_grads() {
    for (const Var& p : params_) {
        p->ensure_grad();
        p->zero_grad();
    }
}

std::vector<std::vector<double>> ParamStore::snapshot_values() const {
    std::vector<std::vector<double>> snap;
    snap.reserve(params_.size());
    for (const Var& p : params_) snap.push_back(p->value);
    return snap;
}

void ParamStore::restore_values(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != params_.size()) {
        throw std::runtime_error("ParamStore: snapshot size mismatch");
    }
    for (std::size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].size() != params_[i]->value.size()) {
            throw std::runtime_error("ParamStore: snapshot shape mismatch for " + params_[i]->name);
        }
        params_[i]->value = snap[i];
    }
}

void ParamStore::save(const std::string& bin_path, const std::string& manifest_path) const {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("ParamStore: cannot write " + bin_path);
    nlohmann::json tensors = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const Var& p : params_) {
        bin.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        tensors.push_back({{"name", p->name},
                           {"shape", p->shape},
                           {"byte_offset", offset}});
        offset += p->numel() * static_cast<std::int64_t>(sizeof(double));
    }
    bin.close();
    nlohmann::json manifest{{"format_version", 1}, {"dtype", "f64-le"}, {"tensors", tensors}};
    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("ParamStore: cannot write " + manifest_path);
    mf << manifest.dump(2) << "\n";
}

void ParamStore::load(const std::string& bin_path, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("ParamStore: cannot read " + manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format_version", -1) != 1) {
        throw std::runtime_error("ParamStore: unsupported parameter manifest version in " +
                                 manifest_path);
    }
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("ParamStore: cannot read " + bin_path);
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name");
        const Shape shape = t.at("shape").get<Shape>();
        Var p = get(name);
        if (p->shape != shape) {
            throw std::runtime_error("ParamStore: shape mismatch for '" + name + "': expected " +
                                     shape_str(p->shape) + ", manifest has " + shape_str(shape));
        }
        bin.seekg(t.at("byte_offset").get<std::int64_t>());
        bin.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("ParamStore: truncated stream for '" + name + "'");
    }
}

}  // namespace muqar
