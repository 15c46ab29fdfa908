#include "drd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace drd::numerics {

using nlohmann::json;

std::string Shape::str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

// ---------------------------------------------------------------------------
// ParamStore

Param& ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  if (find(name) != nullptr) {
    throw NumericalError("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->shape = Shape{rows, cols};
  p->value.assign(rows * cols, 0.0);
  p->grad.assign(rows * cols, 0.0);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Param* ParamStore::find(std::string_view name) const {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Param& ParamStore::at(std::string_view name) {
  Param* p = find(name);
  if (!p) throw NumericalError("unknown parameter: " + std::string(name));
  return *p;
}

const Param& ParamStore::at(std::string_view name) const {
  const Param* p = find(name);
  if (!p) throw NumericalError("unknown parameter: " + std::string(name));
  return *p;
}

std::size_t ParamStore::value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p->grad) sq += g * g;
  }
  return std::sqrt(sq);
}

void ParamStore::init_normal(Rng& rng, double stddev) {
  for (auto& p : params_) {
    for (double& v : p->value) v = rng.normal(0.0, stddev);
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) {
    throw NumericalError("copy_values_from: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Param& src = *other.params_[i];
    Param& dst = *params_[i];
    if (src.name != dst.name || !(src.shape == dst.shape)) {
      throw NumericalError("copy_values_from: parameter layout mismatch at " + dst.name);
    }
    dst.value = src.value;
  }
}

ParamStore ParamStore::clone_values() const {
  ParamStore out;
  for (const auto& p : params_) {
    Param& q = out.add(p->name, p->shape.rows, p->shape.cols);
    q.value = p->value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

void matmul(const double* a, std::size_t m, std::size_t k, const double* b,
            std::size_t n, double* out) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += a[i * k + t] * b[t * n + j];
      }
      out[i * n + j] = acc;
    }
  }
}

double logsumexp(const double* z, std::size_t n) {
  double mx = z[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(z[i] - mx);
  return mx + std::log(s);
}

void log_softmax(const double* z, std::size_t n, double* out) {
  const double lse = logsumexp(z, n);
  for (std::size_t i = 0; i < n; ++i) out[i] = z[i] - lse;
}

void softmax(const double* z, std::size_t n, double* out) {
  const double lse = logsumexp(z, n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(z[i] - lse);
}

double stable_log_sigmoid(double x) {
  // log sigma(x) = -softplus(-x) = -(max(-x,0) + log1p(exp(-|x|)))
  const double softplus_neg = std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  return -softplus_neg;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape

const Shape& Value::shape() const { return tape_->shape_of(idx_); }
const std::vector<double>& Value::values() const { return tape_->values_of(idx_); }

double Value::scalar() const {
  const auto& v = values();
  if (v.size() != 1) {
    throw NumericalError("scalar() on non-scalar value of shape " + shape().str());
  }
  return v[0];
}

int Tape::push(Node&& n) {
  n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(Value v) const {
  if (v.tape() != this) throw NumericalError("value belongs to a different tape");
  return nodes_[static_cast<std::size_t>(v.index())];
}

void Tape::check_same_shape(const char* op, Value a, Value b) const {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (!(sa == sb)) {
    throw NumericalError(std::string(op) + ": shape mismatch (" + sa.str() +
                         " vs " + sb.str() + ")");
  }
}

Value Tape::leaf(Param& p) {
  Node n;
  n.op = Op::kLeaf;
  n.shape = p.shape;
  n.value = p.value;
  n.param = &p;
  return wrap(push(std::move(n)));
}

Value Tape::constant(std::vector<double> values, Shape shape) {
  if (values.size() != shape.size()) {
    throw NumericalError("constant: value count does not match shape " + shape.str());
  }
  Node n;
  n.op = Op::kConstant;
  n.shape = shape;
  n.value = std::move(values);
  return wrap(push(std::move(n)));
}

Value Tape::constant_scalar(double v) { return constant({v}, Shape{1, 1}); }

Value Tape::constant_vector(const std::vector<double>& values) {
  return constant(values, Shape{values.size(), 1});
}

Value Tape::add(Value a, Value b) {
  check_same_shape("add", a, b);
  Node n;
  n.op = Op::kAdd;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.in1 = b.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = va[i] + vb[i];
  return wrap(push(std::move(n)));
}

Value Tape::sub(Value a, Value b) {
  check_same_shape("sub", a, b);
  Node n;
  n.op = Op::kSub;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.in1 = b.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = va[i] - vb[i];
  return wrap(push(std::move(n)));
}

Value Tape::mul(Value a, Value b) {
  check_same_shape("mul", a, b);
  Node n;
  n.op = Op::kMul;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.in1 = b.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = va[i] * vb[i];
  return wrap(push(std::move(n)));
}

Value Tape::scale(Value a, double c) {
  Node n;
  n.op = Op::kScale;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.c0 = c;
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = c * va[i];
  return wrap(push(std::move(n)));
}

Value Tape::add_scalar(Value a, double c) {
  Node n;
  n.op = Op::kAddScalar;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.c0 = c;
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = va[i] + c;
  return wrap(push(std::move(n)));
}

Value Tape::matmul(Value a, Value b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa.cols != sb.rows) {
    throw NumericalError("matmul: shape mismatch (" + sa.str() + " vs " + sb.str() + ")");
  }
  Node n;
  n.op = Op::kMatmul;
  n.shape = Shape{sa.rows, sb.cols};
  n.in0 = a.index();
  n.in1 = b.index();
  n.value.resize(n.shape.size());
  kernels::matmul(node(a).value.data(), sa.rows, sa.cols, node(b).value.data(),
                  sb.cols, n.value.data());
  return wrap(push(std::move(n)));
}

Value Tape::embedding_row(Value table, std::size_t row) {
  const Shape& st = node(table).shape;
  if (row >= st.rows) {
    throw NumericalError("embedding_row: row " + std::to_string(row) +
                         " out of range for table " + st.str());
  }
  Node n;
  n.op = Op::kEmbeddingRow;
  n.shape = Shape{st.cols, 1};
  n.in0 = table.index();
  n.index = row;
  const auto& vt = node(table).value;
  n.value.assign(vt.begin() + static_cast<std::ptrdiff_t>(row * st.cols),
                 vt.begin() + static_cast<std::ptrdiff_t>((row + 1) * st.cols));
  return wrap(push(std::move(n)));
}

Value Tape::concat(Value a, Value b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa.cols != 1 || sb.cols != 1) {
    throw NumericalError("concat: expects column vectors, got " + sa.str() +
                         " and " + sb.str());
  }
  Node n;
  n.op = Op::kConcat;
  n.shape = Shape{sa.rows + sb.rows, 1};
  n.in0 = a.index();
  n.in1 = b.index();
  n.value = node(a).value;
  n.value.insert(n.value.end(), node(b).value.begin(), node(b).value.end());
  return wrap(push(std::move(n)));
}

Value Tape::stack(const std::vector<Value>& scalars) {
  if (scalars.empty()) throw NumericalError("stack: empty input");
  Node n;
  n.op = Op::kStack;
  n.shape = Shape{scalars.size(), 1};
  n.value.resize(scalars.size());
  n.extra_in.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const Node& s = node(scalars[i]);
    if (s.shape.size() != 1) {
      throw NumericalError("stack: input " + std::to_string(i) + " is not scalar");
    }
    n.value[i] = s.value[0];
    n.extra_in.push_back(scalars[i].index());
  }
  return wrap(push(std::move(n)));
}

Value Tape::tanh_op(Value a) {
  Node n;
  n.op = Op::kTanh;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(va[i]);
  return wrap(push(std::move(n)));
}

Value Tape::relu(Value a) {
  Node n;
  n.op = Op::kRelu;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = va[i] > 0.0 ? va[i] : 0.0;
  return wrap(push(std::move(n)));
}

Value Tape::sigmoid(Value a) {
  Node n;
  n.op = Op::kSigmoid;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value[i] = std::exp(kernels::stable_log_sigmoid(va[i]));
  }
  return wrap(push(std::move(n)));
}

Value Tape::log_sigmoid(Value a) {
  Node n;
  n.op = Op::kLogSigmoid;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value[i] = kernels::stable_log_sigmoid(va[i]);
  }
  return wrap(push(std::move(n)));
}

Value Tape::exp_op(Value a) {
  Node n;
  n.op = Op::kExp;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::exp(va[i]);
  return wrap(push(std::move(n)));
}

Value Tape::log_softmax(Value a) {
  const Shape& sa = node(a).shape;
  if (sa.cols != 1) throw NumericalError("log_softmax: expects a column vector");
  Node n;
  n.op = Op::kLogSoftmax;
  n.shape = sa;
  n.in0 = a.index();
  n.value.resize(sa.rows);
  kernels::log_softmax(node(a).value.data(), sa.rows, n.value.data());
  n.aux.resize(sa.rows);
  for (std::size_t i = 0; i < sa.rows; ++i) n.aux[i] = std::exp(n.value[i]);
  return wrap(push(std::move(n)));
}

Value Tape::softmax_cross_entropy(Value logits, std::size_t target) {
  const Shape& sa = node(logits).shape;
  if (sa.cols != 1) throw NumericalError("softmax_cross_entropy: expects a column vector");
  if (target >= sa.rows) {
    throw NumericalError("softmax_cross_entropy: target " + std::to_string(target) +
                         " out of range for " + sa.str());
  }
  Node n;
  n.op = Op::kSoftmaxXent;
  n.shape = Shape{1, 1};
  n.in0 = logits.index();
  n.index = target;
  const auto& z = node(logits).value;
  const double lse = kernels::logsumexp(z.data(), sa.rows);
  n.value = {lse - z[target]};
  n.aux.resize(sa.rows);
  for (std::size_t i = 0; i < sa.rows; ++i) n.aux[i] = std::exp(z[i] - lse);
  return wrap(push(std::move(n)));
}

Value Tape::minimum(Value a, Value b) {
  check_same_shape("minimum", a, b);
  Node n;
  n.op = Op::kMinimum;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.in1 = b.index();
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value[i] = va[i] <= vb[i] ? va[i] : vb[i];
  }
  return wrap(push(std::move(n)));
}

Value Tape::clip(Value a, double lo, double hi) {
  if (!(lo <= hi)) throw NumericalError("clip: lo > hi");
  Node n;
  n.op = Op::kClip;
  n.shape = node(a).shape;
  n.in0 = a.index();
  n.c0 = lo;
  n.c1 = hi;
  n.value.resize(n.shape.size());
  const auto& va = node(a).value;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.value[i] = std::min(std::max(va[i], lo), hi);
  }
  return wrap(push(std::move(n)));
}

Value Tape::sum(Value a) {
  Node n;
  n.op = Op::kSum;
  n.shape = Shape{1, 1};
  n.in0 = a.index();
  double acc = 0.0;
  for (double v : node(a).value) acc += v;
  n.value = {acc};
  return wrap(push(std::move(n)));
}

Value Tape::mean(Value a) {
  if (node(a).value.empty()) throw NumericalError("mean: empty input");
  Node n;
  n.op = Op::kMean;
  n.shape = Shape{1, 1};
  n.in0 = a.index();
  double acc = 0.0;
  for (double v : node(a).value) acc += v;
  n.value = {acc / static_cast<double>(node(a).value.size())};
  return wrap(push(std::move(n)));
}

void Tape::backward_node(Node& n) {
  auto& g = n.grad;
  switch (n.op) {
    case Op::kConstant:
      break;
    case Op::kLeaf: {
      auto& pg = n.param->grad;
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      break;
    }
    case Op::kAdd: {
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      const auto& va = nodes_[n.in0].value;
      const auto& vb = nodes_[n.in1].value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
      break;
    }
    case Op::kScale: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.c0 * g[i];
      break;
    }
    case Op::kAddScalar: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::kMatmul: {
      const Node& a = nodes_[n.in0];
      const Node& b = nodes_[n.in1];
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      const std::size_t m = a.shape.rows, k = a.shape.cols, c = b.shape.cols;
      // dA = G * B^T ; dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * b.value[t * c + j];
          ga[i * k + t] += acc;
        }
      }
      for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += a.value[i * k + t] * g[i * c + j];
          gb[t * c + j] += acc;
        }
      }
      break;
    }
    case Op::kEmbeddingRow: {
      auto& gt = nodes_[n.in0].grad;
      const std::size_t cols = n.shape.rows;
      for (std::size_t i = 0; i < cols; ++i) gt[n.index * cols + i] += g[i];
      break;
    }
    case Op::kConcat: {
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      const std::size_t na = ga.size();
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
      break;
    }
    case Op::kStack: {
      for (std::size_t i = 0; i < n.extra_in.size(); ++i) {
        nodes_[n.extra_in[i]].grad[0] += g[i];
      }
      break;
    }
    case Op::kTanh: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case Op::kRelu: {
      auto& ga = nodes_[n.in0].grad;
      const auto& va = nodes_[n.in0].value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (va[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case Op::kSigmoid: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    }
    case Op::kLogSigmoid: {
      auto& ga = nodes_[n.in0].grad;
      const auto& va = nodes_[n.in0].value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        // d/dx log sigma(x) = sigma(-x)
        ga[i] += g[i] * std::exp(kernels::stable_log_sigmoid(-va[i]));
      }
      break;
    }
    case Op::kExp: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
      break;
    }
    case Op::kLogSoftmax: {
      auto& ga = nodes_[n.in0].grad;
      double gsum = 0.0;
      for (double gi : g) gsum += gi;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] - n.aux[i] * gsum;
      }
      break;
    }
    case Op::kSoftmaxXent: {
      auto& ga = nodes_[n.in0].grad;
      const double g0 = g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double d = n.aux[i];
        if (i == n.index) d -= 1.0;
        ga[i] += g0 * d;
      }
      break;
    }
    case Op::kMinimum: {
      auto& ga = nodes_[n.in0].grad;
      auto& gb = nodes_[n.in1].grad;
      const auto& va = nodes_[n.in0].value;
      const auto& vb = nodes_[n.in1].value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (va[i] <= vb[i]) {
          ga[i] += g[i];
        } else {
          gb[i] += g[i];
        }
      }
      break;
    }
    case Op::kClip: {
      auto& ga = nodes_[n.in0].grad;
      const auto& va = nodes_[n.in0].value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (va[i] > n.c0 && va[i] < n.c1) ga[i] += g[i];
      }
      break;
    }
    case Op::kSum: {
      auto& ga = nodes_[n.in0].grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      break;
    }
    case Op::kMean: {
      auto& ga = nodes_[n.in0].grad;
      const double inv = 1.0 / static_cast<double>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
      break;
    }
  }
}

void Tape::backward(Value root) {
  if (backward_done_) {
    throw NumericalError(
        "backward() called twice on the same tape without reset()");
  }
  const Node& r = node(root);
  if (r.shape.size() != 1) {
    throw NumericalError("backward: root must be scalar, got " + r.shape.str());
  }
  backward_done_ = true;
  nodes_[static_cast<std::size_t>(root.index())].grad[0] = 1.0;
  // Creation order is a topological order: walk it backwards.
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    backward_node(nodes_[i]);
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(const ParamStore& params) {
  AdamState s;
  s.m.resize(params.count());
  s.v.resize(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    s.m[i].assign(params.param(i).value.size(), 0.0);
    s.v[i].assign(params.param(i).value.size(), 0.0);
  }
  return s;
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config) {
  if (state.m.size() != params.count()) {
    throw NumericalError("adam_step: optimizer state does not match parameter store");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    for (double g : params.param(i).grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in parameter " +
                             params.param(i).name);
      }
      sq += g * g;
    }
  }
  double clip_factor = 1.0;
  const double norm = std::sqrt(sq);
  if (config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm) {
    clip_factor = config.grad_clip_norm / norm;
  }
  state.step += 1;
  const double b1t = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Param& p = params.param(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] * clip_factor;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double mhat = m[j] / b1t;
      const double vhat = v[j] / b2t;
      p.value[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const AdamState* adam, const std::string& meta_json) {
  json doc;
  doc["format"] = "drd-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  json plist = json::array();
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Param& p = params.param(i);
    json jp;
    jp["name"] = p.name;
    jp["rows"] = p.shape.rows;
    jp["cols"] = p.shape.cols;
    jp["values"] = p.value;
    plist.push_back(std::move(jp));
  }
  doc["params"] = std::move(plist);
  if (adam != nullptr) {
    json jo;
    jo["step"] = adam->step;
    jo["m"] = adam->m;
    jo["v"] = adam->v;
    doc["adam"] = std::move(jo);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out << doc.dump();
    out << '\n';
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "drd-checkpoint") {
    throw IoError("not a checkpoint file: " + path.string());
  }
  if (doc.value("version", -1) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version in " + path.string());
  }
  LoadedCheckpoint out;
  for (const auto& jp : doc.at("params")) {
    Param& p = out.params.add(jp.at("name").get<std::string>(),
                              jp.at("rows").get<std::size_t>(),
                              jp.at("cols").get<std::size_t>());
    p.value = jp.at("values").get<std::vector<double>>();
    if (p.value.size() != p.shape.size()) {
      throw IoError("checkpoint parameter " + p.name + " has wrong value count");
    }
    p.grad.assign(p.value.size(), 0.0);
  }
  if (doc.contains("adam")) {
    AdamState s;
    s.step = doc["adam"].at("step").get<std::int64_t>();
    s.m = doc["adam"].at("m").get<std::vector<std::vector<double>>>();
    s.v = doc["adam"].at("v").get<std::vector<std::vector<double>>>();
    out.adam = std::move(s);
  }
  out.meta_json = doc.value("meta", json::object()).dump();
  return out;
}

}  // namespace drd::numerics
