#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drd/error.hpp"
#include "drd/rng.hpp"

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors, 64-bit floats everywhere. A Tape owns the computation graph of a
// single forward pass; trainable parameters live outside the tape in a
// ParamStore and accumulate gradients across backward passes until
// zero_grad().

namespace drd::numerics {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
};

class ParamStore {
 public:
  Param& add(std::string name, std::size_t rows, std::size_t cols);
  Param& at(std::string_view name);
  const Param& at(std::string_view name) const;
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;
  bool has(std::string_view name) const { return find(name) != nullptr; }

  std::size_t count() const { return params_.size(); }
  Param& param(std::size_t i) { return *params_[i]; }
  const Param& param(std::size_t i) const { return *params_[i]; }
  std::size_t value_count() const;

  void zero_grad();
  double grad_norm() const;

  // Gaussian init, mean 0; used for fresh model weights.
  void init_normal(Rng& rng, double stddev);

  // Deep value copy into an identically-shaped store (grads untouched).
  void copy_values_from(const ParamStore& other);
  ParamStore clone_values() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

class Tape;

// Lightweight handle to a node on a tape.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int idx) : tape_(tape), idx_(idx) {}
  bool valid() const { return tape_ != nullptr; }
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }
  const Shape& shape() const;
  const std::vector<double>& values() const;
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Value leaf(Param& p);
  Value constant(std::vector<double> values, Shape shape);
  Value constant_scalar(double v);
  Value constant_vector(const std::vector<double>& values);

  // Elementwise arithmetic (shapes must match exactly).
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value add_scalar(Value a, double c);

  // matmul: [m x k] * [k x n] -> [m x n].
  Value matmul(Value a, Value b);
  // One row of an embedding table; gradient flows into that row only.
  Value embedding_row(Value table, std::size_t row);
  // Vector concatenation (column vectors).
  Value concat(Value a, Value b);
  // n-ary stack of scalars into a column vector.
  Value stack(const std::vector<Value>& scalars);

  // Nonlinearities.
  Value tanh_op(Value a);
  Value relu(Value a);
  Value sigmoid(Value a);
  // Numerically stable log(sigmoid(x)) = -softplus(-x); stays finite for
  // large |x|.
  Value log_sigmoid(Value a);
  Value exp_op(Value a);
  Value log_softmax(Value a);

  // Fused softmax + cross-entropy against a single target index; scalar out.
  Value softmax_cross_entropy(Value logits, std::size_t target);

  // Elementwise minimum; gradient routes to the selected branch, ties to a.
  Value minimum(Value a, Value b);
  // Clamp to [lo, hi]; gradient passes only strictly inside the interval.
  Value clip(Value a, double lo, double hi);

  // Reductions to scalar.
  Value sum(Value a);
  Value mean(Value a);

  // Backpropagate from a scalar root. Accumulates into Param::grad. A second
  // backward() without reset() throws NumericalError.
  void backward(Value root);

  void reset();
  std::size_t node_count() const { return nodes_.size(); }

  const Shape& shape_of(int idx) const { return nodes_[idx].shape; }
  const std::vector<double>& values_of(int idx) const { return nodes_[idx].value; }
  const std::vector<double>& grad_of(int idx) const { return nodes_[idx].grad; }

 private:
  enum class Op : std::uint8_t {
    kConstant,
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kScale,
    kAddScalar,
    kMatmul,
    kEmbeddingRow,
    kConcat,
    kStack,
    kTanh,
    kRelu,
    kSigmoid,
    kLogSigmoid,
    kExp,
    kLogSoftmax,
    kSoftmaxXent,
    kMinimum,
    kClip,
    kSum,
    kMean,
  };

  struct Node {
    Op op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    int in0 = -1;
    int in1 = -1;
    std::vector<int> extra_in;   // kStack only
    Param* param = nullptr;      // kLeaf only
    double c0 = 0.0;             // scale factor / clip lo
    double c1 = 0.0;             // clip hi
    std::size_t index = 0;       // embedding row / xent target
    std::vector<double> aux;     // cached softmax probabilities
  };

  int push(Node&& n);
  Value wrap(int idx) { return Value(this, idx); }
  const Node& node(Value v) const;
  void check_same_shape(const char* op, Value a, Value b) const;
  void backward_node(Node& n);

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  friend class Value;
};

// ---------------------------------------------------------------------------
// Adam optimizer with global gradient-norm clipping.

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global L2 clip applied across all parameter gradients; <= 0 disables.
  double grad_clip_norm = 1.0;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const ParamStore& params);

// One update over every parameter in the store. Throws NumericalError if any
// gradient is non-finite; parameters are left untouched in that case.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON dump of named parameter arrays, optional
// optimizer state, and a free-form provenance block.

struct LoadedCheckpoint {
  ParamStore params;
  std::optional<AdamState> adam;
  std::string meta_json;  // provenance block, serialized
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const AdamState* adam, const std::string& meta_json);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Shared forward kernels. The sampling path and the taped training path call
// these same routines so their outputs agree bit-for-bit.
namespace kernels {
void matmul(const double* a, std::size_t m, std::size_t k, const double* b,
            std::size_t n, double* out);
double logsumexp(const double* z, std::size_t n);
void log_softmax(const double* z, std::size_t n, double* out);
void softmax(const double* z, std::size_t n, double* out);
double stable_log_sigmoid(double x);
}  // namespace kernels

}  // namespace drd::numerics
