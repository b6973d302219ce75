// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "usf/types.hpp"

namespace usf::diff {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;  // into the flat value/grad arrays
  std::size_t size = 0;    // product of shape
};

// Flat collection of named trainable arrays with matching gradient buffers.
// Entry order is registration order and is the canonical order everywhere
// (optimizer state, checkpoints, gradient reduction).
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape);
  int add(const std::string& name, std::vector<int> shape, std::span<const double> values);

  int find(const std::string& name) const;     // -1 when absent
  int require(const std::string& name) const;  // throws std::invalid_argument

  int entry_count() const { return static_cast<int>(entries_.size()); }
  const ParamEntry& entry(int id) const { return entries_[static_cast<size_t>(id)]; }
  std::size_t value_count() const { return values_.size(); }

  std::span<double> values(int id);
  std::span<const double> values(int id) const;
  std::span<double> grads(int id);
  std::span<const double> grads(int id) const;

  std::span<double> all_values() { return values_; }
  std::span<const double> all_values() const { return values_; }
  std::span<double> all_grads() { return grads_; }
  std::span<const double> all_grads() const { return grads_; }

  void zero_grads();

  // Weight entries use shape {out, in} stored row-major. These views expose
  // the transposed (in x out) matrix directly over the flat buffer, which is
  // the operand needed by batched forward/backward products.
  Eigen::Map<const Mat> weight_t(int id) const;
  Eigen::Map<const Vec> vec(int id) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, int> index_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

using VarId = int;

class Tape;

// A recorded primitive. backward() reads the adjoint of its output node and
// accumulates into input-node adjoints and/or parameter gradients.
struct TapeOp {
  virtual ~TapeOp() = default;
  virtual void backward(Tape& tape, VarId self) = 0;
};

enum class Activation { None, Relu };

// Ordered record of primitive applications over batched values. Rows are
// batch items, columns features. Values are computed eagerly at record time;
// backward() replays adjoints in reverse order exactly once.
//
// Parameters do not appear as nodes: ops that touch them (affine, encodings)
// read values from the bound ParamStore and accumulate gradients into the
// bound sink, a flat buffer with the store's layout. A tape built without a
// sink is evaluation-only and refuses backward().
class Tape {
 public:
  explicit Tape(const ParamStore& params, std::span<double> grad_sink = {});

  // Leaves.
  VarId constant(Mat value);

  // Primitives.
  VarId affine(VarId x, int weight, int bias, Activation act = Activation::None);
  VarId relu(VarId x);
  VarId sigmoid(VarId x);
  VarId softplus(VarId x);
  VarId shifted_softplus(VarId x, double beta0);
  VarId softmax_rows(VarId x);
  VarId concat_cols(VarId a, VarId b);
  VarId slice_cols(VarId x, int col0, int ncols);
  // mean: (n,c); std: (n,1) broadcast across columns; noise: fixed (n,c).
  VarId sample_gaussian_reparam(VarId mean, VarId std, Mat noise);
  VarId sum(VarId x);  // full reduction to 1x1
  VarId weighted_sum(std::span<const std::pair<double, VarId>> terms);  // 1x1 inputs

  // Escape hatch for fused domain ops (hash encoding, compositing, losses).
  VarId custom(std::unique_ptr<TapeOp> op, Mat value, std::vector<VarId> inputs);

  const Mat& value(VarId v) const { return nodes_[static_cast<size_t>(v)].value; }
  double scalar(VarId v) const { return value(v)(0, 0); }

  // Adjoint accessor for ops; allocates zeros on first touch.
  Mat& adjoint(VarId v);
  bool has_adjoint(VarId v) const { return nodes_[static_cast<size_t>(v)].adj_live; }

  // Accumulates seed * d(output)/d(param) into the sink for every parameter
  // touched by the tape. `output` must be 1x1. A tape is consumed by exactly
  // one backward pass; a second call throws std::logic_error.
  void backward(VarId output, double seed = 1.0);
  bool consumed() const { return consumed_; }

  const ParamStore& params() const { return params_; }
  bool has_sink() const { return !sink_.empty(); }
  std::span<double> sink_grads(int entry);

  const std::vector<VarId>& inputs_of(VarId v) const { return nodes_[static_cast<size_t>(v)].inputs; }

 private:
  struct Node {
    Mat value;
    Mat adj;
    bool adj_live = false;
    std::unique_ptr<TapeOp> op;  // null for leaves
    std::vector<VarId> inputs;
  };

  VarId push(Mat value, std::unique_ptr<TapeOp> op, std::vector<VarId> inputs);

  const ParamStore& params_;
  std::span<double> sink_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Pure helpers (shared by tape ops and evaluation paths)
// ---------------------------------------------------------------------------

// Numerically stabilized log(1 + exp(x)).
double softplus_value(double x);

// Variance floor mapping: beta0^2 + softplus(raw).
double shifted_softplus_value(double raw, double beta0);

// Max-subtracted softmax of one row vector.
Vec softmax_value(const Vec& logits);

// mean + std * noise, elementwise; gradients (when taped) flow to mean and
// std only. Pure variant for per-ray evaluation paths.
Vec sample_gaussian_reparam_value(const Vec& mean, double std_dev, const Vec& noise);

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central-difference check for one parameter entry. `loss` must be a pure
// deterministic function of the store values (fix any noise beforehand) and
// analytic gradients for the entry must already be populated in the store.
// Returns max over entry elements of |analytic - fd| / (|fd| + 1e-8).
double finite_diff_check(ParamStore& params, const std::string& entry_name,
                         const std::function<double()>& loss, double step);

}  // namespace usf::diff
