// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/diffmath.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace usf::diff {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter entry: " + name);
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape of " + name);
    n *= static_cast<std::size_t>(d);
  }
  ParamEntry e;
  e.name = name;
  e.shape = std::move(shape);
  e.offset = values_.size();
  e.size = n;
  int id = static_cast<int>(entries_.size());
  entries_.push_back(std::move(e));
  index_.emplace(name, id);
  values_.resize(values_.size() + n, 0.0);
  grads_.resize(grads_.size() + n, 0.0);
  return id;
}

int ParamStore::add(const std::string& name, std::vector<int> shape, std::span<const double> v) {
  int id = add(name, std::move(shape));
  auto dst = values(id);
  if (v.size() != dst.size()) throw std::invalid_argument("value size mismatch for " + name);
  std::copy(v.begin(), v.end(), dst.begin());
  return id;
}

int ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int ParamStore::require(const std::string& name) const {
  int id = find(name);
  if (id < 0) throw std::invalid_argument("unknown parameter entry: " + name);
  return id;
}

std::span<double> ParamStore::values(int id) {
  const auto& e = entries_[static_cast<size_t>(id)];
  return {values_.data() + e.offset, e.size};
}
std::span<const double> ParamStore::values(int id) const {
  const auto& e = entries_[static_cast<size_t>(id)];
  return {values_.data() + e.offset, e.size};
}
std::span<double> ParamStore::grads(int id) {
  const auto& e = entries_[static_cast<size_t>(id)];
  return {grads_.data() + e.offset, e.size};
}
std::span<const double> ParamStore::grads(int id) const {
  const auto& e = entries_[static_cast<size_t>(id)];
  return {grads_.data() + e.offset, e.size};
}

void ParamStore::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

Eigen::Map<const Mat> ParamStore::weight_t(int id) const {
  const auto& e = entries_[static_cast<size_t>(id)];
  if (e.shape.size() != 2) throw std::invalid_argument("weight_t on non-matrix entry " + e.name);
  // Row-major (out, in) buffer reinterpreted as column-major (in, out).
  return {values_.data() + e.offset, e.shape[1], e.shape[0]};
}

Eigen::Map<const Vec> ParamStore::vec(int id) const {
  const auto& e = entries_[static_cast<size_t>(id)];
  return {values_.data() + e.offset, static_cast<Eigen::Index>(e.size)};
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

double softplus_value(double x) {
  // Threshold 20: below double precision impact for the stabilized branch.
  if (x > 20.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double shifted_softplus_value(double raw, double beta0) {
  return beta0 * beta0 + softplus_value(raw);
}

Vec softmax_value(const Vec& logits) {
  if (logits.size() == 0) throw std::invalid_argument("softmax of empty vector");
  double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

Vec sample_gaussian_reparam_value(const Vec& mean, double std_dev, const Vec& noise) {
  if (mean.size() != noise.size()) throw std::invalid_argument("reparam: mean/noise size mismatch");
  return mean + std_dev * noise;
}

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

namespace {

struct AffineOp final : TapeOp {
  VarId x;
  int w, b;
  Activation act;
  AffineOp(VarId x_, int w_, int b_, Activation a) : x(x_), w(w_), b(b_), act(a) {}

  void backward(Tape& t, VarId self) override {
    const Mat& y = t.value(self);
    Mat g = t.adjoint(self);
    if (act == Activation::Relu) {
      g = (y.array() > 0.0).select(g, 0.0);
    }
    const Mat& xv = t.value(x);
    const auto& ps = t.params();
    t.adjoint(x).noalias() += g * ps.weight_t(w).transpose();
    // Parameter gradients into the sink using the transposed weight layout.
    auto gw = t.sink_grads(w);
    Eigen::Map<Mat> gwt(gw.data(), xv.cols(), g.cols());
    gwt.noalias() += xv.transpose() * g;
    auto gb = t.sink_grads(b);
    Eigen::Map<Vec>(gb.data(), g.cols()) += g.colwise().sum().transpose();
  }
};

struct ReluOp final : TapeOp {
  VarId x;
  explicit ReluOp(VarId x_) : x(x_) {}
  void backward(Tape& t, VarId self) override {
    const Mat& y = t.value(self);
    const Mat& g = t.adjoint(self);
    // Subgradient at 0 is 0.
    t.adjoint(x).array() += (y.array() > 0.0).select(g, 0.0);
  }
};

struct SigmoidOp final : TapeOp {
  VarId x;
  explicit SigmoidOp(VarId x_) : x(x_) {}
  void backward(Tape& t, VarId self) override {
    const Mat& y = t.value(self);
    const Mat& g = t.adjoint(self);
    t.adjoint(x).array() += g.array() * y.array() * (1.0 - y.array());
  }
};

struct SoftplusOp final : TapeOp {
  VarId x;
  double shift;  // output = shift + softplus(input)
  SoftplusOp(VarId x_, double shift_) : x(x_), shift(shift_) {}
  void backward(Tape& t, VarId self) override {
    const Mat& y = t.value(self);
    const Mat& g = t.adjoint(self);
    // d softplus/dx = sigmoid(x) = 1 - exp(-(y - shift)).
    t.adjoint(x).array() += g.array() * (1.0 - (-(y.array() - shift)).exp());
  }
};

struct SoftmaxRowsOp final : TapeOp {
  VarId x;
  explicit SoftmaxRowsOp(VarId x_) : x(x_) {}
  void backward(Tape& t, VarId self) override {
    const Mat& p = t.value(self);
    const Mat& g = t.adjoint(self);
    Vec dot = (g.array() * p.array()).rowwise().sum();
    t.adjoint(x).array() += p.array() * (g.array().colwise() - dot.array());
  }
};

struct ConcatColsOp final : TapeOp {
  VarId a, b;
  ConcatColsOp(VarId a_, VarId b_) : a(a_), b(b_) {}
  void backward(Tape& t, VarId self) override {
    const Mat& g = t.adjoint(self);
    Eigen::Index ca = t.value(a).cols();
    t.adjoint(a) += g.leftCols(ca);
    t.adjoint(b) += g.rightCols(g.cols() - ca);
  }
};

struct SliceColsOp final : TapeOp {
  VarId x;
  int col0;
  SliceColsOp(VarId x_, int c0) : x(x_), col0(c0) {}
  void backward(Tape& t, VarId self) override {
    const Mat& g = t.adjoint(self);
    t.adjoint(x).middleCols(col0, g.cols()) += g;
  }
};

struct ReparamOp final : TapeOp {
  VarId mean, std;
  Mat noise;
  ReparamOp(VarId m, VarId s, Mat n) : mean(m), std(s), noise(std::move(n)) {}
  void backward(Tape& t, VarId self) override {
    const Mat& g = t.adjoint(self);
    t.adjoint(mean) += g;
    // d/d std of (mean + std*noise) row-broadcast: sum_c g * noise per row.
    t.adjoint(std) += (g.array() * noise.array()).rowwise().sum().matrix();
  }
};

struct SumOp final : TapeOp {
  VarId x;
  explicit SumOp(VarId x_) : x(x_) {}
  void backward(Tape& t, VarId self) override {
    t.adjoint(x).array() += t.adjoint(self)(0, 0);
  }
};

struct WeightedSumOp final : TapeOp {
  std::vector<std::pair<double, VarId>> terms;
  explicit WeightedSumOp(std::vector<std::pair<double, VarId>> ts) : terms(std::move(ts)) {}
  void backward(Tape& t, VarId self) override {
    double g = t.adjoint(self)(0, 0);
    for (const auto& [c, v] : terms) t.adjoint(v)(0, 0) += c * g;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape(const ParamStore& params, std::span<double> grad_sink) : params_(params), sink_(grad_sink) {
  if (!sink_.empty() && sink_.size() != params.value_count())
    throw std::invalid_argument("gradient sink size does not match parameter store");
}

VarId Tape::push(Mat value, std::unique_ptr<TapeOp> op, std::vector<VarId> inputs) {
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

VarId Tape::constant(Mat value) { return push(std::move(value), nullptr, {}); }

VarId Tape::affine(VarId x, int weight, int bias, Activation act) {
  const Mat& xv = value(x);
  auto wt = params_.weight_t(weight);
  const auto& we = params_.entry(weight);
  const auto& be = params_.entry(bias);
  if (xv.cols() != wt.rows())
    throw std::invalid_argument("affine: input width " + std::to_string(xv.cols()) +
                                " does not match weight " + we.name);
  if (static_cast<Eigen::Index>(be.size) != wt.cols())
    throw std::invalid_argument("affine: bias size mismatch for " + be.name);
  Mat y(xv.rows(), wt.cols());
  y.noalias() = xv * wt;
  y.rowwise() += params_.vec(bias).transpose();
  if (act == Activation::Relu) y = y.cwiseMax(0.0);
  return push(std::move(y), std::make_unique<AffineOp>(x, weight, bias, act), {x});
}

VarId Tape::relu(VarId x) {
  Mat y = value(x).cwiseMax(0.0);
  return push(std::move(y), std::make_unique<ReluOp>(x), {x});
}

VarId Tape::sigmoid(VarId x) {
  Mat y = 1.0 / (1.0 + (-value(x).array()).exp());
  return push(std::move(y), std::make_unique<SigmoidOp>(x), {x});
}

VarId Tape::softplus(VarId x) {
  Mat y = value(x).unaryExpr([](double v) { return softplus_value(v); });
  return push(std::move(y), std::make_unique<SoftplusOp>(x, 0.0), {x});
}

VarId Tape::shifted_softplus(VarId x, double beta0) {
  if (beta0 < 0) throw std::invalid_argument("shifted_softplus: beta0 must be nonnegative");
  double shift = beta0 * beta0;
  Mat y = value(x).unaryExpr([shift](double v) { return shift + softplus_value(v); });
  return push(std::move(y), std::make_unique<SoftplusOp>(x, shift), {x});
}

VarId Tape::softmax_rows(VarId x) {
  const Mat& xv = value(x);
  if (xv.cols() == 0) throw std::invalid_argument("softmax of empty rows");
  Mat y(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double m = xv.row(i).maxCoeff();
    Eigen::ArrayXd e = (xv.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return push(std::move(y), std::make_unique<SoftmaxRowsOp>(x), {x});
}

VarId Tape::concat_cols(VarId a, VarId b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Mat y(av.rows(), av.cols() + bv.cols());
  y << av, bv;
  return push(std::move(y), std::make_unique<ConcatColsOp>(a, b), {a, b});
}

VarId Tape::slice_cols(VarId x, int col0, int ncols) {
  Mat y = value(x).middleCols(col0, ncols);
  return push(std::move(y), std::make_unique<SliceColsOp>(x, col0), {x});
}

VarId Tape::sample_gaussian_reparam(VarId mean, VarId std, Mat noise) {
  const Mat& m = value(mean);
  const Mat& s = value(std);
  if (s.cols() != 1 || s.rows() != m.rows())
    throw std::invalid_argument("reparam: std must be (rows, 1)");
  if (noise.rows() != m.rows() || noise.cols() != m.cols())
    throw std::invalid_argument("reparam: noise shape mismatch");
  Mat y = m.array() + noise.array().colwise() * s.col(0).array();
  return push(std::move(y), std::make_unique<ReparamOp>(mean, std, std::move(noise)), {mean, std});
}

VarId Tape::sum(VarId x) {
  Mat y(1, 1);
  y(0, 0) = value(x).sum();
  return push(std::move(y), std::make_unique<SumOp>(x), {x});
}

VarId Tape::weighted_sum(std::span<const std::pair<double, VarId>> terms) {
  double acc = 0.0;
  std::vector<std::pair<double, VarId>> ts(terms.begin(), terms.end());
  std::vector<VarId> inputs;
  for (const auto& [c, v] : ts) {
    const Mat& m = value(v);
    if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    acc += c * m(0, 0);
    inputs.push_back(v);
  }
  Mat y(1, 1);
  y(0, 0) = acc;
  return push(std::move(y), std::make_unique<WeightedSumOp>(std::move(ts)), std::move(inputs));
}

VarId Tape::custom(std::unique_ptr<TapeOp> op, Mat value, std::vector<VarId> inputs) {
  return push(std::move(value), std::move(op), std::move(inputs));
}

Mat& Tape::adjoint(VarId v) {
  Node& n = nodes_[static_cast<size_t>(v)];
  if (!n.adj_live) {
    n.adj = Mat::Zero(n.value.rows(), n.value.cols());
    n.adj_live = true;
  }
  return n.adj;
}

std::span<double> Tape::sink_grads(int entry) {
  if (sink_.empty()) throw std::logic_error("tape has no gradient sink");
  const auto& e = params_.entry(entry);
  return sink_.subspan(e.offset, e.size);
}

void Tape::backward(VarId output, double seed) {
  if (consumed_) throw std::logic_error("tape already consumed by a backward pass");
  if (sink_.empty()) throw std::logic_error("backward on an evaluation-only tape");
  const Mat& out = value(output);
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("backward: output must be a 1x1 scalar");
  consumed_ = true;
  adjoint(output)(0, 0) = seed;
  for (VarId v = output; v >= 0; --v) {
    Node& n = nodes_[static_cast<size_t>(v)];
    if (n.op && n.adj_live) n.op->backward(*this, v);
  }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(ParamStore& params, const std::string& entry_name,
                         const std::function<double()>& loss, double step) {
  int id = params.require(entry_name);
  auto vals = params.values(id);
  auto grads = params.grads(id);
  double worst = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    double keep = vals[i];
    vals[i] = keep + step;
    double up = loss();
    vals[i] = keep - step;
    double down = loss();
    vals[i] = keep;
    double fd = (up - down) / (2.0 * step);
    double err = std::abs(grads[i] - fd) / (std::abs(fd) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace usf::diff
