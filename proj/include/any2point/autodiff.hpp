#pragma once

// Tape-based reverse-mode differentiation over row-major double matrices.
//
// Trainable tensors live in a ParamStore. A Tape records one forward pass;
// backward() pushes the adjoint of a 1x1 loss through every recorded op and
// accumulates parameter gradients into a GradMap. Frozen tensors enter the
// tape as constants and never receive gradient storage.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "any2point/tensor.hpp"

namespace a2p::ad {

using ParamId = int;

class ParamStore {
 public:
  ParamId add(const std::string& name, Mat value);
  ParamId id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  const Mat& value(ParamId id) const { return values_.at(id); }
  Mat& value(ParamId id) { return values_.at(id); }
  const Mat& value(const std::string& name) const { return values_.at(id(name)); }
  Mat& value(const std::string& name) { return values_.at(id(name)); }

  /// Exact number of trainable scalars.
  long long scalar_count() const;
  /// Scalar count of parameters whose name starts with `prefix`.
  long long scalar_count(const std::string& prefix) const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::map<std::string, ParamId> index_;
};

/// Gradient buffers aligned with a ParamStore; untouched entries stay empty.
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(const ParamStore& store) : grads_(store.size()) {}

  void accumulate(ParamId id, const Mat& g);
  bool has(ParamId id) const { return grads_.at(id).size() != 0; }
  const Mat& at(ParamId id) const { return grads_.at(id); }
  Mat& at(ParamId id) { return grads_.at(id); }
  int size() const { return static_cast<int>(grads_.size()); }
  void scale(double s);
  /// this += other, in parameter order.
  void add(const GradMap& other);
  void clear();

 private:
  std::vector<Mat> grads_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Mat& grad)>;

  Tape() = default;
  /// `frozen` optionally supplies extra named tensors that resolve as
  /// constants through param(name).
  Tape(const ParamStore* store, GradMap* sink, const ParamStore* frozen = nullptr)
      : store_(store), sink_(sink), frozen_(frozen) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Constant by reference; `value` must outlive the tape.
  Var constant_ref(const Mat& value);
  Var constant_ref(Mat&&) = delete;
  Var param(ParamId id);
  Var param(const std::string& name);

  const Mat& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Adjoint of `v` after backward(); empty when nothing flowed into it.
  const Mat& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Records an op result. `backprop` runs only if some input needs grad.
  Var record(Mat value, bool needs_grad, Backprop backprop);
  /// Adds `g` into the adjoint of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g);

  /// Reverse sweep from a 1x1 loss; throws NonScalarLoss otherwise.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const ParamStore* store() const { return store_; }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool needs_grad = false;
    ParamId param = -1;
    Backprop backprop;
  };
  const ParamStore* store_ = nullptr;
  GradMap* sink_ = nullptr;
  const ParamStore* frozen_ = nullptr;
  std::vector<Node> nodes_;
};

// ---- ops ------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// a (R x C) plus a 1 x C row broadcast over every row.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
Var hadamard(Tape& t, Var a, Var b);
/// x W + b; `bias` may be an invalid Var.
Var linear(Tape& t, Var x, Var weight, Var bias = {});

/// tanh-approximated GELU.
Var gelu(Tape& t, Var a);

/// Per-row layer normalization with affine gamma/beta (1 x C each).
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-6);

Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, int start, int count);
Var slice_cols(Tape& t, Var a, int start, int count);
Var gather_rows(Tape& t, Var a, const std::vector<int>& rows);

/// Rows are laid out as consecutive segments of length `seg`; reduce each.
Var segment_max(Tape& t, Var a, int seg);
Var segment_mean(Tape& t, Var a, int seg);
/// Column means, 1 x C.
Var mean_rows(Tape& t, Var a);
Var sum_all(Tape& t, Var a);

/// Scaled dot-product attention split over `heads` column blocks. When
/// `probs_out` is set it receives the head-averaged attention matrix.
Var multi_head_attention(Tape& t, Var q, Var k, Var v, int heads, Mat* probs_out = nullptr);

/// Single-head attention restricted to each group of `partition`.
Var grouped_attention(Tape& t, Var q, Var k, Var v, const Partition& partition);

/// out_i = mean over i's group.
Var group_mean(Tape& t, Var a, const Partition& partition);
/// out_i = a_i + mean over i's group (pool then propagate).
Var group_mean_propagate(Tape& t, Var a, const Partition& partition);

/// out_i = a_i + column-wise max over i's group.
Var group_max_propagate(Tape& t, Var a, const Partition& partition);

/// Cosine-softmax ensemble: per row i, w_ij = softmax_j(cos(B_i, F_ij) / tau),
/// out_i = sum_j w_ij F_ij. A cosine is 0 when either vector has norm < 1e-12.
Var cosine_ensemble(Tape& t, Var baseline, const std::vector<Var>& views, double tau,
                    Mat* weights_out = nullptr);

/// Mean cross-entropy of `logits` (B x C) against `labels`.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

}  // namespace a2p::ad
