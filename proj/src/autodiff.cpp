#include "any2point/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "any2point/error.hpp"

namespace a2p::ad {

// ---- ParamStore / GradMap ---------------------------------------------------

ParamId ParamStore::add(const std::string& name, Mat value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  const ParamId id = static_cast<ParamId>(values_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
  index_.emplace(name, id);
  return id;
}

ParamId ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

long long ParamStore::scalar_count() const {
  long long n = 0;
  for (const Mat& v : values_) n += v.size();
  return n;
}

long long ParamStore::scalar_count(const std::string& prefix) const {
  long long n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (names_[i].rfind(prefix, 0) == 0) n += values_[i].size();
  }
  return n;
}

void GradMap::accumulate(ParamId id, const Mat& g) {
  Mat& slot = grads_.at(id);
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

void GradMap::scale(double s) {
  for (Mat& g : grads_) g *= s;
}

void GradMap::add(const GradMap& other) {
  for (int i = 0; i < other.size(); ++i) {
    if (other.has(i)) accumulate(i, other.at(i));
  }
}

void GradMap::clear() {
  for (Mat& g : grads_) g.resize(0, 0);
}

// ---- Tape -------------------------------------------------------------------

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_ref(const Mat& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(ParamId id) {
  Node n;
  n.external = &store_->value(id);
  n.needs_grad = sink_ != nullptr;
  n.param = id;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const std::string& name) {
  if (store_ && store_->contains(name)) return param(store_->id(name));
  if (frozen_ && frozen_->contains(name)) return constant_ref(frozen_->value(name));
  throw ConfigError("unknown parameter '" + name + "'");
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.external ? *n.external : n.value;
}

Var Tape::record(Mat value, bool needs_grad, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  const Mat& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw NonScalarLoss("loss has shape " + std::to_string(lv.rows()) + "x" +
                        std::to_string(lv.cols()));
  }
  if (!nodes_.at(loss.id).needs_grad) return;
  nodes_[loss.id].grad = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param >= 0 && sink_) sink_->accumulate(n.param, n.grad);
    if (n.backprop) n.backprop(*this, n.grad);
  }
}

// ---- helpers ----------------------------------------------------------------

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (v.valid() && t.needs_grad(v)) return true;
  }
  return false;
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

// In-place numerically stable row softmax.
void softmax_rows(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// Backward of P = softmax(S) row-wise: dS = P * (dP - rowsum(dP * P)).
Mat softmax_rows_backward(const Mat& p, const Mat& dp) {
  Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
  return (p.array() * (dp.array().colwise() - dot.array())).matrix();
}

}  // namespace

// ---- elementwise / linear algebra ------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw DimMismatch("matmul inner dims " + std::to_string(av.cols()) + " vs " +
                      std::to_string(bv.rows()));
  }
  return t.record(av * bv, any_grad(t, {a, b}), [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  return t.record(t.value(a) + t.value(b), any_grad(t, {a, b}), [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  return t.record(t.value(a) - t.value(b), any_grad(t, {a, b}), [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Mat& av = t.value(a);
  const Mat& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw DimMismatch("add_row width");
  Mat out = av.rowwise() + rv.row(0);
  return t.record(std::move(out), any_grad(t, {a, row}), [a, row](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, any_grad(t, {a}),
                  [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

Var hadamard(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "hadamard");
  Mat out = t.value(a).cwiseProduct(t.value(b));
  return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(weight);
  if (xv.cols() != wv.rows()) {
    throw DimMismatch("linear input width " + std::to_string(xv.cols()) + " vs weight rows " +
                      std::to_string(wv.rows()));
  }
  Mat out = xv * wv;
  if (bias.valid()) {
    const Mat& bv = t.value(bias);
    if (bv.rows() != 1 || bv.cols() != out.cols()) throw DimMismatch("linear bias width");
    out.rowwise() += bv.row(0);
  }
  return t.record(std::move(out), any_grad(t, {x, weight, bias}),
                  [x, weight, bias](Tape& t, const Mat& g) {
                    if (t.needs_grad(x)) t.accumulate(x, g * t.value(weight).transpose());
                    if (t.needs_grad(weight)) t.accumulate(weight, t.value(x).transpose() * g);
                    if (bias.valid() && t.needs_grad(bias)) {
                      t.accumulate(bias, g.colwise().sum());
                    }
                  });
}

Var gelu(Tape& t, Var a) {
  using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  const auto x = t.value(a).array();
  const Arr z = kC * (x + kA * x.cube());
  // tanh through the vectorized exp; exp(-2|z|) never overflows
  const Arr e = (-2.0 * z.abs()).exp();
  Arr th = z.sign() * (1.0 - e) / (1.0 + e);
  Mat out = (0.5 * x * (1.0 + th)).matrix();
  return t.record(std::move(out), any_grad(t, {a}), [a, th = std::move(th)](Tape& t, const Mat& g) {
    const auto x = t.value(a).array();
    const Arr d =
        0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * kC * (1.0 + 3.0 * kA * x.square());
    t.accumulate(a, (g.array() * d).matrix());
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = t.value(x);
  const Mat& gv = t.value(gamma);
  const Mat& bv = t.value(beta);
  const Eigen::Index cols = xv.cols();
  if (gv.cols() != cols || bv.cols() != cols) throw DimMismatch("layer_norm affine width");
  Mat xhat(xv.rows(), cols);
  Eigen::VectorXd rstd(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    rstd[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * rstd[r];
  }
  Mat out = (xhat.array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
  return t.record(std::move(out), any_grad(t, {x, gamma, beta}),
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape& t, const Mat& g) {
                    if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
                    if (t.needs_grad(gamma)) {
                      t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                    }
                    if (t.needs_grad(x)) {
                      const Mat& gv = t.value(gamma);
                      Mat dxhat = g.array().rowwise() * gv.row(0).array();
                      Mat dx(g.rows(), g.cols());
                      for (Eigen::Index r = 0; r < g.rows(); ++r) {
                        const double m1 = dxhat.row(r).mean();
                        const double m2 = dxhat.row(r).dot(xhat.row(r)) / g.cols();
                        dx.row(r) = rstd[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                      }
                      t.accumulate(x, dx);
                    }
                  });
}

// ---- shape ops --------------------------------------------------------------

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  const Eigen::Index rows = t.value(parts.at(0)).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw DimMismatch("concat_cols row count");
    cols += t.value(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Mat& v = t.value(p);
    out.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  return t.record(std::move(out), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index c = t.value(p).cols();
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(at, c));
      at += c;
    }
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  const Eigen::Index cols = t.value(parts.at(0)).cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw DimMismatch("concat_rows column count");
    rows += t.value(p).rows();
    ng = ng || t.needs_grad(p);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Mat& v = t.value(p);
    out.middleRows(at, v.rows()) = v;
    at += v.rows();
  }
  return t.record(std::move(out), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index r = t.value(p).rows();
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(at, r));
      at += r;
    }
  });
}

Var slice_rows(Tape& t, Var a, int start, int count) {
  const Mat& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.rows()) throw DimMismatch("slice_rows range");
  return t.record(av.middleRows(start, count), any_grad(t, {a}),
                  [a, start, count](Tape& t, const Mat& g) {
                    const Mat& av = t.value(a);
                    Mat full = Mat::Zero(av.rows(), av.cols());
                    full.middleRows(start, count) = g;
                    t.accumulate(a, full);
                  });
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  const Mat& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.cols()) throw DimMismatch("slice_cols range");
  return t.record(av.middleCols(start, count), any_grad(t, {a}),
                  [a, start, count](Tape& t, const Mat& g) {
                    const Mat& av = t.value(a);
                    Mat full = Mat::Zero(av.rows(), av.cols());
                    full.middleCols(start, count) = g;
                    t.accumulate(a, full);
                  });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& rows) {
  const Mat& av = t.value(a);
  Mat out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw DimMismatch("gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return t.record(std::move(out), any_grad(t, {a}), [a, rows](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    Mat full = Mat::Zero(av.rows(), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      full.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    t.accumulate(a, full);
  });
}

Var segment_max(Tape& t, Var a, int seg) {
  const Mat& av = t.value(a);
  if (seg < 1 || av.rows() % seg != 0) throw DimMismatch("segment_max segment length");
  const Eigen::Index groups = av.rows() / seg;
  Mat out(groups, av.cols());
  IndexTable arg(groups, av.cols());
  for (Eigen::Index s = 0; s < groups; ++s) {
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      Eigen::Index best = s * seg;
      for (Eigen::Index r = s * seg + 1; r < (s + 1) * seg; ++r) {
        if (av(r, c) > av(best, c)) best = r;
      }
      out(s, c) = av(best, c);
      arg(s, c) = static_cast<int>(best);
    }
  }
  return t.record(std::move(out), any_grad(t, {a}), [a, arg = std::move(arg)](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    Mat full = Mat::Zero(av.rows(), av.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) full(arg(s, c), c) += g(s, c);
    }
    t.accumulate(a, full);
  });
}

Var segment_mean(Tape& t, Var a, int seg) {
  const Mat& av = t.value(a);
  if (seg < 1 || av.rows() % seg != 0) throw DimMismatch("segment_mean segment length");
  const Eigen::Index groups = av.rows() / seg;
  Mat out(groups, av.cols());
  for (Eigen::Index s = 0; s < groups; ++s) {
    out.row(s) = av.middleRows(s * seg, seg).colwise().mean();
  }
  return t.record(std::move(out), any_grad(t, {a}), [a, seg](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    Mat full(av.rows(), av.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      for (int r = 0; r < seg; ++r) full.row(s * seg + r) = g.row(s) / seg;
    }
    t.accumulate(a, full);
  });
}

Var mean_rows(Tape& t, Var a) {
  const Mat& av = t.value(a);
  Mat out = av.colwise().mean();
  return t.record(std::move(out), any_grad(t, {a}), [a](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    Mat full = g.replicate(av.rows(), 1) / static_cast<double>(av.rows());
    t.accumulate(a, full);
  });
}

Var sum_all(Tape& t, Var a) {
  Mat out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), any_grad(t, {a}), [a](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    t.accumulate(a, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

// ---- attention --------------------------------------------------------------

Var multi_head_attention(Tape& t, Var q, Var k, Var v, int heads, Mat* probs_out) {
  const Mat& qv = t.value(q);
  const Mat& kv = t.value(k);
  const Mat& vv = t.value(v);
  check_same_shape(qv, kv, "attention q/k");
  if (vv.rows() != kv.rows()) throw DimMismatch("attention k/v rows");
  if (heads < 1 || qv.cols() % heads != 0 || vv.cols() % heads != 0) {
    throw DimMismatch("attention width not divisible by heads");
  }
  const int dq = static_cast<int>(qv.cols()) / heads;
  const int dv = static_cast<int>(vv.cols()) / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dq));
  std::vector<Mat> probs(heads);
  Mat out(qv.rows(), vv.cols());
  for (int h = 0; h < heads; ++h) {
    Mat s = (qv.middleCols(h * dq, dq) * kv.middleCols(h * dq, dq).transpose()) * scl;
    softmax_rows(s);
    out.middleCols(h * dv, dv) = s * vv.middleCols(h * dv, dv);
    probs[h] = std::move(s);
  }
  if (probs_out) {
    *probs_out = probs[0];
    for (int h = 1; h < heads; ++h) *probs_out += probs[h];
    *probs_out /= heads;
  }
  return t.record(std::move(out), any_grad(t, {q, k, v}),
                  [q, k, v, heads, dq, dv, scl, probs = std::move(probs)](Tape& t, const Mat& g) {
                    const Mat& qv = t.value(q);
                    const Mat& kv = t.value(k);
                    const Mat& vv = t.value(v);
                    Mat dq_full = Mat::Zero(qv.rows(), qv.cols());
                    Mat dk_full = Mat::Zero(kv.rows(), kv.cols());
                    Mat dv_full = Mat::Zero(vv.rows(), vv.cols());
                    for (int h = 0; h < heads; ++h) {
                      const Mat& p = probs[h];
                      const Mat gh = g.middleCols(h * dv, dv);
                      dv_full.middleCols(h * dv, dv) = p.transpose() * gh;
                      const Mat dp = gh * vv.middleCols(h * dv, dv).transpose();
                      const Mat ds = softmax_rows_backward(p, dp) * scl;
                      dq_full.middleCols(h * dq, dq) = ds * kv.middleCols(h * dq, dq);
                      dk_full.middleCols(h * dq, dq) = ds.transpose() * qv.middleCols(h * dq, dq);
                    }
                    t.accumulate(q, dq_full);
                    t.accumulate(k, dk_full);
                    t.accumulate(v, dv_full);
                  });
}

Var grouped_attention(Tape& t, Var q, Var k, Var v, const Partition& partition) {
  const Mat& qv = t.value(q);
  const Mat& kv = t.value(k);
  const Mat& vv = t.value(v);
  check_same_shape(qv, kv, "grouped attention q/k");
  if (vv.rows() != qv.rows()) throw DimMismatch("grouped attention v rows");
  const double scl = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Mat out(vv.rows(), vv.cols());
  std::vector<Mat> probs(partition.size());
  for (std::size_t gi = 0; gi < partition.size(); ++gi) {
    const auto& idx = partition[gi];
    const auto n = static_cast<Eigen::Index>(idx.size());
    Mat qg(n, qv.cols()), kg(n, kv.cols()), vg(n, vv.cols());
    for (Eigen::Index a = 0; a < n; ++a) {
      qg.row(a) = qv.row(idx[a]);
      kg.row(a) = kv.row(idx[a]);
      vg.row(a) = vv.row(idx[a]);
    }
    Mat s = (qg * kg.transpose()) * scl;
    softmax_rows(s);
    const Mat og = s * vg;
    for (Eigen::Index a = 0; a < n; ++a) out.row(idx[a]) = og.row(a);
    probs[gi] = std::move(s);
  }
  return t.record(
      std::move(out), any_grad(t, {q, k, v}),
      [q, k, v, partition, scl, probs = std::move(probs)](Tape& t, const Mat& g) {
        const Mat& qv = t.value(q);
        const Mat& kv = t.value(k);
        const Mat& vv = t.value(v);
        Mat dqf = Mat::Zero(qv.rows(), qv.cols());
        Mat dkf = Mat::Zero(kv.rows(), kv.cols());
        Mat dvf = Mat::Zero(vv.rows(), vv.cols());
        for (std::size_t gi = 0; gi < partition.size(); ++gi) {
          const auto& idx = partition[gi];
          const auto n = static_cast<Eigen::Index>(idx.size());
          Mat qg(n, qv.cols()), kg(n, kv.cols()), vg(n, vv.cols()), gg(n, g.cols());
          for (Eigen::Index a = 0; a < n; ++a) {
            qg.row(a) = qv.row(idx[a]);
            kg.row(a) = kv.row(idx[a]);
            vg.row(a) = vv.row(idx[a]);
            gg.row(a) = g.row(idx[a]);
          }
          const Mat& p = probs[gi];
          const Mat dvg = p.transpose() * gg;
          const Mat ds = softmax_rows_backward(p, gg * vg.transpose()) * scl;
          const Mat dqg = ds * kg;
          const Mat dkg = ds.transpose() * qg;
          for (Eigen::Index a = 0; a < n; ++a) {
            dqf.row(idx[a]) = dqg.row(a);
            dkf.row(idx[a]) = dkg.row(a);
            dvf.row(idx[a]) = dvg.row(a);
          }
        }
        t.accumulate(q, dqf);
        t.accumulate(k, dkf);
        t.accumulate(v, dvf);
      });
}

namespace {

// out_i = mean of a over i's group; the operator is symmetric so it is its own
// adjoint.
Mat apply_group_mean(const Mat& a, const Partition& partition) {
  Mat out(a.rows(), a.cols());
  for (const auto& idx : partition) {
    RowVec acc = RowVec::Zero(a.cols());
    for (int i : idx) acc += a.row(i);
    acc /= static_cast<double>(idx.size());
    for (int i : idx) out.row(i) = acc;
  }
  return out;
}

}  // namespace

Var group_mean(Tape& t, Var a, const Partition& partition) {
  return t.record(apply_group_mean(t.value(a), partition), any_grad(t, {a}),
                  [a, partition](Tape& t, const Mat& g) {
                    t.accumulate(a, apply_group_mean(g, partition));
                  });
}

Var group_mean_propagate(Tape& t, Var a, const Partition& partition) {
  const Mat& av = t.value(a);
  return t.record(av + apply_group_mean(av, partition), any_grad(t, {a}),
                  [a, partition](Tape& t, const Mat& g) {
                    t.accumulate(a, g + apply_group_mean(g, partition));
                  });
}

Var group_max_propagate(Tape& t, Var a, const Partition& partition) {
  const Mat& av = t.value(a);
  Mat out = av;
  // argmax row per (group, column)
  IndexTable arg(static_cast<Eigen::Index>(partition.size()), av.cols());
  for (std::size_t gi = 0; gi < partition.size(); ++gi) {
    const auto& idx = partition[gi];
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      int best = idx[0];
      for (int i : idx) {
        if (av(i, c) > av(best, c)) best = i;
      }
      arg(static_cast<Eigen::Index>(gi), c) = best;
      for (int i : idx) out(i, c) += av(best, c);
    }
  }
  return t.record(std::move(out), any_grad(t, {a}),
                  [a, partition, arg = std::move(arg)](Tape& t, const Mat& g) {
                    Mat d = g;
                    for (std::size_t gi = 0; gi < partition.size(); ++gi) {
                      for (Eigen::Index c = 0; c < g.cols(); ++c) {
                        double sum = 0.0;
                        for (int i : partition[gi]) sum += g(i, c);
                        d(arg(static_cast<Eigen::Index>(gi), c), c) += sum;
                      }
                    }
                    t.accumulate(a, d);
                  });
}

// ---- ensemble ---------------------------------------------------------------

Var cosine_ensemble(Tape& t, Var baseline, const std::vector<Var>& views, double tau,
                    Mat* weights_out) {
  constexpr double kTiny = 1e-12;
  const Mat& bv = t.value(baseline);
  const int m = static_cast<int>(views.size());
  if (m < 1) throw DimMismatch("ensemble needs at least one view");
  bool ng = t.needs_grad(baseline);
  for (Var f : views) {
    check_same_shape(bv, t.value(f), "ensemble view");
    ng = ng || t.needs_grad(f);
  }
  const Eigen::Index n = bv.rows();
  Mat sim(n, m), w(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double bn = bv.row(i).norm();
    for (int j = 0; j < m; ++j) {
      const auto frow = t.value(views[j]).row(i);
      const double fn = frow.norm();
      sim(i, j) = (bn < kTiny || fn < kTiny) ? 0.0 : bv.row(i).dot(frow) / (bn * fn);
    }
  }
  w = sim / tau;
  softmax_rows(w);
  Mat out = Mat::Zero(n, bv.cols());
  for (int j = 0; j < m; ++j) {
    out += (t.value(views[j]).array().colwise() * w.col(j).array()).matrix();
  }
  if (weights_out) *weights_out = w;
  return t.record(
      std::move(out), ng,
      [baseline, views, tau, sim = std::move(sim), w = std::move(w)](Tape& t, const Mat& g) {
        const Mat& bv = t.value(baseline);
        const Eigen::Index n = bv.rows();
        const int m = static_cast<int>(views.size());
        // dL/dw_ij = g_i . F_ij, then through the softmax and cosine.
        Mat dw(n, m);
        for (int j = 0; j < m; ++j) {
          dw.col(j) = (g.array() * t.value(views[j]).array()).rowwise().sum();
        }
        const Mat ds = softmax_rows_backward(w, dw) / tau;
        Mat db = Mat::Zero(n, bv.cols());
        for (int j = 0; j < m; ++j) {
          const Mat& fv = t.value(views[j]);
          Mat df = (g.array().colwise() * w.col(j).array()).matrix();
          for (Eigen::Index i = 0; i < n; ++i) {
            const double bn = bv.row(i).norm();
            const double fn = fv.row(i).norm();
            if (bn < 1e-12 || fn < 1e-12) continue;
            const double s = sim(i, j);
            df.row(i) += ds(i, j) * (bv.row(i) / (bn * fn) - s * fv.row(i) / (fn * fn));
            db.row(i) += ds(i, j) * (fv.row(i) / (bn * fn) - s * bv.row(i) / (bn * bn));
          }
          t.accumulate(views[j], df);
        }
        t.accumulate(baseline, db);
      });
}

// ---- loss -------------------------------------------------------------------

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const Mat& lv = t.value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != lv.rows()) {
    throw DimMismatch("cross_entropy label count");
  }
  Mat p = lv;
  softmax_rows(p);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= lv.cols()) throw DimMismatch("cross_entropy label out of range");
    const double mx = lv.row(r).maxCoeff();
    const double lse = mx + std::log((lv.row(r).array() - mx).exp().sum());
    loss += lse - lv(r, y);
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<double>(lv.rows());
  return t.record(std::move(out), any_grad(t, {logits}),
                  [logits, labels, p = std::move(p)](Tape& t, const Mat& g) {
                    Mat d = p;
                    for (std::size_t r = 0; r < labels.size(); ++r) d(r, labels[r]) -= 1.0;
                    d *= g(0, 0) / static_cast<double>(labels.size());
                    t.accumulate(logits, d);
                  });
}

}  // namespace a2p::ad
