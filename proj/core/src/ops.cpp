#include "fusecore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "fusecore/error.hpp"

namespace fusecore {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims as_matrix(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  const std::size_t last = s.back();
  return {t.size() / last, last};
}

MapC view(const Tensor& t) {
  const Dims d = as_matrix(t);
  return MapC(t.data().data(), static_cast<Eigen::Index>(d.rows), static_cast<Eigen::Index>(d.cols));
}

Map view(Buffer& buf, Dims d) {
  return Map(buf.data(), static_cast<Eigen::Index>(d.rows), static_cast<Eigen::Index>(d.cols));
}

MapC view(std::span<const double> buf, Dims d) {
  return MapC(buf.data(), static_cast<Eigen::Index>(d.rows), static_cast<Eigen::Index>(d.cols));
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps the forward value and, if needed, records the backward closure.
template <typename Fn>
Tensor emit(Shape shape, Buffer data, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  Tensor out = Tensor::adopt(std::move(shape), std::move(data));
  if (!needs_grad(inputs)) return out;
  out.set_requires_grad(true);
  Tape::Node node;
  node.output = out.impl();
  for (const Tensor* t : inputs) {
    if (t->defined()) node.inputs.push_back(t->impl());
  }
  node.backward = std::forward<Fn>(fn);
  Tape::current()->record(std::move(node));
  return out;
}

// Same as emit, but the backward closure also receives the forward output.
template <typename Fn>
Tensor emit_with_output(Shape shape, Buffer data, std::initializer_list<const Tensor*> inputs,
                        Fn&& fn) {
  Tensor out = Tensor::adopt(std::move(shape), std::move(data));
  if (!needs_grad(inputs)) return out;
  out.set_requires_grad(true);
  Tape::Node node;
  node.output = out.impl();
  for (const Tensor* t : inputs) {
    if (t->defined()) node.inputs.push_back(t->impl());
  }
  // The node owns the output, so the raw pointer lives as long as the closure.
  const detail::TensorImpl* raw = out.impl().get();
  node.backward = [fn = std::forward<Fn>(fn), raw](std::span<const double> g) { fn(g, raw->data); };
  Tape::current()->record(std::move(node));
  return out;
}

// Gradient buffer of an input, or nullptr when it does not take gradients.
Buffer* grad_sink(const detail::ImplPtr& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  return &impl->ensure_grad();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Dims da = as_matrix(a);
  const Dims db = as_matrix(b);
  if (da.cols != db.rows) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const Dims dout{da.rows, db.cols};
  Buffer out(dout.rows * dout.cols);
  view(out, dout).noalias() = view(a) * view(b);
  auto ai = a.impl();
  auto bi = b.impl();
  return emit({dout.rows, dout.cols}, std::move(out), {&a, &b}, [ai, bi, da, db, dout](std::span<const double> g) {
    const MapC gm = view(g, dout);
    if (auto* ga = grad_sink(ai)) view(*ga, da).noalias() += gm * view(bi->data, db).transpose();
    if (auto* gb = grad_sink(bi)) view(*gb, db).noalias() += view(ai->data, da).transpose() * gm;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const Dims da = as_matrix(a);
  const Dims db = as_matrix(b);
  if (da.cols != db.cols) {
    throw DimensionError("matmul_nt: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + "^T");
  }
  const Dims dout{da.rows, db.rows};
  Buffer out(dout.rows * dout.cols);
  view(out, dout).noalias() = view(a) * view(b).transpose();
  auto ai = a.impl();
  auto bi = b.impl();
  return emit({dout.rows, dout.cols}, std::move(out), {&a, &b}, [ai, bi, da, db, dout](std::span<const double> g) {
    const MapC gm = view(g, dout);
    if (auto* ga = grad_sink(ai)) view(*ga, da).noalias() += gm * view(bi->data, db);
    if (auto* gb = grad_sink(bi)) view(*gb, db).noalias() += gm.transpose() * view(ai->data, da);
  });
}

Tensor transpose(const Tensor& a) {
  const Dims da = as_matrix(a);
  const Dims dout{da.cols, da.rows};
  Buffer out(a.size());
  view(out, dout) = view(a).transpose();
  auto ai = a.impl();
  return emit({dout.rows, dout.cols}, std::move(out), {&a}, [ai, da, dout](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) view(*ga, da) += view(g, dout).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const Dims dx = as_matrix(x);
  const Dims dw = as_matrix(w);
  if (dx.cols != dw.cols) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " + shape_str(w.shape()));
  }
  if (bias.defined() && bias.size() != dw.rows) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " + shape_str(w.shape()));
  }
  const Dims dout{dx.rows, dw.rows};
  Buffer out(dout.rows * dout.cols);
  Map om = view(out, dout);
  om.noalias() = view(x) * view(w).transpose();
  if (bias.defined()) {
    const Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), static_cast<Eigen::Index>(dw.rows));
    om.rowwise() += bv;
  }
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.defined() ? bias.impl() : detail::ImplPtr{};
  return emit({dout.rows, dout.cols}, std::move(out), {&x, &w, &bias},
              [xi, wi, bi, dx, dw, dout](std::span<const double> g) {
                const MapC gm = view(g, dout);
                if (auto* gx = grad_sink(xi)) view(*gx, dx).noalias() += gm * view(wi->data, dw);
                if (auto* gw = grad_sink(wi)) view(*gw, dw).noalias() += gm.transpose() * view(xi->data, dx);
                if (auto* gb = grad_sink(bi)) {
                  Eigen::Map<Eigen::RowVectorXd> gbv(gb->data(), static_cast<Eigen::Index>(dw.rows));
                  gbv += gm.colwise().sum();
                }
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return emit(a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grad_sink(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return emit(a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grad_sink(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return emit(a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bi->data[i];
    }
    if (auto* gb = grad_sink(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  auto ai = a.impl();
  return emit(a.shape(), std::move(out), {&a}, [ai, factor](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const Dims da = as_matrix(a);
  if (row.size() != da.cols) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not fit " + shape_str(a.shape()));
  }
  Buffer out(a.size());
  const auto ad = a.data();
  const auto rd = row.data();
  for (std::size_t i = 0; i < da.rows; ++i) {
    for (std::size_t j = 0; j < da.cols; ++j) out[i * da.cols + j] = ad[i * da.cols + j] + rd[j];
  }
  auto ai = a.impl();
  auto ri = row.impl();
  return emit(a.shape(), std::move(out), {&a, &row}, [ai, ri, da](std::span<const double> g) {
    if (auto* ga = grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gr = grad_sink(ri)) {
      for (std::size_t i = 0; i < da.rows; ++i) {
        for (std::size_t j = 0; j < da.cols; ++j) (*gr)[j] += g[i * da.cols + j];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto xd = x.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto xi = x.impl();
  return emit(x.shape(), std::move(out), {&x}, [xi](std::span<const double> g) {
    if (auto* gx = grad_sink(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xi->data[i];
        const double u = kC * (v + kA * v * v * v);
        const double th = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        (*gx)[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    }
  });
}

namespace {

// Softmax over the first width(i) entries of each row; the rest stay zero.
template <typename Width>
Tensor softmax_impl(const Tensor& x, Width width) {
  const Dims d = as_matrix(x);
  const auto xd = x.data();
  Buffer out(x.size(), 0.0);
  for (std::size_t i = 0; i < d.rows; ++i) {
    const std::size_t w = width(i);
    const double* row = xd.data() + i * d.cols;
    double* orow = out.data() + i * d.cols;
    const double mx = *std::max_element(row, row + w);
    double total = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < w; ++j) orow[j] *= inv;
  }
  auto xi = x.impl();
  return emit_with_output(x.shape(), std::move(out), {&x},
                          [xi, d, width](std::span<const double> g, const Buffer& y) {
                            auto* gx = grad_sink(xi);
                            if (!gx) return;
                            for (std::size_t i = 0; i < d.rows; ++i) {
                              const std::size_t w = width(i);
                              const std::size_t base = i * d.cols;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < w; ++j) dot += g[base + j] * y[base + j];
                              for (std::size_t j = 0; j < w; ++j) (*gx)[base + j] += y[base + j] * (g[base + j] - dot);
                            }
                          });
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  const std::size_t cols = as_matrix(x).cols;
  return softmax_impl(x, [cols](std::size_t) { return cols; });
}

Tensor softmax_rows_causal(const Tensor& x) {
  const Dims d = as_matrix(x);
  if (d.rows != d.cols) throw DimensionError("softmax_rows_causal: expected a square matrix, got " + shape_str(x.shape()));
  return softmax_impl(x, [](std::size_t i) { return i + 1; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const Dims d = as_matrix(x);
  if (gain.size() != d.cols || bias.size() != d.cols) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not fit last dimension of " + shape_str(x.shape()));
  }
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  Buffer out(x.size());
  // Normalized values and inverse std, kept for the backward pass.
  Buffer xhat(x.size());
  Buffer inv_std(d.rows);
  const double n = static_cast<double>(d.cols);
  for (std::size_t i = 0; i < d.rows; ++i) {
    const double* row = xd.data() + i * d.cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < d.cols; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < d.cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d.cols; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[i * d.cols + j] = h;
      out[i * d.cols + j] = h * gd[j] + bd[j];
    }
  }
  auto xi = x.impl();
  auto gi = gain.impl();
  auto bi = bias.impl();
  return emit(x.shape(), std::move(out), {&x, &gain, &bias},
              [xi, gi, bi, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> g) {
                auto* gx = grad_sink(xi);
                auto* gg = grad_sink(gi);
                auto* gb = grad_sink(bi);
                const double n = static_cast<double>(d.cols);
                for (std::size_t i = 0; i < d.rows; ++i) {
                  const std::size_t base = i * d.cols;
                  double sum_dh = 0.0;
                  double sum_dh_h = 0.0;
                  for (std::size_t j = 0; j < d.cols; ++j) {
                    const double dh = g[base + j] * gi->data[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[base + j];
                    if (gg) (*gg)[j] += g[base + j] * xhat[base + j];
                    if (gb) (*gb)[j] += g[base + j];
                  }
                  if (gx) {
                    for (std::size_t j = 0; j < d.cols; ++j) {
                      const double dh = g[base + j] * gi->data[j];
                      (*gx)[base + j] += inv_std[i] * (dh - sum_dh / n - xhat[base + j] * sum_dh_h / n);
                    }
                  }
                }
              });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  const Dims d = as_matrix(logits);
  if (targets.size() != d.rows || mask.size() != d.rows) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for logits " + shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < d.rows; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= d.cols) {
      throw ContractError("cross_entropy_rows: target id " + std::to_string(targets[i]) + " outside vocabulary of " +
                          std::to_string(d.cols));
    }
    ++count;
  }
  if (count == 0) throw InvalidBatchError("cross_entropy_rows: every position is masked out");
  const auto ld = logits.data();
  // Softmax rows for the selected positions, reused by backward.
  Buffer probs(count * d.cols);
  std::vector<std::size_t> picked;
  picked.reserve(count);
  double total = 0.0;
  for (std::size_t i = 0, k = 0; i < d.rows; ++i) {
    if (!mask[i]) continue;
    const double* row = ld.data() + i * d.cols;
    double* prow = probs.data() + k * d.cols;
    const double mx = *std::max_element(row, row + d.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < d.cols; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (std::size_t j = 0; j < d.cols; ++j) prow[j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
    picked.push_back(i);
    ++k;
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  auto li = logits.impl();
  std::vector<int> tgt(targets.begin(), targets.end());
  return emit({1}, {total * inv_count}, {&logits},
              [li, d, inv_count, probs = std::move(probs), picked = std::move(picked),
               tgt = std::move(tgt)](std::span<const double> g) {
                auto* gl = grad_sink(li);
                if (!gl) return;
                const double s = g[0] * inv_count;
                for (std::size_t k = 0; k < picked.size(); ++k) {
                  const std::size_t i = picked[k];
                  const double* prow = probs.data() + k * d.cols;
                  double* grow = gl->data() + i * d.cols;
                  for (std::size_t j = 0; j < d.cols; ++j) grow[j] += s * prow[j];
                  grow[tgt[i]] -= s;
                }
              });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xi = x.impl();
  return emit({1}, {total}, {&x}, [xi](std::span<const double> g) {
    if (auto* gx = grad_sink(xi)) {
      for (double& v : *gx) v += g[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  const std::size_t cols = as_matrix(parts.front()).cols;
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (as_matrix(p).cols != cols) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += as_matrix(p).rows;
  }
  Buffer out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = Tensor::adopt({rows, cols}, std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (!any || Tape::current() == nullptr) return result;
  result.set_requires_grad(true);
  Tape::Node node;
  node.output = result.impl();
  std::vector<detail::ImplPtr> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  node.inputs = impls;
  node.backward = [impls](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& impl : impls) {
      const std::size_t n = impl->data.size();
      if (auto* gp = grad_sink(impl)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[offset + i];
      }
      offset += n;
    }
  };
  Tape::current()->record(std::move(node));
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const Dims d = as_matrix(x);
  if (count == 0 || start + count > d.rows) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_str(x.shape()));
  }
  const auto xd = x.data();
  Buffer out(xd.begin() + start * d.cols, xd.begin() + (start + count) * d.cols);
  auto xi = x.impl();
  return emit({count, d.cols}, std::move(out), {&x}, [xi, start, d](std::span<const double> g) {
    if (auto* gx = grad_sink(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[start * d.cols + i] += g[i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const std::size_t rows = as_matrix(parts.front()).rows;
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (as_matrix(p).rows != rows) {
      throw DimensionError("concat_cols: height mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    cols += as_matrix(p).cols;
  }
  Buffer out(rows * cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = as_matrix(p).cols;
    const auto pd = p.data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(pd.begin() + i * w, pd.begin() + (i + 1) * w, out.begin() + i * cols + offset);
    }
    offset += w;
  }
  Tensor result = Tensor::adopt({rows, cols}, std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (!any || Tape::current() == nullptr) return result;
  result.set_requires_grad(true);
  Tape::Node node;
  node.output = result.impl();
  std::vector<detail::ImplPtr> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  node.inputs = impls;
  node.backward = [impls, rows, cols](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& impl : impls) {
      const std::size_t w = impl->data.size() / rows;
      if (auto* gp = grad_sink(impl)) {
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * cols + off + j];
        }
      }
      off += w;
    }
  };
  Tape::current()->record(std::move(node));
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const Dims d = as_matrix(x);
  if (count == 0 || start + count > d.cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_str(x.shape()));
  }
  const auto xd = x.data();
  Buffer out(d.rows * count);
  for (std::size_t i = 0; i < d.rows; ++i) {
    std::copy(xd.begin() + i * d.cols + start, xd.begin() + i * d.cols + start + count, out.begin() + i * count);
  }
  auto xi = x.impl();
  return emit({d.rows, count}, std::move(out), {&x}, [xi, start, count, d](std::span<const double> g) {
    if (auto* gx = grad_sink(xi)) {
      for (std::size_t i = 0; i < d.rows; ++i) {
        for (std::size_t j = 0; j < count; ++j) (*gx)[i * d.cols + start + j] += g[i * count + j];
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const Dims d = as_matrix(table);
  if (ids.empty()) throw ContractError("gather_rows: no ids");
  const auto td = table.data();
  Buffer out(ids.size() * d.cols);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || static_cast<std::size_t>(ids[k]) >= d.rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[k]) + " outside table of " + std::to_string(d.rows) +
                          " rows");
    }
    std::copy(td.begin() + ids[k] * d.cols, td.begin() + (ids[k] + 1) * d.cols, out.begin() + k * d.cols);
  }
  auto ti = table.impl();
  std::vector<int> idv(ids.begin(), ids.end());
  return emit({ids.size(), d.cols}, std::move(out), {&table}, [ti, d, idv = std::move(idv)](std::span<const double> g) {
    if (auto* gt = grad_sink(ti)) {
      for (std::size_t k = 0; k < idv.size(); ++k) {
        for (std::size_t j = 0; j < d.cols; ++j) (*gt)[idv[k] * d.cols + j] += g[k * d.cols + j];
      }
    }
  });
}

Tensor mean_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const Dims d = as_matrix(x);
  if (rows.empty()) throw ContractError("mean_rows: empty row selection");
  const auto xd = x.data();
  Buffer out(d.cols, 0.0);
  for (std::size_t r : rows) {
    if (r >= d.rows) throw DimensionError("mean_rows: row " + std::to_string(r) + " outside " + shape_str(x.shape()));
    for (std::size_t j = 0; j < d.cols; ++j) out[j] += xd[r * d.cols + j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out) v *= inv;
  auto xi = x.impl();
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  return emit({1, d.cols}, std::move(out), {&x}, [xi, d, inv, sel = std::move(sel)](std::span<const double> g) {
    if (auto* gx = grad_sink(xi)) {
      for (std::size_t r : sel) {
        for (std::size_t j = 0; j < d.cols; ++j) (*gx)[r * d.cols + j] += g[j] * inv;
      }
    }
  });
}

}  // namespace fusecore
