#include "mgvq/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mgvq/error.hpp"

namespace mgvq::ops {

namespace {

void require_matrix(const Var& v, const char* what) {
  if (!v.defined() || v.value().rank() != 2) {
    throw InvalidArgument(std::string(what) + ": expected a rank-2 tensor");
  }
}

void require_same(const Var& a, const Var& b, const char* what) {
  if (!a.value().same_shape(b.value())) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + a.value().shape_string() +
                          " vs " + b.value().shape_string());
  }
}

void accumulate(const NodePtr& n, const Tensor& g, double s = 1.0) {
  if (!n->requires_grad) return;
  auto& buf = n->grad_buffer();
  auto dst = buf.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  out.mat() += b.value().mat();
  return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<const NodePtr> in) {
    accumulate(in[0], g);
    accumulate(in[1], g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<const NodePtr> in) {
    accumulate(in[0], g);
    accumulate(in[1], g, -1.0);
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  return make_result(std::move(out), {a},
                     [s](const Tensor& g, std::span<const NodePtr> in) { accumulate(in[0], g, s); });
}

Var add_constant(const Var& a, const Tensor& c) {
  if (!a.value().same_shape(c)) throw InvalidArgument("add_constant: shape mismatch");
  Tensor out = a.value();
  out.mat() += c.mat();
  return make_result(std::move(out), {a},
                     [](const Tensor& g, std::span<const NodePtr> in) { accumulate(in[0], g); });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  Tensor mask = out;
  return make_result(std::move(out), {a}, [mask](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    auto& buf = in[0]->grad_buffer();
    for (Index i = 0; i < g.size(); ++i) {
      if (mask[i] > 0.0) buf[i] += g[i];
    }
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  out.mat() = a.value().mat().transpose();
  return make_result(std::move(out), {a}, [](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    in[0]->grad_buffer().mat() += g.mat().transpose();
  });
}

Var concat_rows(const Var& a, const Var& b) {
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  if (a.cols() != b.cols()) throw InvalidArgument("concat_rows: column count mismatch");
  const Index ra = a.rows();
  const Index rb = b.rows();
  const Index c = a.cols();
  Tensor out = Tensor::matrix(ra + rb, c);
  out.mat().topRows(ra) = a.value().mat();
  out.mat().bottomRows(rb) = b.value().mat();
  return make_result(std::move(out), {a, b}, [ra, rb](const Tensor& g, std::span<const NodePtr> in) {
    if (in[0]->requires_grad) in[0]->grad_buffer().mat() += g.mat().topRows(ra);
    if (in[1]->requires_grad) in[1]->grad_buffer().mat() += g.mat().bottomRows(rb);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  require_matrix(a, "slice_cols");
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw InvalidArgument("slice_cols: range out of bounds");
  }
  Tensor out = Tensor::matrix(a.rows(), count);
  out.mat() = a.value().mat().middleCols(start, count);
  return make_result(std::move(out), {a}, [start, count](const Tensor& g, std::span<const NodePtr> in) {
    if (in[0]->requires_grad) in[0]->grad_buffer().mat().middleCols(start, count) += g.mat();
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  require_matrix(a, "gather_rows");
  const Index c = a.cols();
  std::vector<Index> idx(rows.begin(), rows.end());
  Tensor out = Tensor::matrix(static_cast<Index>(idx.size()), c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw InvalidArgument("gather_rows: index out of range");
    out.mat().row(static_cast<Index>(r)) = a.value().mat().row(idx[r]);
  }
  return make_result(std::move(out), {a}, [idx](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    auto m = in[0]->grad_buffer().mat();
    for (std::size_t r = 0; r < idx.size(); ++r) m.row(idx[r]) += g.mat().row(static_cast<Index>(r));
  });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<const NodePtr> in) {
    if (in[0]->requires_grad) in[0]->grad_buffer().mat().noalias() += g.mat() * in[1]->value.mat().transpose();
    if (in[1]->requires_grad) in[1]->grad_buffer().mat().noalias() += in[0]->value.mat().transpose() * g.mat();
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  if (x.cols() != w.rows()) throw InvalidArgument("linear: input width mismatch");
  if (b.size() != w.cols()) throw InvalidArgument("linear: bias width mismatch");
  Tensor out = Tensor::matrix(x.rows(), w.cols());
  auto om = out.mat();
  om.noalias() = x.value().mat() * w.value().mat();
  Eigen::Map<const Eigen::RowVectorXd> bias(b.value().data(), b.size());
  om.rowwise() += bias;
  return make_result(std::move(out), {x, w, b}, [](const Tensor& g, std::span<const NodePtr> in) {
    if (in[0]->requires_grad) in[0]->grad_buffer().mat().noalias() += g.mat() * in[1]->value.mat().transpose();
    if (in[1]->requires_grad) in[1]->grad_buffer().mat().noalias() += in[0]->value.mat().transpose() * g.mat();
    if (in[2]->requires_grad) {
      auto& gb = in[2]->grad_buffer();
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), gb.size()) += g.mat().colwise().sum();
    }
  });
}

Var conv1d(const Var& x, const Var& w, const Var& b, const ConvGeometry& geo) {
  require_matrix(x, "conv1d");
  require_matrix(w, "conv1d");
  const Index cin = x.rows();
  const Index t_in = x.cols();
  const Index k = geo.kernel;
  const Index s = geo.stride;
  const Index cout = w.rows();
  if (k < 1 || s < 1) throw InvalidArgument("conv1d: kernel and stride must be positive");
  if (w.cols() != cin * k) throw InvalidArgument("conv1d: weight shape " + w.value().shape_string());
  if (b.size() != cout) throw InvalidArgument("conv1d: bias size mismatch");
  const Index padded = t_in + geo.pad_left + geo.pad_right;
  if (padded < k) throw InvalidArgument("conv1d: input shorter than kernel after padding");
  const Index t_out = (padded - k) / s + 1;

  Tensor cols = Tensor::matrix(cin * k, t_out);
  const double* xd = x.value().data();
  for (Index ci = 0; ci < cin; ++ci) {
    for (Index kk = 0; kk < k; ++kk) {
      double* row = cols.data() + (ci * k + kk) * t_out;
      for (Index t = 0; t < t_out; ++t) {
        const Index src = t * s + kk - geo.pad_left;
        row[t] = (src >= 0 && src < t_in) ? xd[ci * t_in + src] : 0.0;
      }
    }
  }
  Tensor out = Tensor::matrix(cout, t_out);
  out.mat().noalias() = w.value().mat() * cols.mat();
  Eigen::Map<const Eigen::VectorXd> bias(b.value().data(), cout);
  out.mat().colwise() += bias;

  if (!grad_enabled()) return Var(std::move(out));
  return make_result(std::move(out), {x, w, b},
                     [cols = std::move(cols), cin, t_in, k, s, t_out, pl = geo.pad_left](
                         const Tensor& g, std::span<const NodePtr> in) {
                       if (in[1]->requires_grad) in[1]->grad_buffer().mat().noalias() += g.mat() * cols.mat().transpose();
                       if (in[2]->requires_grad) {
                         auto& gb = in[2]->grad_buffer();
                         Eigen::Map<Eigen::VectorXd>(gb.data(), gb.size()) += g.mat().rowwise().sum();
                       }
                       if (in[0]->requires_grad) {
                         RowMatrix gcols = in[1]->value.mat().transpose() * g.mat();
                         double* gx = in[0]->grad_buffer().data();
                         for (Index ci = 0; ci < cin; ++ci) {
                           for (Index kk = 0; kk < k; ++kk) {
                             const double* row = gcols.data() + (ci * k + kk) * t_out;
                             for (Index t = 0; t < t_out; ++t) {
                               const Index src = t * s + kk - pl;
                               if (src >= 0 && src < t_in) gx[ci * t_in + src] += row[t];
                             }
                           }
                         }
                       }
                     });
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, Index kernel, Index stride,
                     Index crop_left, Index out_len) {
  require_matrix(x, "conv_transpose1d");
  require_matrix(w, "conv_transpose1d");
  const Index cin = x.rows();
  const Index t_in = x.cols();
  const Index k = kernel;
  const Index s = stride;
  if (w.rows() != cin || w.cols() % k != 0) {
    throw InvalidArgument("conv_transpose1d: weight shape " + w.value().shape_string());
  }
  const Index cout = w.cols() / k;
  if (b.size() != cout) throw InvalidArgument("conv_transpose1d: bias size mismatch");
  const Index full = (t_in - 1) * s + k;
  if (crop_left < 0 || out_len < 1 || crop_left + out_len > full) {
    throw InvalidArgument("conv_transpose1d: crop window outside full output");
  }

  RowMatrix cols = w.value().mat().transpose() * x.value().mat();  // [cout*k x t_in]
  Tensor out = Tensor::matrix(cout, out_len);
  double* od = out.data();
  for (Index co = 0; co < cout; ++co) {
    const double bias = b.value()[co];
    for (Index t = 0; t < out_len; ++t) od[co * out_len + t] = bias;
    for (Index kk = 0; kk < k; ++kk) {
      const double* row = cols.data() + (co * k + kk) * t_in;
      for (Index t = 0; t < t_in; ++t) {
        const Index dst = t * s + kk - crop_left;
        if (dst >= 0 && dst < out_len) od[co * out_len + dst] += row[t];
      }
    }
  }
  return make_result(std::move(out), {x, w, b},
                     [cout, t_in, k, s, crop_left, out_len](const Tensor& g, std::span<const NodePtr> in) {
                       RowMatrix gcols = RowMatrix::Zero(cout * k, t_in);
                       const double* gd = g.data();
                       for (Index co = 0; co < cout; ++co) {
                         for (Index kk = 0; kk < k; ++kk) {
                           double* row = gcols.data() + (co * k + kk) * t_in;
                           for (Index t = 0; t < t_in; ++t) {
                             const Index dst = t * s + kk - crop_left;
                             if (dst >= 0 && dst < out_len) row[t] = gd[co * out_len + dst];
                           }
                         }
                       }
                       if (in[2]->requires_grad) {
                         auto& gb = in[2]->grad_buffer();
                         Eigen::Map<Eigen::VectorXd>(gb.data(), gb.size()) += g.mat().rowwise().sum();
                       }
                       if (in[1]->requires_grad) in[1]->grad_buffer().mat().noalias() += in[0]->value.mat() * gcols.transpose();
                       if (in[0]->requires_grad) in[0]->grad_buffer().mat().noalias() += in[1]->value.mat() * gcols;
                     });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_matrix(x, "layer_norm");
  const Index t = x.rows();
  const Index d = x.cols();
  if (gamma.size() != d || beta.size() != d) throw InvalidArgument("layer_norm: parameter size mismatch");
  Tensor xhat = Tensor::matrix(t, d);
  std::vector<double> inv_std(static_cast<std::size_t>(t));
  Tensor out = Tensor::matrix(t, d);
  const auto xm = x.value().mat();
  Eigen::Map<const Eigen::RowVectorXd> gm(gamma.value().data(), d);
  Eigen::Map<const Eigen::RowVectorXd> bm(beta.value().data(), d);
  for (Index r = 0; r < t; ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    xhat.mat().row(r) = (xm.row(r).array() - mu) * is;
    out.mat().row(r) = xhat.mat().row(r).cwiseProduct(gm) + bm;
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), t, d](
                         const Tensor& g, std::span<const NodePtr> in) {
                       const auto gmat = g.mat();
                       const auto xh = xhat.mat();
                       if (in[1]->requires_grad) {
                         auto& gg = in[1]->grad_buffer();
                         Eigen::Map<Eigen::RowVectorXd>(gg.data(), d) += gmat.cwiseProduct(xh).colwise().sum();
                       }
                       if (in[2]->requires_grad) {
                         auto& gb = in[2]->grad_buffer();
                         Eigen::Map<Eigen::RowVectorXd>(gb.data(), d) += gmat.colwise().sum();
                       }
                       if (in[0]->requires_grad) {
                         Eigen::Map<const Eigen::RowVectorXd> gam(in[1]->value.data(), d);
                         auto gx = in[0]->grad_buffer().mat();
                         for (Index r = 0; r < t; ++r) {
                           Eigen::RowVectorXd gxh = gmat.row(r).cwiseProduct(gam);
                           const double m1 = gxh.mean();
                           const double m2 = gxh.cwiseProduct(xh.row(r)).mean();
                           gx.row(r) += inv_std[static_cast<std::size_t>(r)] *
                                        (gxh.array() - m1 - xh.row(r).array() * m2).matrix();
                         }
                       }
                     });
}

Var attention(const Var& q, const Var& k, const Var& v, Index heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const Index tq = q.rows();
  const Index tk = k.rows();
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk) throw InvalidArgument("attention: shape mismatch");
  if (heads < 1 || d % heads != 0) throw InvalidArgument("attention: width not divisible by heads");
  const Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool record = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());

  Tensor out = Tensor::matrix(tq, d);
  std::vector<RowMatrix> probs;
  if (record) probs.reserve(static_cast<std::size_t>(heads));
  const auto qm = q.value().mat();
  const auto km = k.value().mat();
  const auto vm = v.value().mat();
  for (Index h = 0; h < heads; ++h) {
    RowMatrix p = (qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose()) * sc;
    for (Index r = 0; r < tq; ++r) {
      const double mx = p.row(r).maxCoeff();
      p.row(r) = (p.row(r).array() - mx).exp();
      p.row(r) /= p.row(r).sum();
    }
    out.mat().middleCols(h * dh, dh).noalias() = p * vm.middleCols(h * dh, dh);
    if (record) probs.push_back(std::move(p));
  }
  if (!record) return Var(std::move(out));
  return make_result(std::move(out), {q, k, v},
                     [probs = std::move(probs), heads, dh, sc](const Tensor& g, std::span<const NodePtr> in) {
                       const auto gm = g.mat();
                       const auto qv = in[0]->value.mat();
                       const auto kv = in[1]->value.mat();
                       const auto vv = in[2]->value.mat();
                       for (Index h = 0; h < heads; ++h) {
                         const RowMatrix& p = probs[static_cast<std::size_t>(h)];
                         const auto go = gm.middleCols(h * dh, dh);
                         if (in[2]->requires_grad) in[2]->grad_buffer().mat().middleCols(h * dh, dh).noalias() += p.transpose() * go;
                         RowMatrix gp = go * vv.middleCols(h * dh, dh).transpose();
                         Eigen::VectorXd rs = (gp.cwiseProduct(p)).rowwise().sum();
                         RowMatrix gs = p.cwiseProduct((gp.colwise() - rs));
                         gs *= sc;
                         if (in[0]->requires_grad) in[0]->grad_buffer().mat().middleCols(h * dh, dh).noalias() += gs * kv.middleCols(h * dh, dh);
                         if (in[1]->requires_grad) in[1]->grad_buffer().mat().middleCols(h * dh, dh).noalias() += gs.transpose() * qv.middleCols(h * dh, dh);
                       }
                     });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    const double gv = g[0];
    for (double& v : in[0]->grad_buffer().storage()) v += gv;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw InvalidArgument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var dot_constant(const Var& a, const Tensor& c) {
  if (a.size() != c.size()) throw InvalidArgument("dot_constant: size mismatch");
  double s = 0.0;
  for (Index i = 0; i < c.size(); ++i) s += a.value()[i] * c[i];
  return make_result(Tensor::scalar(s), {a}, [c](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    auto& buf = in[0]->grad_buffer();
    for (Index i = 0; i < c.size(); ++i) buf[i] += g[0] * c[i];
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw InvalidArgument("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].item();
  return make_result(Tensor::scalar(s), terms, [weights](const Tensor& g, std::span<const NodePtr> in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i]->requires_grad) in[i]->grad_buffer()[0] += weights[i] * g[0];
    }
  });
}

}  // namespace mgvq::ops
