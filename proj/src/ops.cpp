#include "camadapt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "camadapt/error.hpp"

namespace camadapt::ops {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": shape mismatch " +
                                          a.value().shape_string() + " vs " +
                                          b.value().shape_string());
  }
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": expected rank " +
                                          std::to_string(rank) + ", got " +
                                          a.value().shape_string());
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Elementwise unary op helper: derivative computed from (input, output).
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(std::move(out), {a}, [deriv](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

// Unfolds one [C, H, W] image into a [C*k*k, Ho*Wo] column matrix.
void im2col(const double* img, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        const double* src = img + static_cast<std::size_t>(c) * height * width;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? line[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a column matrix back into an image.
void col2im(const double* col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* img) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        double* dst = img + static_cast<std::size_t>(c) * height * width;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          double* line = dst + static_cast<std::size_t>(ih) * width;
          const double* src = row + oh * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) line[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_inplace(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (p.requires_grad) p.ensure_grad().add_inplace(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) pa.ensure_grad().add_inplace(self.grad);
    Node& pb = parent(self, 1);
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sum(const Var& a) {
  const auto& v = a.value().storage();
  Tensor out({1}, std::accumulate(v.begin(), v.end(), 0.0));
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_square(const Var& a) {
  const auto& v = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * v[i];
  const double n = static_cast<double>(v.size());
  Tensor out({1}, acc / n);
  return make_result(std::move(out), {a}, [n](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const double up = self.grad[0] * 2.0 / n;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * p.value[i];
  });
}

Var mean_abs(const Var& a) {
  const auto& v = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += std::abs(v[i]);
  const double n = static_cast<double>(v.size());
  Tensor out({1}, acc / n);
  return make_result(std::move(out), {a}, [n](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const double up = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      g[i] += up * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
    }
  });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(a, [slope](double x) { return x > 0 ? x : slope * x; },
               [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    fail(ErrorKind::kInvalidArgument, "conv2d: weight " + weight.value().shape_string() +
                                          " incompatible with input " + x.value().shape_string());
  }
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) fail(ErrorKind::kInvalidArgument, "conv2d: empty output");
  const int rows = cin * k * k;
  const int plane = oh * ow;
  const bool has_bias = static_cast<bool>(bias);
  const bool keep_cols = weight.requires_grad() && grad_enabled();

  Tensor out({n, cout, oh, ow});
  std::vector<double> cols(keep_cols ? static_cast<std::size_t>(n) * rows * plane
                                     : static_cast<std::size_t>(rows) * plane);
  ConstMatrixMap wmat(weight.value().data(), cout, rows);
  for (int s = 0; s < n; ++s) {
    double* col = cols.data() + (keep_cols ? static_cast<std::size_t>(s) * rows * plane : 0);
    im2col(x.value().data() + static_cast<std::size_t>(s) * cin * h * w, cin, h, w, k, stride, pad,
           oh, ow, col);
    MatrixMap y(out.data() + static_cast<std::size_t>(s) * cout * plane, cout, plane);
    y.noalias() = wmat * ConstMatrixMap(col, rows, plane);
    if (has_bias) {
      for (int c = 0; c < cout; ++c) y.row(c).array() += bias.value()[c];
    }
  }

  if (!keep_cols) cols.clear();
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(
      std::move(out), std::move(parents),
      [=, cols = std::move(cols)](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        ConstMatrixMap wm(pw.value.data(), cout, rows);
        std::vector<double> scratch;
        if (px.requires_grad || (pw.requires_grad && !keep_cols)) {
          scratch.resize(static_cast<std::size_t>(rows) * plane);
        }
        for (int s = 0; s < n; ++s) {
          ConstMatrixMap dy(self.grad.data() + static_cast<std::size_t>(s) * cout * plane, cout,
                            plane);
          if (pw.requires_grad) {
            const double* col;
            if (keep_cols) {
              col = cols.data() + static_cast<std::size_t>(s) * rows * plane;
            } else {
              im2col(px.value.data() + static_cast<std::size_t>(s) * cin * h * w, cin, h, w, k,
                     stride, pad, oh, ow, scratch.data());
              col = scratch.data();
            }
            MatrixMap dw(pw.ensure_grad().data(), cout, rows);
            dw.noalias() += dy * ConstMatrixMap(col, rows, plane).transpose();
          }
          if (px.requires_grad) {
            MatrixMap dcol(scratch.data(), rows, plane);
            dcol.noalias() = wm.transpose() * dy;
            col2im(scratch.data(), cin, h, w, k, stride, pad, oh, ow,
                   px.ensure_grad().data() + static_cast<std::size_t>(s) * cin * h * w);
          }
        }
        if (has_bias) {
          Node& pb = parent(self, 2);
          if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (int s = 0; s < n; ++s) {
              for (int c = 0; c < cout; ++c) {
                const double* g = self.grad.data() + (static_cast<std::size_t>(s) * cout + c) * plane;
                gb[c] += std::accumulate(g, g + plane, 0.0);
              }
            }
          }
        }
      });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin || weight.dim(3) != k) {
    fail(ErrorKind::kInvalidArgument, "conv_transpose2d: weight " + weight.value().shape_string() +
                                          " incompatible with input " + x.value().shape_string());
  }
  const int oh = (h - 1) * stride - 2 * pad + k;
  const int ow = (w - 1) * stride - 2 * pad + k;
  const int rows = cout * k * k;
  const int plane = h * w;
  const int out_plane = oh * ow;
  const bool has_bias = static_cast<bool>(bias);

  Tensor out({n, cout, oh, ow});
  ConstMatrixMap wmat(weight.value().data(), cin, rows);
  std::vector<double> col(static_cast<std::size_t>(rows) * plane);
  for (int s = 0; s < n; ++s) {
    ConstMatrixMap xs(x.value().data() + static_cast<std::size_t>(s) * cin * plane, cin, plane);
    MatrixMap cm(col.data(), rows, plane);
    cm.noalias() = wmat.transpose() * xs;
    double* ys = out.data() + static_cast<std::size_t>(s) * cout * out_plane;
    col2im(col.data(), cout, oh, ow, k, stride, pad, h, w, ys);
    if (has_bias) {
      for (int c = 0; c < cout; ++c) {
        double* p = ys + static_cast<std::size_t>(c) * out_plane;
        const double b = bias.value()[c];
        for (int i = 0; i < out_plane; ++i) p[i] += b;
      }
    }
  }

  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    ConstMatrixMap wm(pw.value.data(), cin, rows);
    std::vector<double> dcol(static_cast<std::size_t>(rows) * plane);
    for (int s = 0; s < n; ++s) {
      im2col(self.grad.data() + static_cast<std::size_t>(s) * cout * out_plane, cout, oh, ow, k,
             stride, pad, h, w, dcol.data());
      ConstMatrixMap dc(dcol.data(), rows, plane);
      if (px.requires_grad) {
        MatrixMap dx(px.ensure_grad().data() + static_cast<std::size_t>(s) * cin * plane, cin,
                     plane);
        dx.noalias() += wm * dc;
      }
      if (pw.requires_grad) {
        ConstMatrixMap xs(px.value.data() + static_cast<std::size_t>(s) * cin * plane, cin, plane);
        MatrixMap dw(pw.ensure_grad().data(), cin, rows);
        dw.noalias() += xs * dc.transpose();
      }
    }
    if (has_bias) {
      Node& pb = parent(self, 2);
      if (pb.requires_grad) {
        Tensor& gb = pb.ensure_grad();
        for (int s = 0; s < n; ++s) {
          for (int c = 0; c < cout; ++c) {
            const double* g =
                self.grad.data() + (static_cast<std::size_t>(s) * cout + c) * out_plane;
            gb[c] += std::accumulate(g, g + out_plane, 0.0);
          }
        }
      }
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  require_rank(x, 4, "instance_norm");
  const int n = x.dim(0), c = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  const int groups = n * c;
  Tensor out(x.shape());
  std::vector<double> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    const double* src = x.value().data() + static_cast<std::size_t>(g) * plane;
    double* dst = out.data() + static_cast<std::size_t>(g) * plane;
    double mu = 0.0;
    for (int i = 0; i < plane; ++i) mu += src[i];
    mu /= plane;
    double var = 0.0;
    for (int i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= plane;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[g] = is;
    for (int i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is;
  }
  return make_result(std::move(out), {x}, [=, inv_std = std::move(inv_std)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& gx = p.ensure_grad();
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = static_cast<std::size_t>(g) * plane;
      const double* dy = self.grad.data() + base;
      const double* y = self.value.data() + base;
      double mdy = 0.0, mdyy = 0.0;
      for (int i = 0; i < plane; ++i) {
        mdy += dy[i];
        mdyy += dy[i] * y[i];
      }
      mdy /= plane;
      mdyy /= plane;
      double* dx = gx.data() + base;
      for (int i = 0; i < plane; ++i) dx[i] += inv_std[g] * (dy[i] - mdy - y[i] * mdyy);
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (int g = 0; g < n * c; ++g) {
    const double* src = x.value().data() + static_cast<std::size_t>(g) * plane;
    out[g] = std::accumulate(src, src + plane, 0.0) / plane;
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& gx = p.ensure_grad();
    for (int g = 0; g < n * c; ++g) {
      const double up = self.grad[g] / plane;
      double* dst = gx.data() + static_cast<std::size_t>(g) * plane;
      for (int i = 0; i < plane; ++i) dst[i] += up;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  const int n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    fail(ErrorKind::kInvalidArgument, "linear: weight " + weight.value().shape_string() +
                                          " incompatible with input " + x.value().shape_string());
  }
  Tensor out({n, out_dim});
  MatrixMap y(out.data(), n, out_dim);
  y.noalias() = ConstMatrixMap(x.value().data(), n, in) *
                ConstMatrixMap(weight.value().data(), out_dim, in).transpose();
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias) {
    for (int r = 0; r < n; ++r) {
      for (int o = 0; o < out_dim; ++o) y(r, o) += bias.value()[o];
    }
  }
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    ConstMatrixMap dy(self.grad.data(), n, out_dim);
    if (px.requires_grad) {
      MatrixMap dx(px.ensure_grad().data(), n, in);
      dx.noalias() += dy * ConstMatrixMap(pw.value.data(), out_dim, in);
    }
    if (pw.requires_grad) {
      MatrixMap dw(pw.ensure_grad().data(), out_dim, in);
      dw.noalias() += dy.transpose() * ConstMatrixMap(px.value.data(), n, in);
    }
    if (has_bias) {
      Node& pb = parent(self, 2);
      if (pb.requires_grad) {
        Tensor& gb = pb.ensure_grad();
        for (int r = 0; r < n; ++r) {
          for (int o = 0; o < out_dim; ++o) gb[o] += dy(r, o);
        }
      }
    }
  });
}

Var concat_columns(const std::vector<Var>& blocks) {
  if (blocks.empty()) fail(ErrorKind::kInvalidArgument, "concat_columns: no blocks");
  const int n = blocks.front().dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& b : blocks) {
    require_rank(b, 2, "concat_columns");
    if (b.dim(0) != n) fail(ErrorKind::kInvalidArgument, "concat_columns: batch mismatch");
    widths.push_back(b.dim(1));
    total += b.dim(1);
  }
  Tensor out({n, total});
  int offset = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < widths[k]; ++j) {
        out[static_cast<std::size_t>(r) * total + offset + j] =
            blocks[k].value()[static_cast<std::size_t>(r) * widths[k] + j];
      }
    }
    offset += widths[k];
  }
  return make_result(std::move(out), blocks, [=](Node& self) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = parent(self, k);
      if (p.requires_grad) {
        Tensor& g = p.ensure_grad();
        for (int r = 0; r < n; ++r) {
          for (int j = 0; j < widths[k]; ++j) {
            g[static_cast<std::size_t>(r) * widths[k] + j] +=
                self.grad[static_cast<std::size_t>(r) * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Var standardize_columns(const Var& x, const std::vector<double>& shift,
                        const std::vector<double>& divisor) {
  require_rank(x, 2, "standardize_columns");
  const int n = x.dim(0), f = x.dim(1);
  if (static_cast<int>(shift.size()) != f || static_cast<int>(divisor.size()) != f) {
    fail(ErrorKind::kInvalidArgument, "standardize_columns: statistics width mismatch");
  }
  Tensor out(x.shape());
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < f; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * f + j;
      out[i] = (x.value()[i] - shift[j]) / divisor[j];
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < f; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * f + j;
        g[i] += self.grad[i] / divisor[j];
      }
    }
  });
}

Var log_sigmoid_clamped(const Var& logits, bool positive, double floor) {
  const double log_floor = std::log(floor);
  const double sign = positive ? 1.0 : -1.0;
  // log sigmoid(s z) = -softplus(-s z)
  auto value = [sign](double z) {
    const double t = -sign * z;
    return -(std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))));
  };
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(value(logits.value()[i]), log_floor);
  }
  return make_result(std::move(out), {logits}, [=](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = p.value[i];
      if (value(z) < log_floor) continue;
      // d/dz log sigmoid(s z) = s * sigmoid(-s z)
      const double t = -sign * z;
      const double sig = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
      g[i] += self.grad[i] * sign * sig;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    fail(ErrorKind::kInvalidArgument, "softmax_cross_entropy: label count mismatch");
  }
  std::vector<double> probs(static_cast<std::size_t>(n) * k);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= k) {
      fail(ErrorKind::kInvalidArgument, "softmax_cross_entropy: label out of range");
    }
    const double* z = logits.value().data() + static_cast<std::size_t>(r) * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(r) * k + j] = std::exp(z[j] - zmax) / denom;
    loss -= (z[labels[r]] - zmax) - std::log(denom);
  }
  Tensor out({1}, loss / n);
  return make_result(std::move(out), {logits}, [=, probs = std::move(probs)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const double up = self.grad[0] / n;
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        g[i] += up * (probs[i] - (j == labels[r] ? 1.0 : 0.0));
      }
    }
  });
}

SoftBin soft_bin(double value, int bins) {
  if (!std::isfinite(value)) fail(ErrorKind::kNumerical, "histogram input is not finite");
  const double t = value * bins - 0.5;
  if (t <= 0.0) return {0, 1.0, 0.0};
  if (t >= bins - 1) return {bins - 2, 0.0, 0.0};
  const int lower = static_cast<int>(std::floor(t));
  return {lower, 1.0 - (t - lower), -static_cast<double>(bins)};
}

Var soft_histogram(const Var& x, int bins) {
  require_rank(x, 4, "soft_histogram");
  if (bins < 2) fail(ErrorKind::kInvalidArgument, "soft_histogram: bins must be >= 2");
  const int n = x.dim(0), c = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  Tensor out({n, c * bins});
  const double inv = 1.0 / plane;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.value().data() + (static_cast<std::size_t>(s) * c + ch) * plane;
      double* hist = out.data() + (static_cast<std::size_t>(s) * c + ch) * bins;
      for (int i = 0; i < plane; ++i) {
        const SoftBin b = soft_bin(src[i], bins);
        hist[b.lower] += b.lower_weight * inv;
        hist[b.lower + 1] += (1.0 - b.lower_weight) * inv;
      }
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * plane;
        const double* up = self.grad.data() + (static_cast<std::size_t>(s) * c + ch) * bins;
        for (int i = 0; i < plane; ++i) {
          const SoftBin b = soft_bin(p.value[base + i], bins);
          if (b.slope == 0.0) continue;
          g[base + i] += inv * b.slope * (up[b.lower] - up[b.lower + 1]);
        }
      }
    }
  });
}

namespace {

constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
constexpr double kLogFloor = 1e-12;

double entropy_term(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }
double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

}  // namespace

Var soft_channel_mutual_information(const Var& x, int bins) {
  require_rank(x, 4, "soft_channel_mutual_information");
  if (x.dim(1) != 3) fail(ErrorKind::kInvalidArgument, "soft MI expects 3 channels");
  if (bins < 2) fail(ErrorKind::kInvalidArgument, "soft MI: bins must be >= 2");
  const int n = x.dim(0);
  const int plane = x.dim(2) * x.dim(3);
  const double inv = 1.0 / plane;
  const int bb = bins * bins;
  // Joint histograms are kept for the backward pass: [n][pair][bins*bins].
  std::vector<double> joints(static_cast<std::size_t>(n) * 3 * bb, 0.0);
  Tensor out({n, 3});
  for (int s = 0; s < n; ++s) {
    const double* img = x.value().data() + static_cast<std::size_t>(s) * 3 * plane;
    for (int pr = 0; pr < 3; ++pr) {
      const double* u = img + static_cast<std::size_t>(kPairs[pr][0]) * plane;
      const double* v = img + static_cast<std::size_t>(kPairs[pr][1]) * plane;
      double* joint = joints.data() + (static_cast<std::size_t>(s) * 3 + pr) * bb;
      for (int i = 0; i < plane; ++i) {
        const SoftBin bu = soft_bin(u[i], bins);
        const SoftBin bv = soft_bin(v[i], bins);
        const double wu[2] = {bu.lower_weight, 1.0 - bu.lower_weight};
        const double wv[2] = {bv.lower_weight, 1.0 - bv.lower_weight};
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            joint[(bu.lower + a) * bins + bv.lower + b] += wu[a] * wv[b] * inv;
          }
        }
      }
      std::vector<double> pu(bins, 0.0), pv(bins, 0.0);
      double hj = 0.0;
      for (int a = 0; a < bins; ++a) {
        for (int b = 0; b < bins; ++b) {
          const double pj = joint[a * bins + b];
          pu[a] += pj;
          pv[b] += pj;
          hj += entropy_term(pj);
        }
      }
      double hu = 0.0, hv = 0.0;
      for (int a = 0; a < bins; ++a) {
        hu += entropy_term(pu[a]);
        hv += entropy_term(pv[a]);
      }
      // MI = H(U) + H(V) - H(U,V) with H = -sum p log p.
      out[static_cast<std::size_t>(s) * 3 + pr] = hj - hu - hv;
    }
  }
  return make_result(std::move(out), {x}, [=, joints = std::move(joints)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    std::vector<double> dmi(bb);
    for (int s = 0; s < n; ++s) {
      for (int pr = 0; pr < 3; ++pr) {
        const double up = self.grad[static_cast<std::size_t>(s) * 3 + pr];
        if (up == 0.0) continue;
        const double* joint = joints.data() + (static_cast<std::size_t>(s) * 3 + pr) * bb;
        std::vector<double> pu(bins, 0.0), pv(bins, 0.0);
        for (int a = 0; a < bins; ++a) {
          for (int b = 0; b < bins; ++b) {
            pu[a] += joint[a * bins + b];
            pv[b] += joint[a * bins + b];
          }
        }
        for (int a = 0; a < bins; ++a) {
          for (int b = 0; b < bins; ++b) {
            dmi[a * bins + b] = safe_log(joint[a * bins + b]) - safe_log(pu[a]) - safe_log(pv[b]) - 1.0;
          }
        }
        const std::size_t ubase = (static_cast<std::size_t>(s) * 3 + kPairs[pr][0]) * plane;
        const std::size_t vbase = (static_cast<std::size_t>(s) * 3 + kPairs[pr][1]) * plane;
        for (int i = 0; i < plane; ++i) {
          const SoftBin bu = soft_bin(p.value[ubase + i], bins);
          const SoftBin bv = soft_bin(p.value[vbase + i], bins);
          if (bu.slope == 0.0 && bv.slope == 0.0) continue;
          const double g00 = dmi[bu.lower * bins + bv.lower];
          const double g01 = dmi[bu.lower * bins + bv.lower + 1];
          const double g10 = dmi[(bu.lower + 1) * bins + bv.lower];
          const double g11 = dmi[(bu.lower + 1) * bins + bv.lower + 1];
          const double wu = bu.lower_weight, wv = bv.lower_weight;
          // d/dw of sum_{ab} w_a(u) w_b(v) g_ab, with w_1 = 1 - w_0.
          const double du = wv * (g00 - g10) + (1.0 - wv) * (g01 - g11);
          const double dv = wu * (g00 - g01) + (1.0 - wu) * (g10 - g11);
          g[ubase + i] += up * inv * bu.slope * du;
          g[vbase + i] += up * inv * bv.slope * dv;
        }
      }
    }
  });
}

}  // namespace camadapt::ops
