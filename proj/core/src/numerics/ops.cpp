#include "eegscribe/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "eegscribe/errors.hpp"

namespace eegscribe::nx {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw ContractError("operands recorded on different graphs");
  return *a.graph;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, Var x, std::size_t rank) {
  if (x.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out.drop_grad();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return g.record("add", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
    std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
    accumulate(gr.grad(a), up);
    accumulate(gr.grad(b), up);
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.drop_grad();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return g.record("sub", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
    std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
    accumulate(gr.grad(a), up);
    auto gb = gr.grad(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= up[i];
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  out.drop_grad();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return g.record("mul", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
    std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
    const auto av = gr.value(a).data();
    const auto bv = gr.value(b).data();
    {
      auto ga = gr.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up[i] * bv[i];
    }
    auto gb = gr.grad(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += up[i] * av[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.drop_grad();
  for (auto& v : out.data()) v *= factor;
  return a.graph->record("scale", std::move(out), {a.id}, [a = a.id, factor](Graph& gr, std::size_t self) {
    auto up = gr.grad(self);
    auto ga = gr.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * up[i];
  });
}

Var square(Var a) {
  Tensor out = a.value();
  out.drop_grad();
  for (auto& v : out.data()) v *= v;
  return a.graph->record("square", std::move(out), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
    auto up = gr.grad(self);
    const auto av = gr.value(a).data();
    auto ga = gr.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * av[i] * up[i];
  });
}

Var sum(Var a) {
  const auto d = a.value().data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  return a.graph->record("sum", Tensor::scalar(s), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
    const double up = gr.grad(self)[0];
    for (auto& v : gr.grad(a)) v += up;
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var relu(Var x) {
  Tensor out = x.value();
  out.drop_grad();
  for (auto& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return x.graph->record("relu", std::move(out), {x.id}, [x = x.id](Graph& gr, std::size_t self) {
    auto up = gr.grad(self);
    const auto xv = gr.value(x).data();
    auto gx = gr.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += up[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  return x.graph->record("reshape", std::move(out), {x.id}, [x = x.id](Graph& gr, std::size_t self) {
    std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
    accumulate(gr.grad(x), up);
  });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Maps every output linear index to its source linear index.
std::vector<std::size_t> permutation_index(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = strides_of(in_shape);
  std::vector<std::size_t> src(shape_numel(in_shape));
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t lin = 0; lin < src.size(); ++lin) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_strides[axes[i]];
    src[lin] = s;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return src;
}

}  // namespace

Var permute(Var x, std::vector<std::size_t> axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  auto src = permutation_index(in_shape, axes);
  const auto xv = x.value().data();
  std::vector<double> data(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) data[i] = xv[src[i]];
  return x.graph->record("permute", Tensor(std::move(out_shape), std::move(data)), {x.id},
                         [x = x.id, src = std::move(src)](Graph& gr, std::size_t self) {
                           std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
                           auto gx = gr.grad(x);
                           for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += up[i];
                         });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Graph* g = parts[0].graph;
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.graph != g) throw ContractError("concat: operands recorded on different graphs");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: extent mismatch " + shape_string(s) + " vs " + shape_string(first));
      }
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const Var& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  Tensor out(out_shape);
  auto od = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  od.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[k];
  }
  return g->record("concat", std::move(out), ids,
                   [ids, widths, outer, row](Graph& gr, std::size_t self) {
                     std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       auto gp = gr.grad(ids[k]);
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < widths[k]; ++i) gp[o * widths[k] + i] += up[o * row + off + i];
                       }
                       off += widths[k];
                     }
                   });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (begin >= end || end > s[0]) throw DimensionError("slice_rows: invalid range");
  const std::size_t inner = x.value().numel() / s[0];
  Shape out_shape = s;
  out_shape[0] = end - begin;
  const auto xv = x.value().data();
  std::vector<double> data(xv.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                           xv.begin() + static_cast<std::ptrdiff_t>(end * inner));
  return x.graph->record("slice_rows", Tensor(std::move(out_shape), std::move(data)), {x.id},
                         [x = x.id, offset = begin * inner](Graph& gr, std::size_t self) {
                           std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
                           auto gx = gr.grad(x);
                           for (std::size_t i = 0; i < up.size(); ++i) gx[offset + i] += up[i];
                         });
}

Var matmul(Var x, Var w) {
  Graph& g = same_graph(x, w);
  require_rank("matmul", x, 2);
  require_rank("matmul", w, 2);
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(x.shape()) + " · " +
                         shape_string(w.shape()));
  }
  Tensor out({m, n});
  MapMat(out.data().data(), m, n).noalias() =
      ConstMapMat(x.value().data().data(), m, k) * ConstMapMat(w.value().data().data(), k, n);
  return g.record("matmul", std::move(out), {x.id, w.id}, [x = x.id, w = w.id, m, k, n](Graph& gr, std::size_t self) {
    ConstMapMat up(gr.grad(self).data(), m, n);
    RowMat dx = up * ConstMapMat(gr.value(w).data().data(), k, n).transpose();
    RowMat dw = ConstMapMat(gr.value(x).data().data(), m, k).transpose() * up;
    MapMat(gr.grad(x).data(), m, k) += dx;
    MapMat(gr.grad(w).data(), k, n) += dw;
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw DimensionError("matmul_nt: feature dimensions differ");
  Tensor out({m, n});
  MapMat(out.data().data(), m, n).noalias() =
      ConstMapMat(a.value().data().data(), m, k) * ConstMapMat(b.value().data().data(), n, k).transpose();
  return g.record("matmul_nt", std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id, m, k, n](Graph& gr, std::size_t self) {
                    ConstMapMat up(gr.grad(self).data(), m, n);
                    RowMat da = up * ConstMapMat(gr.value(b).data().data(), n, k);
                    RowMat db = up.transpose() * ConstMapMat(gr.value(a).data().data(), m, k);
                    MapMat(gr.grad(a).data(), m, k) += da;
                    MapMat(gr.grad(b).data(), n, k) += db;
                  });
}

Var row_dot(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_rank("row_dot", a, 2);
  require_same_shape("row_dot", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1);
  Tensor out({m, 1});
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += av[i * k + j] * bv[i * k + j];
    out[i] = s;
  }
  return g.record("row_dot", std::move(out), {a.id, b.id}, [a = a.id, b = b.id, m, k](Graph& gr, std::size_t self) {
    std::vector<double> up(gr.grad(self).begin(), gr.grad(self).end());
    const auto av = gr.value(a).data();
    const auto bv = gr.value(b).data();
    {
      auto ga = gr.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += up[i] * bv[i * k + j];
    }
    auto gb = gr.grad(b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gb[i * k + j] += up[i] * av[i * k + j];
  });
}

Var l2_normalize_rows(Var x) {
  require_rank("l2_normalize_rows", x, 2);
  const std::size_t m = x.dim(0), k = x.dim(1);
  Tensor out = x.value();
  out.drop_grad();
  std::vector<double> norms(m);
  auto od = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += od[i * k + j] * od[i * k + j];
    norms[i] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < k; ++j) od[i * k + j] /= norms[i];
  }
  return x.graph->record("l2_normalize_rows", std::move(out), {x.id},
                         [x = x.id, m, k, norms = std::move(norms)](Graph& gr, std::size_t self) {
                           const auto up = gr.grad(self);
                           const auto y = gr.value(self).data();
                           auto gx = gr.grad(x);
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < k; ++j) dot += y[i * k + j] * up[i * k + j];
                             for (std::size_t j = 0; j < k; ++j) {
                               gx[i * k + j] += (up[i * k + j] - y[i * k + j] * dot) / norms[i];
                             }
                           }
                         });
}

Var dense(Var x, Var weight, Var bias) {
  Graph& g = same_graph(x, weight);
  require_rank("dense", x, 2);
  require_rank("dense", weight, 2);
  const std::size_t b = x.dim(0), in = x.dim(1), outw = weight.dim(1);
  if (weight.dim(0) != in) {
    throw DimensionError("dense: input width " + std::to_string(in) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  if (bias.value().numel() != outw) throw DimensionError("dense: bias length does not match output width");
  Tensor out({b, outw});
  MapMat y(out.data().data(), b, outw);
  y.noalias() = ConstMapMat(x.value().data().data(), b, in) * ConstMapMat(weight.value().data().data(), in, outw);
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t o = 0; o < outw; ++o) y(i, o) += bv[o];
  return g.record("dense", std::move(out), {x.id, weight.id, bias.id},
                  [x = x.id, w = weight.id, bi = bias.id, b, in, outw](Graph& gr, std::size_t self) {
                    ConstMapMat up(gr.grad(self).data(), b, outw);
                    RowMat dx = up * ConstMapMat(gr.value(w).data().data(), in, outw).transpose();
                    RowMat dw = ConstMapMat(gr.value(x).data().data(), b, in).transpose() * up;
                    MapMat(gr.grad(x).data(), b, in) += dx;
                    MapMat(gr.grad(w).data(), in, outw) += dw;
                    auto gb = gr.grad(bi);
                    for (std::size_t i = 0; i < b; ++i)
                      for (std::size_t o = 0; o < outw; ++o) gb[o] += up(i, o);
                  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, c_in, t_in, c_out, c_group, out_group, k, t_out;
  Conv1dOptions opt;

  std::size_t col_rows() const { return c_group * k; }
  // Output positions [lo, hi) whose tap j lands inside the unpadded input.
  std::pair<std::size_t, std::size_t> valid_range(std::size_t j) const {
    std::size_t lo = 0;
    while (lo < t_out && lo * opt.stride + j < opt.pad_left) ++lo;
    std::size_t hi = t_out;
    while (hi > lo && (hi - 1) * opt.stride + j >= opt.pad_left + t_in) --hi;
    return {lo, hi};
  }
  // Batch items per im2col chunk; keeps the column buffer around 16 MiB.
  std::size_t chunk() const {
    const std::size_t per_item = col_rows() * t_out;
    return std::max<std::size_t>(1, std::min(batch, (std::size_t{1} << 21) / std::max<std::size_t>(1, per_item)));
  }
};

void im2col(const double* x, const ConvGeometry& geo, std::size_t group, std::size_t b0, std::size_t nb,
            RowMat& cols) {
  const std::size_t width = nb * geo.t_out;
  cols.resize(static_cast<Eigen::Index>(geo.col_rows()), static_cast<Eigen::Index>(width));
  for (std::size_t c = 0; c < geo.c_group; ++c) {
    for (std::size_t j = 0; j < geo.k; ++j) {
      double* row = cols.data() + (c * geo.k + j) * width;
      const auto [t_lo, t_hi] = geo.valid_range(j);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        const double* src = x + ((b0 + bi) * geo.c_in + group * geo.c_group + c) * geo.t_in;
        double* dst = row + bi * geo.t_out;
        std::fill(dst, dst + t_lo, 0.0);
        std::fill(dst + t_hi, dst + geo.t_out, 0.0);
        if (geo.opt.stride == 1) {
          std::copy(src + t_lo + j - geo.opt.pad_left, src + t_hi + j - geo.opt.pad_left, dst + t_lo);
        } else {
          for (std::size_t t = t_lo; t < t_hi; ++t) dst[t] = src[t * geo.opt.stride + j - geo.opt.pad_left];
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, const ConvGeometry& geo, std::size_t group, std::size_t b0, std::size_t nb,
                double* dx) {
  const std::size_t width = nb * geo.t_out;
  for (std::size_t c = 0; c < geo.c_group; ++c) {
    for (std::size_t j = 0; j < geo.k; ++j) {
      const double* row = cols.data() + (c * geo.k + j) * width;
      const auto [t_lo, t_hi] = geo.valid_range(j);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        double* dst = dx + ((b0 + bi) * geo.c_in + group * geo.c_group + c) * geo.t_in;
        const double* src = row + bi * geo.t_out;
        for (std::size_t t = t_lo; t < t_hi; ++t) dst[t * geo.opt.stride + j - geo.opt.pad_left] += src[t];
      }
    }
  }
}

}  // namespace

Var conv1d(Var x, Var kernel, Var bias, const Conv1dOptions& options) {
  Graph& g = same_graph(x, kernel);
  require_rank("conv1d", x, 3);
  require_rank("conv1d", kernel, 3);
  if (options.stride == 0 || options.groups == 0) throw ParameterError("conv1d: stride and groups must be positive");
  ConvGeometry geo{};
  geo.opt = options;
  geo.batch = x.dim(0);
  geo.c_in = x.dim(1);
  geo.t_in = x.dim(2);
  geo.c_out = kernel.dim(0);
  geo.k = kernel.dim(2);
  if (geo.c_in % options.groups != 0 || geo.c_out % options.groups != 0) {
    throw DimensionError("conv1d: channel counts not divisible by groups");
  }
  geo.c_group = geo.c_in / options.groups;
  geo.out_group = geo.c_out / options.groups;
  if (kernel.dim(1) != geo.c_group) {
    throw DimensionError("conv1d: kernel " + shape_string(kernel.shape()) + " does not match input " +
                         shape_string(x.shape()));
  }
  if (bias.value().numel() != geo.c_out) throw DimensionError("conv1d: bias length does not match output channels");
  const std::size_t padded = geo.t_in + options.pad_left + options.pad_right;
  if (padded < geo.k) {
    throw DimensionError("conv1d: kernel width " + std::to_string(geo.k) + " exceeds padded length " +
                         std::to_string(padded));
  }
  geo.t_out = (padded - geo.k) / options.stride + 1;

  Tensor out({geo.batch, geo.c_out, geo.t_out});
  const double* xv = x.value().data().data();
  const double* kv = kernel.value().data().data();
  const auto bv = bias.value().data();
  double* ov = out.data().data();
  RowMat cols;
  RowMat prod;
  const std::size_t chunk = geo.chunk();
  for (std::size_t b0 = 0; b0 < geo.batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, geo.batch - b0);
    for (std::size_t grp = 0; grp < options.groups; ++grp) {
      im2col(xv, geo, grp, b0, nb, cols);
      ConstMapMat kg(kv + grp * geo.out_group * geo.col_rows(), geo.out_group, geo.col_rows());
      prod.noalias() = kg * cols;
      for (std::size_t o = 0; o < geo.out_group; ++o) {
        const std::size_t oc = grp * geo.out_group + o;
        for (std::size_t bi = 0; bi < nb; ++bi) {
          double* dst = ov + ((b0 + bi) * geo.c_out + oc) * geo.t_out;
          const double* src = prod.data() + o * prod.cols() + bi * geo.t_out;
          for (std::size_t t = 0; t < geo.t_out; ++t) dst[t] = src[t] + bv[oc];
        }
      }
    }
  }

  return g.record("conv1d", std::move(out), {x.id, kernel.id, bias.id},
                  [x = x.id, kid = kernel.id, bid = bias.id, geo](Graph& gr, std::size_t self) {
                    const double* up = gr.grad(self).data();
                    const double* xv = gr.value(x).data().data();
                    const double* kv = gr.value(kid).data().data();
                    const bool need_dx = gr.tracked(x);
                    double* dx = need_dx ? gr.grad(x).data() : nullptr;
                    double* dk = gr.grad(kid).data();
                    auto db = gr.grad(bid);
                    RowMat cols;
                    RowMat dout;
                    RowMat dcols;
                    const std::size_t chunk = geo.chunk();
                    for (std::size_t b0 = 0; b0 < geo.batch; b0 += chunk) {
                      const std::size_t nb = std::min(chunk, geo.batch - b0);
                      for (std::size_t grp = 0; grp < geo.opt.groups; ++grp) {
                        dout.resize(static_cast<Eigen::Index>(geo.out_group),
                                    static_cast<Eigen::Index>(nb * geo.t_out));
                        for (std::size_t o = 0; o < geo.out_group; ++o) {
                          const std::size_t oc = grp * geo.out_group + o;
                          double s = 0.0;
                          for (std::size_t bi = 0; bi < nb; ++bi) {
                            const double* src = up + ((b0 + bi) * geo.c_out + oc) * geo.t_out;
                            double* dst = dout.data() + o * dout.cols() + bi * geo.t_out;
                            for (std::size_t t = 0; t < geo.t_out; ++t) {
                              dst[t] = src[t];
                              s += src[t];
                            }
                          }
                          db[oc] += s;
                        }
                        im2col(xv, geo, grp, b0, nb, cols);
                        MapMat dkg(dk + grp * geo.out_group * geo.col_rows(), geo.out_group, geo.col_rows());
                        dkg.noalias() += dout * cols.transpose();
                        if (!need_dx) continue;
                        ConstMapMat kg(kv + grp * geo.out_group * geo.col_rows(), geo.out_group, geo.col_rows());
                        dcols.noalias() = kg.transpose() * dout;
                        col2im_add(dcols, geo, grp, b0, nb, dx);
                      }
                    }
                  });
}

Var conv1d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  return conv1d(x, kernel, bias, Conv1dOptions::symmetric(stride, padding));
}

Var global_avg_pool(Var x) {
  require_rank("global_avg_pool", x, 3);
  const std::size_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
  Tensor out({b, c});
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < b * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t; ++j) s += xv[i * t + j];
    out[i] = s / static_cast<double>(t);
  }
  return x.graph->record("global_avg_pool", std::move(out), {x.id}, [x = x.id, b, c, t](Graph& gr, std::size_t self) {
    const auto up = gr.grad(self);
    auto gx = gr.grad(x);
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < b * c; ++i)
      for (std::size_t j = 0; j < t; ++j) gx[i * t + j] += up[i] * inv;
  });
}

Var avg_pool1d(Var x, std::size_t kernel, std::size_t stride) {
  require_rank("avg_pool1d", x, 3);
  if (kernel == 0 || stride == 0) throw ParameterError("avg_pool1d: kernel and stride must be positive");
  const std::size_t rows = x.dim(0) * x.dim(1), t = x.dim(2);
  if (t < kernel) throw DimensionError("avg_pool1d: kernel longer than input");
  const std::size_t t_out = (t - kernel) / stride + 1;
  Tensor out({x.dim(0), x.dim(1), t_out});
  const auto xv = x.value().data();
  const double inv = 1.0 / static_cast<double>(kernel);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < t_out; ++o) {
      double s = 0.0;
      for (std::size_t j = 0; j < kernel; ++j) s += xv[r * t + o * stride + j];
      out[r * t_out + o] = s * inv;
    }
  }
  return x.graph->record("avg_pool1d", std::move(out), {x.id},
                         [x = x.id, rows, t, t_out, kernel, stride, inv](Graph& gr, std::size_t self) {
                           const auto up = gr.grad(self);
                           auto gx = gr.grad(x);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < t_out; ++o)
                               for (std::size_t j = 0; j < kernel; ++j)
                                 gx[r * t + o * stride + j] += up[r * t_out + o] * inv;
                         });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [B×K]");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor p({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p.at(i, j) = std::exp(logits.at(i, j) - mx);
      z += p.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) p.at(i, j) /= z;
  }
  return p;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw DimensionError("softmax_cross_entropy: label count does not match batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) +
                       ")");
    }
  }
  const Tensor& z = logits.value();
  Tensor probs({b, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs.at(i, j) = std::exp(z.at(i, j) - mx);
      s += probs.at(i, j);
    }
    const double log_z = mx + std::log(s);
    loss += log_z - z.at(i, static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < k; ++j) probs.at(i, j) /= s;
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.graph->record("softmax_cross_entropy", Tensor::scalar(loss), {logits.id},
                              [x = logits.id, b, k, probs = std::move(probs), lab = std::move(lab)](Graph& gr,
                                                                                                    std::size_t self) {
                                const double up = gr.grad(self)[0] / static_cast<double>(b);
                                auto gx = gr.grad(x);
                                for (std::size_t i = 0; i < b; ++i) {
                                  for (std::size_t j = 0; j < k; ++j) {
                                    const double target = (static_cast<int>(j) == lab[i]) ? 1.0 : 0.0;
                                    gx[i * k + j] += up * (probs.at(i, j) - target);
                                  }
                                }
                              });
}

}  // namespace eegscribe::nx
