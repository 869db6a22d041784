#include <algorithm>

#include "cdcl/errors.hpp"
#include "cdcl/ops.hpp"
#include "kernels.hpp"

namespace cdcl {

namespace {

constexpr std::size_t kCellMajorBelow = 64;

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t cells() const { return oh * ow; }
};

// Unrolls every receptive field into a column: col[patch x cells].
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t n = g.cells();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * n;
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ih = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          double* dst = row + oi * g.ow;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long iw = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            dst[oj] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t n = g.cells();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * n;
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ih = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long iw = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += row[oi * g.ow + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(w.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " with padding " + std::to_string(padding));
  }
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t K = g.patch();
  const std::size_t N = g.cells();
  std::vector<double> col(K * N);
  im2col(x.values().data(), g, col.data());
  auto wv = w.values();
  std::vector<double> out(g.c_out * N, 0.0);

  // Small output maps run cell-major (col transposed to [cells x patch]) so
  // the inner loops span the patch instead of a handful of cells.
  const bool cell_major = N < kCellMajorBelow;
  if (cell_major) {
    std::vector<double> colt(N * K);
    for (std::size_t q = 0; q < K; ++q) {
      for (std::size_t j = 0; j < N; ++j) colt[j * K + q] = col[q * N + j];
    }
    col = std::move(colt);
    for (std::size_t o = 0; o < g.c_out; ++o) {
      for (std::size_t j = 0; j < N; ++j) out[o * N + j] = detail::dot(wv.data() + o * K, col.data() + j * K, K);
    }
  } else {
    for (std::size_t o = 0; o < g.c_out; ++o) {
      double* orow = out.data() + o * N;
      for (std::size_t q = 0; q < K; ++q) {
        const double wq = wv[o * K + q];
        const double* crow = col.data() + q * N;
        for (std::size_t j = 0; j < N; ++j) orow[j] += wq * crow[j];
      }
    }
  }

  return make_op_result({g.c_out, g.oh, g.ow}, std::move(out), {x, w},
                        [g, cell_major, col = std::move(col)](detail::Node& self) {
    const std::size_t K = g.patch();
    const std::size_t N = g.cells();
    const double* dy = self.grad.data();
    auto& wnode = *self.parents[1];
    const auto& W = wnode.value;
    if (wnode.requires_grad) {
      auto& gw = wnode.ensure_grad();
      for (std::size_t o = 0; o < g.c_out; ++o) {
        const double* grow = dy + o * N;
        if (cell_major) {
          double* dst = gw.data() + o * K;
          for (std::size_t j = 0; j < N; ++j) {
            const double gj = grow[j];
            const double* crow = col.data() + j * K;
            for (std::size_t q = 0; q < K; ++q) dst[q] += gj * crow[q];
          }
        } else {
          for (std::size_t q = 0; q < K; ++q) gw[o * K + q] += detail::dot(grow, col.data() + q * N, N);
        }
      }
    }
    auto& xnode = *self.parents[0];
    if (xnode.requires_grad) {
      std::vector<double> dcol(K * N, 0.0);
      if (cell_major) {
        for (std::size_t j = 0; j < N; ++j) {
          double* drow = dcol.data() + j * K;
          for (std::size_t o = 0; o < g.c_out; ++o) {
            const double gj = dy[o * N + j];
            const double* wrow = W.data() + o * K;
            for (std::size_t q = 0; q < K; ++q) drow[q] += gj * wrow[q];
          }
        }
        std::vector<double> back(K * N);
        for (std::size_t j = 0; j < N; ++j) {
          for (std::size_t q = 0; q < K; ++q) back[q * N + j] = dcol[j * K + q];
        }
        dcol = std::move(back);
      } else {
        for (std::size_t o = 0; o < g.c_out; ++o) {
          const double* grow = dy + o * N;
          for (std::size_t q = 0; q < K; ++q) {
            const double wq = W[o * K + q];
            double* drow = dcol.data() + q * N;
            for (std::size_t j = 0; j < N; ++j) drow[j] += wq * grow[j];
          }
        }
      }
      col2im_add(dcol.data(), g, xnode.ensure_grad().data());
    }
  });
}

Tensor avg_pool2d(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw) {
  if (x.rank() != 3) throw DimensionError("avg_pool2d expects [c x H x W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  if (kh == 0 || kw == 0 || kh > h || kw > w) {
    throw DimensionError("avg_pool2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds input " + shape_str(x.shape()));
  }
  if (sh == 0 || sw == 0) throw ContractError("avg_pool2d: strides must be >= 1");
  const std::size_t oh = (h - kh) / sh + 1;
  const std::size_t ow = (w - kw) / sw + 1;
  const double area = static_cast<double>(kh * kw);
  auto xv = x.values();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = xv.data() + ch * h * w;
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) {
        double total = 0.0;
        for (std::size_t a = 0; a < kh; ++a) {
          const double* row = plane + (oi * sh + a) * w + oj * sw;
          for (std::size_t b = 0; b < kw; ++b) total += row[b];
        }
        out[(ch * oh + oi) * ow + oj] = total / area;
      }
    }
  }
  return make_op_result({c, oh, ow}, std::move(out), {x},
                        [c, h, w, kh, kw, sh, sw, oh, ow, area](detail::Node& self) {
    auto& xnode = *self.parents[0];
    if (!xnode.requires_grad) return;
    auto& gx = xnode.ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* plane = gx.data() + ch * h * w;
      for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
          const double share = self.grad[(ch * oh + oi) * ow + oj] / area;
          for (std::size_t a = 0; a < kh; ++a) {
            double* row = plane + (oi * sh + a) * w + oj * sw;
            for (std::size_t b = 0; b < kw; ++b) row[b] += share;
          }
        }
      }
    }
  });
}

}  // namespace cdcl
