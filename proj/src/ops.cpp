#include "cdcl/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cdcl/errors.hpp"
#include "kernels.hpp"

namespace cdcl {

namespace {

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// Gradient buffer of parent i, or nullptr if that parent is not tracked.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

const std::vector<double>& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = parent_value(self, 0);
    const auto& y = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_op_result({1}, {total}, {a}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const auto split = split_axis(a.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  auto av = a.values();
  const double n = static_cast<double>(split.extent);
  std::vector<double> out(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t k = 0; k < split.extent; ++k) {
      const double* src = av.data() + (o * split.extent + k) * split.inner;
      double* dst = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v /= n;
  return make_op_result(std::move(out_shape), std::move(out), {a}, [split, n](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t k = 0; k < split.extent; ++k) {
          double* dst = g->data() + (o * split.extent + k) * split.inner;
          const double* src = self.grad.data() + o * split.inner;
          for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i] / n;
        }
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = parent_value(self, 0);
    const auto& B = parent_value(self, 1);
    const double* G = self.grad.data();
    if (auto* ga = parent_grad(self, 0)) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          (*ga)[i * k + p] += detail::dot(G + i * n, B.data() + p * n, n);
        }
      }
    }
    if (auto* gb = parent_grad(self, 1)) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* dst = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(0);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = detail::dot(av.data() + i * k, bv.data() + j * k, k);
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = parent_value(self, 0);
    const auto& B = parent_value(self, 1);
    const double* G = self.grad.data();
    if (auto* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = ga->data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* brow = B.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) dst[p] += g * brow[p];
        }
      }
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          double* dst = gb->data() + j * k;
          for (std::size_t p = 0; p < k; ++p) dst[p] += g * arow[p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  auto av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return make_op_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.values();
  std::vector<double> out(av.begin(), av.end());
  return make_op_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor flatten(const Tensor& a) { return reshape(a, {a.numel()}); }

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(first) + " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto split = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    auto pv = parts[t].values();
    const std::size_t block = extents[t] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * block, block,
                  out.data() + o * split.extent * split.inner + offset * split.inner);
    }
    offset += extents[t];
  }
  return make_op_result(std::move(out_shape), std::move(out), parts, [split, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < extents.size(); ++t) {
      const std::size_t block = extents[t] * split.inner;
      if (auto* g = parent_grad(self, t)) {
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* src = self.grad.data() + o * split.extent * split.inner + offset * split.inner;
          double* dst = g->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += extents[t];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto split = split_axis(a.shape(), axis);
  if (length == 0 || start + length > split.extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(axis) + " of " +
                         shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto av = a.values();
  const std::size_t block = length * split.inner;
  std::vector<double> out(split.outer * block);
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(av.data() + (o * split.extent + start) * split.inner, block, out.data() + o * block);
  }
  return make_op_result(std::move(out_shape), std::move(out), {a}, [split, start, block](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < split.outer; ++o) {
        double* dst = g->data() + (o * split.extent + start) * split.inner;
        const double* src = self.grad.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  if (x.rank() != 3 || gain.shape() != Shape{x.dim(0)} || shift.shape() != Shape{x.dim(0)}) {
    throw DimensionError("channel_affine: x " + shape_str(x.shape()) + ", gain " +
                         shape_str(gain.shape()) + ", shift " + shape_str(shift.shape()));
  }
  const std::size_t c = x.dim(0);
  const std::size_t plane = x.dim(1) * x.dim(2);
  auto xv = x.values();
  auto gv = gain.values();
  auto sv = shift.values();
  std::vector<double> out(xv.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = xv[ch * plane + i] * gv[ch] + sv[ch];
  }
  return make_op_result(x.shape(), std::move(out), {x, gain, shift}, [c, plane](Node& self) {
    const auto& X = parent_value(self, 0);
    const auto& G = parent_value(self, 1);
    const double* dy = self.grad.data();
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) (*gx)[ch * plane + i] += dy[ch * plane + i] * G[ch];
      }
    }
    if (auto* gg = parent_grad(self, 1)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[ch * plane + i] * X[ch * plane + i];
        (*gg)[ch] += acc;
      }
    }
    if (auto* gs = parent_grad(self, 2)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[ch * plane + i];
        (*gs)[ch] += acc;
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: x " + shape_str(x.shape()) + " vs bias " + shape_str(b.shape()));
  }
  const std::size_t n = b.dim(0);
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  auto bv = b.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  }
  return make_op_result(x.shape(), std::move(out), {x, b}, [rows, n](Node& self) {
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[r * n + j];
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto split = split_axis(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < split.extent; ++k) mx = std::max(mx, xv[base + k * split.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const double e = std::exp(xv[base + k * split.inner] - mx);
        out[base + k * split.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < split.extent; ++k) out[base + k * split.inner] /= total;
    }
  }
  return make_op_result(x.shape(), std::move(out), {x}, [split](Node& self) {
    if (auto* gx = parent_grad(self, 0)) {
      const auto& y = self.value;
      const auto& dy = self.grad;
      for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t i = 0; i < split.inner; ++i) {
          const std::size_t base = o * split.extent * split.inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < split.extent; ++k) {
            const std::size_t idx = base + k * split.inner;
            dot += dy[idx] * y[idx];
          }
          for (std::size_t k = 0; k < split.extent; ++k) {
            const std::size_t idx = base + k * split.inner;
            (*gx)[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  return make_op_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const double y = self.value[i];
        (*gx)[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

Tensor silu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
  return make_op_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* gx = parent_grad(self, 0)) {
      const auto& X = parent_value(self, 0);
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const double s = stable_sigmoid(X[i]);
        (*gx)[i] += self.grad[i] * (s + X[i] * s * (1.0 - s));
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_op_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* gx = parent_grad(self, 0)) {
      const auto& X = parent_value(self, 0);
      for (std::size_t i = 0; i < gx->size(); ++i) {
        if (X[i] > 0.0) (*gx)[i] += self.grad[i];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t n = x.shape().back();
  const bool affine = gain.defined();
  if (affine != shift.defined()) throw ContractError("layer_norm: gain and shift must both be given or both omitted");
  if (affine && (gain.shape() != Shape{n} || shift.shape() != Shape{n})) {
    throw DimensionError("layer_norm: x " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) +
                         ", shift " + shape_str(shift.shape()));
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (row[j] - mu) * rstd[r];
  }
  std::vector<double> out = xhat;
  std::vector<Tensor> inputs{x};
  if (affine) {
    auto gv = gain.values();
    auto sv = shift.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = out[r * n + j] * gv[j] + sv[j];
    }
    inputs.push_back(gain);
    inputs.push_back(shift);
  }
  return make_op_result(x.shape(), std::move(out), std::move(inputs),
                        [rows, n, affine, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
    const double* dy = self.grad.data();
    const double* G = affine ? parent_value(self, 1).data() : nullptr;
    if (auto* gx = parent_grad(self, 0)) {
      std::vector<double> dxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dxhat[j] = dy[r * n + j] * (G ? G[j] : 1.0);
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat[r * n + j];
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          (*gx)[r * n + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * n + j] * mean_dx);
        }
      }
    }
    if (affine) {
      if (auto* gg = parent_grad(self, 1)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) (*gg)[j] += dy[r * n + j] * xhat[r * n + j];
        }
      }
      if (auto* gs = parent_grad(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) (*gs)[j] += dy[r * n + j];
        }
      }
    }
  });
}

Tensor bce_loss(const Tensor& p, const Tensor& y, double eps) {
  require_same_shape(p, y, "bce_loss");
  auto pv = p.values();
  auto yv = y.values();
  const double count = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv[i], eps, 1.0 - eps);
    total += -(yv[i] * std::log(q) + (1.0 - yv[i]) * std::log(1.0 - q));
  }
  return make_op_result({1}, {total / count}, {p, y}, [eps, count](Node& self) {
    const auto& P = parent_value(self, 0);
    const auto& Y = parent_value(self, 1);
    const double g = self.grad[0] / count;
    if (auto* gp = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < P.size(); ++i) {
        if (P[i] <= eps || P[i] >= 1.0 - eps) continue;
        (*gp)[i] += g * (-Y[i] / P[i] + (1.0 - Y[i]) / (1.0 - P[i]));
      }
    }
    if (auto* gy = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < P.size(); ++i) {
        const double q = std::clamp(P[i], eps, 1.0 - eps);
        (*gy)[i] += g * (std::log(1.0 - q) - std::log(q));
      }
    }
  });
}

namespace {

// log(1 + e^x) without overflow or cancellation.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor bce_with_logits(const Tensor& z, const Tensor& y, double eps) {
  require_same_shape(z, y, "bce_with_logits");
  // sigmoid(z) in [eps, 1 - eps]  <=>  |z| <= bound.
  const double bound = std::log((1.0 - eps) / eps);
  auto zv = z.values();
  auto yv = y.values();
  const double count = static_cast<double>(zv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double c = std::clamp(zv[i], -bound, bound);
    total += yv[i] * softplus(-c) + (1.0 - yv[i]) * softplus(c);
  }
  return make_op_result({1}, {total / count}, {z, y}, [bound, count](Node& self) {
    const auto& Z = parent_value(self, 0);
    const auto& Y = parent_value(self, 1);
    const double g = self.grad[0] / count;
    if (auto* gz = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < Z.size(); ++i) {
        if (Z[i] <= -bound || Z[i] >= bound) continue;
        (*gz)[i] += g * (stable_sigmoid(Z[i]) - Y[i]);
      }
    }
    if (auto* gy = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < Z.size(); ++i) (*gy)[i] -= g * std::clamp(Z[i], -bound, bound);
    }
  });
}

}  // namespace cdcl
