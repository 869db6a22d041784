#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdcl/rng.hpp"
#include "cdcl/tensor.hpp"

namespace cdcl {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// Bound of the fan-in-scaled uniform initializer: 1 / sqrt(fan_in).
double init_bound(std::size_t fan_in);
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out], undefined for bias-free layers

  static LinearLayer create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// x[... x in] -> x W^T + b, shape [... x out].
Tensor linear_forward(const LinearLayer& layer, const Tensor& x);

/// Pre-norm transformer encoder block:
///   z   = seq + MHSA(LN(seq))
///   out = z + FFN(LN(z))
/// No positional encoding, no masking.
struct MhsaBlock {
  std::size_t num_heads = 0;
  std::size_t head_dim = 0;
  LinearLayer query, key, value, output;
  Tensor ln1_gain, ln1_shift;
  Tensor ln2_gain, ln2_shift;
  LinearLayer ffn_in;   // d -> ffn_mult * d
  LinearLayer ffn_out;  // ffn_mult * d -> d

  static MhsaBlock create(std::size_t width, std::size_t num_heads, std::size_t ffn_mult, Rng& rng);
  std::size_t width() const { return num_heads * head_dim; }
  void collect(const std::string& prefix, ParamList& out) const;
};

// seq[n x d] -> [n x d]. When `attention` is non-null it receives one
// [n x n] probability matrix per head.
Tensor mhsa_forward(const MhsaBlock& block, const Tensor& seq,
                    std::vector<Tensor>* attention = nullptr);

std::vector<Tensor> tensors_of(const ParamList& params);

}  // namespace cdcl
