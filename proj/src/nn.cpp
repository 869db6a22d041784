#include "cdcl/nn.hpp"

#include <cmath>

#include "cdcl/errors.hpp"
#include "cdcl/ops.hpp"

namespace cdcl {

double init_bound(std::size_t fan_in) {
  if (fan_in == 0) throw ContractError("init_bound: fan_in must be positive");
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double s = init_bound(fan_in);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, -s, s);
  return Tensor::from(std::move(shape), std::move(v), true);
}

LinearLayer LinearLayer::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  LinearLayer layer{init_uniform({out, in}, in, rng), {}};
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

void LinearLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) {
  const std::size_t in = layer.in_features();
  if (x.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(in));
  }
  Shape out_shape = x.shape();
  out_shape.back() = layer.out_features();
  const bool flat = x.rank() != 2;
  Tensor rows = flat ? reshape(x, {x.numel() / in, in}) : x;
  Tensor y = matmul_nt(rows, layer.weight);
  if (layer.bias.defined()) y = add_bias(y, layer.bias);
  return flat ? reshape(y, std::move(out_shape)) : y;
}

MhsaBlock MhsaBlock::create(std::size_t width, std::size_t num_heads, std::size_t ffn_mult, Rng& rng) {
  if (num_heads == 0 || width % num_heads != 0) {
    throw ContractError("MhsaBlock: width " + std::to_string(width) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
  }
  MhsaBlock b;
  b.num_heads = num_heads;
  b.head_dim = width / num_heads;
  b.query = LinearLayer::create(width, width, rng);
  // A key bias only shifts every attention logit of a query by the same
  // amount, so softmax cancels it; the parameter would have zero gradient.
  b.key = LinearLayer::create(width, width, rng, false);
  b.value = LinearLayer::create(width, width, rng);
  b.output = LinearLayer::create(width, width, rng);
  b.ln1_gain = Tensor::full({width}, 1.0, true);
  b.ln1_shift = Tensor::zeros({width}, true);
  b.ln2_gain = Tensor::full({width}, 1.0, true);
  b.ln2_shift = Tensor::zeros({width}, true);
  b.ffn_in = LinearLayer::create(width, ffn_mult * width, rng);
  b.ffn_out = LinearLayer::create(ffn_mult * width, width, rng);
  return b;
}

void MhsaBlock::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
  out.push_back({prefix + ".ln1.gain", ln1_gain});
  out.push_back({prefix + ".ln1.shift", ln1_shift});
  out.push_back({prefix + ".ln2.gain", ln2_gain});
  out.push_back({prefix + ".ln2.shift", ln2_shift});
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
}

Tensor mhsa_forward(const MhsaBlock& block, const Tensor& seq, std::vector<Tensor>* attention) {
  const std::size_t d = block.width();
  if (seq.rank() != 2 || seq.dim(1) != d) {
    throw DimensionError("mhsa: sequence " + shape_str(seq.shape()) + " does not have width " +
                         std::to_string(d));
  }
  const Tensor normed = layer_norm(seq, block.ln1_gain, block.ln1_shift);
  const Tensor q = linear_forward(block.query, normed);
  const Tensor k = linear_forward(block.key, normed);
  const Tensor v = linear_forward(block.value, normed);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(block.head_dim));

  std::vector<Tensor> heads;
  heads.reserve(block.num_heads);
  for (std::size_t h = 0; h < block.num_heads; ++h) {
    const std::size_t off = h * block.head_dim;
    Tensor qh = slice(q, 1, off, block.head_dim);
    Tensor kh = slice(k, 1, off, block.head_dim);
    Tensor vh = slice(v, 1, off, block.head_dim);
    Tensor probs = softmax(scale(matmul_nt(qh, kh), inv_sqrt), 1);
    if (attention) attention->push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  const Tensor mixed = block.num_heads == 1 ? heads.front() : concat(heads, 1);
  const Tensor z = add(seq, linear_forward(block.output, mixed));

  const Tensor hidden = silu(linear_forward(block.ffn_in, layer_norm(z, block.ln2_gain, block.ln2_shift)));
  return add(z, linear_forward(block.ffn_out, hidden));
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace cdcl
