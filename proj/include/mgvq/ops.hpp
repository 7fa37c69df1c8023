#pragma once

#include <span>
#include <vector>

#include "mgvq/autograd.hpp"

// Differentiable primitives. Matrices are rank-2 [rows x cols]; conv
// feature maps are [channels x time], sequence features are [time x dim].
namespace mgvq::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);
Var relu(const Var& a);
Var transpose(const Var& a);

// Stacks a over b along the first axis.
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);

Var matmul(const Var& a, const Var& b);
// x [T x in] * w [in x out] + b [out]
Var linear(const Var& x, const Var& w, const Var& b);

struct ConvGeometry {
  Index kernel = 1;
  Index stride = 1;
  Index pad_left = 0;
  Index pad_right = 0;
};

// x [Cin x T], w [Cout x Cin*K], b [Cout] -> [Cout x (T+pl+pr-K)/stride+1]
Var conv1d(const Var& x, const Var& w, const Var& b, const ConvGeometry& g);

// x [Cin x T], w [Cin x Cout*K], b [Cout]. The full output of length
// (T-1)*stride+K is cropped to [crop_left, crop_left+out_len).
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, Index kernel, Index stride,
                     Index crop_left, Index out_len);

// Normalizes each row of x [T x D].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Scaled dot-product attention split over `heads` column groups.
// q [Tq x D], k/v [Tk x D] -> [Tq x D]
Var attention(const Var& q, const Var& k, const Var& v, Index heads);

Var sum(const Var& a);
Var mean(const Var& a);
// Sum over elements of a * c for a constant tensor c of the same shape.
Var dot_constant(const Var& a, const Tensor& c);
// sum_i weights[i] * terms[i] over scalar terms.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace mgvq::ops
