#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fusecore/tensor.hpp"

// Differentiable operations. Each returns a new tensor; when a Tape is active
// on the calling thread and some input requires a gradient, the operation is
// recorded so Tape::backward can propagate through it.
//
// Matrix operations treat a rank-1 tensor of length n as a 1×n row.

namespace fusecore {

// [m×k]·[k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m×k]·[n×k]ᵀ -> [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x·wᵀ + bias with w stored [d_out×d_in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds a length-n vector to every row of an [m×n] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
// Square causal variant: entry (i, j) with j > i is excluded and comes out as
// exactly zero.
Tensor softmax_rows_causal(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;
// Normalizes each length-d row, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Mean of -log softmax(logits[i])[targets[i]] over rows with mask[i] set.
// Throws InvalidBatchError when no row is selected.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets,
                          const std::vector<bool>& mask);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
// Row lookup (embedding); gradients scatter-add back into the table.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// Average of the selected rows, as a single 1×n row.
Tensor mean_rows(const Tensor& x, std::span<const std::size_t> rows);

}  // namespace fusecore
