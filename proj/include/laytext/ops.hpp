#pragma once

#include <cstdint>
#include <vector>

#include "laytext/tensor.hpp"

namespace laytext {

// Differentiable tensor ops. All 2-D tensors are row-major [rows x cols];
// linear-layer weights follow the [out x in] convention, so linear() computes
// y = x * W^T + b.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor silu(const Tensor& x);
Tensor sum(const Tensor& x);

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = 1e-5);

// Softmax over the causal prefix of each row of a [T x T] score matrix.
Tensor causal_softmax(const Tensor& scores);

// Rotary position embedding over a per-head block [T x head_dim]; row index
// is the sequence position (plus pos_offset). Adjacent element pairs are
// rotated by pos * base^(-2j/head_dim).
Tensor rope_rows(const Tensor& x, double base, int pos_offset = 0);

Tensor slice_cols(const Tensor& x, int offset, int width);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Row gather / merge used to build interleaved input embeddings and to route
// adapter outputs back onto their rows.
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor row_replace(const Tensor& x, const Tensor& rows, const std::vector<int>& positions);
Tensor masked_row_add(const Tensor& base, const Tensor& delta, const std::vector<int>& positions);

// Mean of -log softmax(logits)[target] over positions with mask == 1.
// Positions with mask == 0 contribute nothing and receive zero gradient.
Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& loss_mask);

}  // namespace laytext
