#pragma once

#include <map>
#include <string>
#include <vector>

#include "tfgu/archive.hpp"
#include "tfgu/autograd.hpp"
#include "tfgu/rng.hpp"

namespace tfgu::nn {

/// Named parameter tensors, ordered by name.
using ParamSet = std::map<std::string, Matrix>;

/// Leaves for a ParamSet on one tape, either as constants or variables.
class Binding {
 public:
  Binding(ad::Tape& tape, const ParamSet& params, bool trainable);
  ad::Var operator[](const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }

  /// Gradients of every bound variable after Tape::backward.
  ParamSet gradients() const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

struct BlockShape {
  int dim = 32;       // residual width
  int attn_dim = 32;  // total q/k/v width across heads
  int heads = 2;
  int mlp_dim = 128;
};

/// Registers a block's tensors under `prefix` with their shapes.
void block_shapes(const std::string& prefix, const BlockShape& s,
                  std::map<std::string, std::pair<int, int>>& out);

/// Hooks into one block's attention: records per-head probabilities and,
/// when `class_row_delta` is valid (1×n patches), adds it to row 0, columns
/// 1..n of every head after the softmax.
struct AttentionProbe {
  ad::Var class_row_delta;
  std::vector<Matrix> head_attention;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(x)).
ad::Var block_forward(const Binding& p, const std::string& prefix, const BlockShape& s, ad::Var x,
                      AttentionProbe* probe = nullptr);

/// Initializes tensors for the given shapes: weights N(0, 1/fan_in),
/// biases 0, layer-norm gain 1. Names ending in ".gamma" get ones, in
/// "_bias"/".beta" zeros. Values are rounded to f32.
ParamSet init_params(const std::map<std::string, std::pair<int, int>>& shapes, Rng& rng);

void to_archive(const ParamSet& params, WeightArchive& archive);
/// Reads every expected tensor from the archive, rejecting missing names
/// and shape mismatches (the error names the tensor).
ParamSet from_archive(const WeightArchive& archive,
                      const std::map<std::string, std::pair<int, int>>& shapes);

/// Order-sensitive checksum over names and values.
std::uint32_t checksum(const ParamSet& params);

}  // namespace tfgu::nn
