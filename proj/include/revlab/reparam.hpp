#pragma once

#include <vector>

#include <json.hpp>

#include "revlab/model.hpp"
#include "revlab/text.hpp"

namespace revlab {

// A composable reparameterization: a vocabulary permutation applied to the
// embedding rows (and unembedding rows when untied), plus an optional flip
// of the learned absolute position table. Represented as data and applied
// functionally; live training state is never mutated.
struct ParamMap {
  std::vector<int> vocab_perm;  // source id -> target id; must be a bijection
  bool flip_positions = false;

  static ParamMap identity(int vocab_size, bool flip = false);
  ParamMap inverse() const;

  void validate(int vocab_size) const;  // throws on size mismatch / non-bijection
};

// apply second after first
ParamMap compose(const ParamMap& second, const ParamMap& first);

// The embedding row for token perm[t] of the result equals the row for
// token t of the input; all block weights are copied unchanged. With
// flip_positions, position row j becomes row max_len-1-j. For rotary and
// relative-bias configs the flip is a no-op by definition (the relative
// bias table is token-id and direction agnostic and stays unchanged).
ModelParams apply_param_map(const ParamMap& psi, const ModelParams& p, const ModelConfig& cfg);

// Elementwise token relabeling of a sequence.
TokenSeq permute_sequence(const std::vector<int>& perm, const TokenSeq& z);

// Gradients transform by the identical relabeling (the map is an orthogonal
// reindexing, so the chain rule reduces to moving rows).
ModelParams pushforward_gradient(const ParamMap& psi, const ModelParams& grad, const ModelConfig& cfg);

nlohmann::ordered_json param_map_to_json(const ParamMap& psi);
ParamMap param_map_from_json(const nlohmann::json& j);

}  // namespace revlab
