#include "revlab/reparam.hpp"

#include <stdexcept>

namespace revlab {

ParamMap ParamMap::identity(int vocab_size, bool flip) {
  ParamMap psi;
  psi.vocab_perm.resize(static_cast<std::size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i) psi.vocab_perm[static_cast<std::size_t>(i)] = i;
  psi.flip_positions = flip;
  return psi;
}

ParamMap ParamMap::inverse() const {
  ParamMap psi;
  psi.vocab_perm.assign(vocab_perm.size(), -1);
  for (std::size_t i = 0; i < vocab_perm.size(); ++i)
    psi.vocab_perm[static_cast<std::size_t>(vocab_perm[i])] = static_cast<int>(i);
  psi.flip_positions = flip_positions;  // the flip is its own inverse
  return psi;
}

void ParamMap::validate(int vocab_size) const {
  if (static_cast<int>(vocab_perm.size()) != vocab_size)
    throw std::invalid_argument("permutation size " + std::to_string(vocab_perm.size()) +
                                " does not match vocab size " + std::to_string(vocab_size));
  std::vector<bool> seen(vocab_perm.size(), false);
  for (int id : vocab_perm) {
    if (id < 0 || id >= vocab_size || seen[static_cast<std::size_t>(id)])
      throw std::invalid_argument("vocab_perm is not a bijection on [0, vocab_size)");
    seen[static_cast<std::size_t>(id)] = true;
  }
}

ParamMap compose(const ParamMap& second, const ParamMap& first) {
  if (second.vocab_perm.size() != first.vocab_perm.size())
    throw std::invalid_argument("cannot compose maps over different vocab sizes");
  ParamMap psi;
  psi.vocab_perm.resize(first.vocab_perm.size());
  for (std::size_t t = 0; t < first.vocab_perm.size(); ++t)
    psi.vocab_perm[t] = second.vocab_perm[static_cast<std::size_t>(first.vocab_perm[t])];
  psi.flip_positions = second.flip_positions != first.flip_positions;
  return psi;
}

ModelParams apply_param_map(const ParamMap& psi, const ModelParams& p, const ModelConfig& cfg) {
  psi.validate(cfg.vocab_size);
  ModelParams out = p;  // blocks, norms and the relative-bias table copy unchanged
  for (int t = 0; t < cfg.vocab_size; ++t) {
    const int image = psi.vocab_perm[static_cast<std::size_t>(t)];
    out.embedding.row(image) = p.embedding.row(t);
    if (!cfg.tie_embeddings) out.unembedding.row(image) = p.unembedding.row(t);
  }
  if (psi.flip_positions && cfg.pos_mode == PosMode::learned_absolute) {
    for (int j = 0; j < cfg.max_len; ++j) out.pos_table.row(cfg.max_len - 1 - j) = p.pos_table.row(j);
  }
  return out;
}

TokenSeq permute_sequence(const std::vector<int>& perm, const TokenSeq& z) {
  TokenSeq out;
  out.reserve(z.size());
  for (int id : z) {
    if (id < 0 || id >= static_cast<int>(perm.size()))
      throw std::invalid_argument("token id " + std::to_string(id) + " outside permutation of size " +
                                  std::to_string(perm.size()));
    out.push_back(perm[static_cast<std::size_t>(id)]);
  }
  return out;
}

ModelParams pushforward_gradient(const ParamMap& psi, const ModelParams& grad, const ModelConfig& cfg) {
  return apply_param_map(psi, grad, cfg);
}

nlohmann::ordered_json param_map_to_json(const ParamMap& psi) {
  return {{"perm", psi.vocab_perm}, {"flip_positions", psi.flip_positions}};
}

ParamMap param_map_from_json(const nlohmann::json& j) {
  ParamMap psi;
  psi.vocab_perm = j.at("perm").get<std::vector<int>>();
  psi.flip_positions = j.at("flip_positions").get<bool>();
  return psi;
}

}  // namespace revlab
