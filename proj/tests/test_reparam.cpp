#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "revlab/bpe.hpp"
#include "revlab/model.hpp"
#include "revlab/reparam.hpp"

using namespace revlab;
using doctest::Approx;
using testing::corpus_from_utf8;

namespace {

ModelConfig tiny_config(PosMode mode, bool tied) {
  ModelConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.max_len = 16;
  cfg.pos_mode = mode;
  cfg.tie_embeddings = tied;
  return cfg;
}

ParamMap random_map(Rng& rng, int vocab, bool flip) {
  ParamMap psi = ParamMap::identity(vocab, flip);
  rng.shuffle(psi.vocab_perm);
  return psi;
}

}  // namespace

TEST_CASE("identity and inverse maps") {
  const ModelConfig cfg = tiny_config(PosMode::learned_absolute, false);
  const ModelParams p = init_params(cfg, 5);

  CHECK(params_max_abs_diff(apply_param_map(ParamMap::identity(cfg.vocab_size), p, cfg), p) == 0.0);

  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const ParamMap psi = random_map(rng, cfg.vocab_size, i % 2 == 1);
    const ModelParams there = apply_param_map(psi, p, cfg);
    const ModelParams back = apply_param_map(psi.inverse(), there, cfg);
    CHECK(params_max_abs_diff(back, p) == 0.0);
  }
}

TEST_CASE("transposition moves exactly the named rows") {
  const ModelConfig cfg = tiny_config(PosMode::rotary, false);
  const ModelParams p = init_params(cfg, 8);
  ParamMap swap01 = ParamMap::identity(cfg.vocab_size);
  swap01.vocab_perm[0] = 1;
  swap01.vocab_perm[1] = 0;
  const ModelParams q = apply_param_map(swap01, p, cfg);
  CHECK((q.embedding.row(0) - p.embedding.row(1)).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((q.embedding.row(1) - p.embedding.row(0)).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((q.unembedding.row(0) - p.unembedding.row(1)).lpNorm<Eigen::Infinity>() == 0.0);
  for (int t = 2; t < cfg.vocab_size; ++t)
    CHECK((q.embedding.row(t) - p.embedding.row(t)).lpNorm<Eigen::Infinity>() == 0.0);
  // blocks untouched
  CHECK((q.layers[0].attn_q - p.layers[0].attn_q).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((q.layers[0].mlp_in - p.layers[0].mlp_in).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("size mismatch is rejected") {
  const ModelConfig cfg = tiny_config(PosMode::rotary, true);
  const ModelParams p = init_params(cfg, 2);
  ParamMap bad = ParamMap::identity(cfg.vocab_size - 1);
  CHECK_THROWS_AS(apply_param_map(bad, p, cfg), std::invalid_argument);
  ParamMap dup = ParamMap::identity(cfg.vocab_size);
  dup.vocab_perm[0] = dup.vocab_perm[1];
  CHECK_THROWS_AS(apply_param_map(dup, p, cfg), std::invalid_argument);
}

TEST_CASE("group action composes bit-exactly") {
  const ModelConfig cfg = tiny_config(PosMode::learned_absolute, true);
  const ModelParams p = init_params(cfg, 21);
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    const ParamMap psi1 = random_map(rng, cfg.vocab_size, i % 2 == 0);
    const ParamMap psi2 = random_map(rng, cfg.vocab_size, i % 3 == 0);
    const ModelParams stepwise = apply_param_map(psi2, apply_param_map(psi1, p, cfg), cfg);
    const ModelParams composed = apply_param_map(compose(psi2, psi1), p, cfg);
    CHECK(params_max_abs_diff(stepwise, composed) == 0.0);
  }
}

TEST_CASE("position flip is an involution") {
  const ModelConfig cfg = tiny_config(PosMode::learned_absolute, true);
  const ModelParams p = init_params(cfg, 33);
  const ParamMap flip = ParamMap::identity(cfg.vocab_size, true);
  const ModelParams once = apply_param_map(flip, p, cfg);
  CHECK(params_max_abs_diff(once, p) > 0.0);
  CHECK(params_max_abs_diff(apply_param_map(flip, once, cfg), p) == 0.0);

  // no-op for rotary configs
  const ModelConfig rot = tiny_config(PosMode::rotary, true);
  const ModelParams pr = init_params(rot, 33);
  CHECK(params_max_abs_diff(apply_param_map(ParamMap::identity(rot.vocab_size, true), pr, rot), pr) == 0.0);
}

TEST_CASE("sequence permutation") {
  const std::vector<int> ident = {0, 1, 2};
  CHECK(permute_sequence(ident, {0, 1, 2, 1}) == TokenSeq{0, 1, 2, 1});
  const std::vector<int> swap01 = {1, 0, 2};
  CHECK(permute_sequence(swap01, {0, 1, 2}) == TokenSeq{1, 0, 2});
  CHECK(permute_sequence(swap01, permute_sequence(swap01, {0, 1, 2, 2})) == TokenSeq{0, 1, 2, 2});
  CHECK_THROWS_AS(permute_sequence(swap01, {3}), std::invalid_argument);
}

TEST_CASE("gradient pushforward is the identical relabeling") {
  const ModelConfig cfg = tiny_config(PosMode::learned_absolute, false);
  Rng rng(55);
  const ModelParams theta = init_params(cfg, 77);
  std::vector<TokenSeq> batch;
  for (int i = 0; i < 3; ++i) {
    TokenSeq z;
    for (int k = 0; k < 8; ++k) z.push_back(rng.below(cfg.vocab_size));
    batch.push_back(z);
  }
  ModelParams grad = zeros_like(cfg);
  batch_nll_and_gradient(theta, cfg, batch, EvalDirection::standard, grad);

  SUBCASE("identity and involution") {
    CHECK(params_max_abs_diff(pushforward_gradient(ParamMap::identity(cfg.vocab_size), grad, cfg), grad) == 0.0);
    ParamMap swap01 = ParamMap::identity(cfg.vocab_size);
    swap01.vocab_perm[0] = 1;
    swap01.vocab_perm[1] = 0;
    const ModelParams twice = pushforward_gradient(swap01, pushforward_gradient(swap01, grad, cfg), cfg);
    CHECK(params_max_abs_diff(twice, grad) == 0.0);
  }

  SUBCASE("chain rule: analytic gradient at the permuted point equals the pushforward") {
    const ParamMap psi = random_map(rng, cfg.vocab_size, false);
    const ModelParams mapped = apply_param_map(psi, theta, cfg);
    std::vector<TokenSeq> mapped_batch;
    for (const auto& z : batch) mapped_batch.push_back(permute_sequence(psi.vocab_perm, z));
    ModelParams mapped_grad = zeros_like(cfg);
    batch_nll_and_gradient(mapped, cfg, mapped_batch, EvalDirection::standard, mapped_grad);
    CHECK(params_max_abs_diff(mapped_grad, pushforward_gradient(psi, grad, cfg)) <= 1e-9);
  }

  SUBCASE("chain rule across directions: mirror gradient on remapped reversed data") {
    // the full map (permutation + position flip) relabels the standard
    // computation graph into the mirror one, so gradients must relabel too
    const ParamMap psi = random_map(rng, cfg.vocab_size, cfg.pos_mode == PosMode::learned_absolute);
    const ModelParams mapped = apply_param_map(psi, theta, cfg);
    std::vector<TokenSeq> mirror_batch;
    for (const auto& z : batch) mirror_batch.push_back(permute_sequence(psi.vocab_perm, reverse_tokens(z)));
    ModelParams mirror_grad = zeros_like(cfg);
    batch_nll_and_gradient(mapped, cfg, mirror_batch, EvalDirection::mirror, mirror_grad);
    CHECK(params_max_abs_diff(mirror_grad, pushforward_gradient(psi, grad, cfg)) <= 1e-9);
  }

  SUBCASE("finite differences at the mapped point agree with the pushforward") {
    const ParamMap psi = random_map(rng, cfg.vocab_size, false);
    ModelParams mapped = apply_param_map(psi, theta, cfg);
    std::vector<TokenSeq> mapped_batch;
    for (const auto& z : batch) mapped_batch.push_back(permute_sequence(psi.vocab_perm, z));
    const ModelParams pushed = pushforward_gradient(psi, grad, cfg);

    // probe embedding coordinates: the pushforward moved row t to row psi(t)
    auto views = tensor_views(mapped);
    auto pviews = tensor_views(const_cast<ModelParams&>(pushed));
    const double h = 4e-5;
    ModelParams scratch = zeros_like(cfg);
    for (int probe = 0; probe < 12; ++probe) {
      const std::size_t vi = static_cast<std::size_t>(rng.below(static_cast<int>(views.size())));
      const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(rng.next() % static_cast<std::uint64_t>(views[vi].size));
      const double saved = views[vi].data[idx];
      views[vi].data[idx] = saved + h;
      const double up = batch_nll_and_gradient(mapped, cfg, mapped_batch, EvalDirection::standard, scratch);
      views[vi].data[idx] = saved - h;
      const double down = batch_nll_and_gradient(mapped, cfg, mapped_batch, EvalDirection::standard, scratch);
      views[vi].data[idx] = saved;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - pviews[vi].data[idx]) / std::max({std::abs(fd), std::abs(pviews[vi].data[idx]), 1e-3}) <=
            1e-6);
    }
  }
}

TEST_CASE("param map serialization") {
  ParamMap psi = ParamMap::identity(4, true);
  psi.vocab_perm = {2, 0, 3, 1};
  const ParamMap back = param_map_from_json(nlohmann::json::parse(param_map_to_json(psi).dump()));
  CHECK(back.vocab_perm == psi.vocab_perm);
  CHECK(back.flip_positions == psi.flip_positions);
}
