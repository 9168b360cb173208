#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "helpers.hpp"
#include "revlab/model.hpp"
#include "revlab/reparam.hpp"

using namespace revlab;
using doctest::Approx;
using testing::corpus_from_utf8;

namespace {

ModelConfig small_config(PosMode mode, bool tied, int vocab = 7) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.max_len = 24;
  cfg.pos_mode = mode;
  cfg.tie_embeddings = tied;
  return cfg;
}

TokenSeq random_tokens(Rng& rng, int vocab, int len) {
  TokenSeq z;
  for (int i = 0; i < len; ++i) z.push_back(rng.below(vocab));
  return z;
}

const PosMode kModes[3] = {PosMode::rotary, PosMode::relative_bias, PosMode::learned_absolute};

// params for the mirror side: identical weights except the learned absolute
// position table, which must be index-flipped
ModelParams mirror_side_params(const ModelParams& p, const ModelConfig& cfg) {
  ParamMap psi = ParamMap::identity(cfg.vocab_size, cfg.pos_mode == PosMode::learned_absolute);
  return apply_param_map(psi, p, cfg);
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(small_config(PosMode::rotary, true, 0).validate(), std::invalid_argument);
  ModelConfig cfg = small_config(PosMode::rotary, true);
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config(PosMode::rotary, true);
  cfg.d_model = 15;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config(PosMode::rotary, true);
  cfg.n_heads = 8;  // head_dim 2, still even
  cfg.d_model = 16;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("initialization is deterministic and seed-sensitive") {
  const ModelConfig cfg = small_config(PosMode::learned_absolute, false);
  const ModelParams a = init_params(cfg, 42);
  const ModelParams b = init_params(cfg, 42);
  CHECK(params_max_abs_diff(a, b) == 0.0);
  const ModelParams c = init_params(cfg, 43);
  CHECK(params_max_abs_diff(a, c) > 0.0);
  CHECK(params_all_finite(a));
}

TEST_CASE("forward rows: shape, normalization, single-token edge") {
  Rng rng(1);
  for (PosMode mode : kModes) {
    const ModelConfig cfg = small_config(mode, true);
    const ModelParams p = init_params(cfg, 7);
    CHECK(forward_logprobs(p, cfg, {3}, EvalDirection::standard).empty());
    CHECK(forward_logprobs(p, cfg, {3}, EvalDirection::mirror).empty());

    const TokenSeq z = random_tokens(rng, cfg.vocab_size, 9);
    for (EvalDirection dir : {EvalDirection::standard, EvalDirection::mirror}) {
      const auto rows = forward_logprobs(p, cfg, z, dir);
      REQUIRE(rows.size() == z.size() - 1);
      for (const auto& row : rows) {
        REQUIRE(row.size() == cfg.vocab_size);
        double mx = row.maxCoeff();
        double acc = 0.0;
        for (int v = 0; v < cfg.vocab_size; ++v) acc += std::exp(row(v) - mx);
        CHECK(std::abs(mx + std::log(acc)) <= 1e-12);  // |logsumexp| of the row
      }
    }
  }
}

TEST_CASE("input validation") {
  const ModelConfig cfg = small_config(PosMode::rotary, true);
  const ModelParams p = init_params(cfg, 3);
  CHECK_THROWS_AS(forward_logprobs(p, cfg, {}, EvalDirection::standard), std::invalid_argument);
  CHECK_THROWS_AS(forward_logprobs(p, cfg, {1, 99}, EvalDirection::standard), std::invalid_argument);
  CHECK_THROWS_AS(forward_logprobs(p, cfg, TokenSeq(cfg.max_len + 1, 0), EvalDirection::standard),
                  std::invalid_argument);
  CHECK_THROWS_AS(sequence_nll(p, cfg, {1}, EvalDirection::standard), std::invalid_argument);
}

TEST_CASE("uniform model gives (m-1) ln V") {
  for (PosMode mode : kModes) {
    for (bool tied : {true, false}) {
      const ModelConfig cfg = small_config(mode, tied);
      const ModelParams p = zeros_like(cfg);
      const TokenSeq z = {0, 1, 2, 3, 4, 5};
      for (EvalDirection dir : {EvalDirection::standard, EvalDirection::mirror}) {
        const double nll = sequence_nll(p, cfg, z, dir);
        CHECK(nll == Approx(5.0 * std::log(7.0)).epsilon(1e-12));
        CHECK(nll >= 0.0);
      }
    }
  }
}

TEST_CASE("causality is bit-exact") {
  Rng rng(17);
  for (PosMode mode : kModes) {
    const ModelConfig cfg = small_config(mode, true);
    const ModelParams p = init_params(cfg, 23);
    const TokenSeq z = random_tokens(rng, cfg.vocab_size, 10);

    // standard: row k depends only on z[0..k]
    const auto rows = forward_logprobs(p, cfg, z, EvalDirection::standard);
    TokenSeq z2 = z;
    z2[9] = (z[9] + 1) % cfg.vocab_size;
    z2[8] = (z[8] + 3) % cfg.vocab_size;
    const auto rows2 = forward_logprobs(p, cfg, z2, EvalDirection::standard);
    for (int k = 0; k <= 6; ++k)
      for (int v = 0; v < cfg.vocab_size; ++v) CHECK(rows[static_cast<std::size_t>(k)](v) == rows2[static_cast<std::size_t>(k)](v));

    // mirror: row k (scores slot k) depends only on z[k+1..m-1]
    const auto mrows = forward_logprobs(p, cfg, z, EvalDirection::mirror);
    TokenSeq z3 = z;
    z3[0] = (z[0] + 1) % cfg.vocab_size;
    z3[1] = (z[1] + 2) % cfg.vocab_size;
    const auto mrows2 = forward_logprobs(p, cfg, z3, EvalDirection::mirror);
    for (std::size_t k = 2; k < mrows.size(); ++k)
      for (int v = 0; v < cfg.vocab_size; ++v) CHECK(mrows[k](v) == mrows2[k](v));
  }
}

TEST_CASE("mirror consistency oracle") {
  Rng rng(29);
  for (PosMode mode : kModes) {
    for (bool tied : {true, false}) {
      const ModelConfig cfg = small_config(mode, tied);
      for (int trial = 0; trial < 10; ++trial) {
        const ModelParams p = init_params(cfg, mix_seed(100, static_cast<std::uint64_t>(trial)));
        const ModelParams q = mirror_side_params(p, cfg);
        const TokenSeq z = random_tokens(rng, cfg.vocab_size, 2 + rng.below(cfg.max_len - 2));
        const TokenSeq rz = reverse_tokens(z);

        const double nll_std = sequence_nll(p, cfg, z, EvalDirection::standard);
        const double nll_mir = sequence_nll(q, cfg, rz, EvalDirection::mirror);
        CHECK(std::abs(nll_std - nll_mir) <= 1e-9);

        // identical multisets of realized per-token log-probs
        const auto rows_std = forward_logprobs(p, cfg, z, EvalDirection::standard);
        const auto rows_mir = forward_logprobs(q, cfg, rz, EvalDirection::mirror);
        std::vector<double> a, b;
        for (std::size_t k = 0; k < rows_std.size(); ++k) a.push_back(rows_std[k](z[k + 1]));
        for (std::size_t k = 0; k < rows_mir.size(); ++k) b.push_back(rows_mir[k](rz[k]));
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("forward evaluation is reproducible bit-for-bit") {
  Rng rng(5);
  const ModelConfig cfg = small_config(PosMode::relative_bias, false);
  const ModelParams p = init_params(cfg, 11);
  const TokenSeq z = random_tokens(rng, cfg.vocab_size, 12);
  const auto r1 = forward_logprobs(p, cfg, z, EvalDirection::standard);
  const auto r2 = forward_logprobs(p, cfg, z, EvalDirection::standard);
  for (std::size_t k = 0; k < r1.size(); ++k)
    for (int v = 0; v < cfg.vocab_size; ++v) CHECK(r1[k](v) == r2[k](v));
}

TEST_CASE("corpus NLL semantics") {
  const Corpus single = corpus_from_utf8({"abcab"});
  const BpeTokenizer t = char_tokenizer(single);
  ModelConfig cfg = small_config(PosMode::rotary, true, 3);
  const ModelParams p = init_params(cfg, 9);

  const double one = corpus_nll(p, cfg, t, single, EvalDirection::standard);
  CHECK(one == Approx(sequence_nll(p, cfg, encode(t, single.docs[0]), EvalDirection::standard)).epsilon(1e-15));

  const Corpus doubled = corpus_from_utf8({"abcab", "abcab"});
  CHECK(corpus_nll(p, cfg, t, doubled, EvalDirection::standard) == Approx(one).epsilon(1e-15));

  // hand-computable uniform model on two docs
  const ModelParams u = zeros_like(cfg);
  const Corpus two = corpus_from_utf8({"abc", "ababa"});
  const double expected = 0.5 * ((3 - 1) + (5 - 1)) * std::log(3.0);
  CHECK(corpus_nll(u, cfg, t, two, EvalDirection::standard) == Approx(expected).epsilon(1e-12));

  const Corpus with_empty = corpus_from_utf8({"abc", ""});
  CHECK_THROWS_WITH_AS(corpus_nll(p, cfg, t, with_empty, EvalDirection::standard),
                       "document 1: nothing to predict: sequence length must be at least 2", std::runtime_error);
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(31);
  for (PosMode mode : kModes) {
    for (bool tied : {true, false}) {
      const ModelConfig cfg = small_config(mode, tied, 5);
      ModelParams p = init_params(cfg, 77);
      std::vector<TokenSeq> batch;
      for (int i = 0; i < 2; ++i) batch.push_back(random_tokens(rng, cfg.vocab_size, 7));

      for (EvalDirection dir : {EvalDirection::standard, EvalDirection::mirror}) {
        ModelParams grad = zeros_like(cfg);
        batch_nll_and_gradient(p, cfg, batch, dir, grad);
        auto views = tensor_views(p);
        auto gviews = tensor_views(grad);
        // probe several coordinates in every tensor
        for (std::size_t vi = 0; vi < views.size(); ++vi) {
          for (int probe = 0; probe < 3; ++probe) {
            const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(rng.next() % static_cast<std::uint64_t>(views[vi].size));
            const double saved = views[vi].data[idx];
            const double h = 4e-5;
            ModelParams scratch = zeros_like(cfg);
            views[vi].data[idx] = saved + h;
            const double up = batch_nll_and_gradient(p, cfg, batch, dir, scratch);
            views[vi].data[idx] = saved - h;
            const double down = batch_nll_and_gradient(p, cfg, batch, dir, scratch);
            views[vi].data[idx] = saved;
            const double fd = (up - down) / (2 * h);
            const double analytic = gviews[vi].data[idx];
            const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-4});
            INFO("tensor ", views[vi].name, " idx ", idx, " fd ", fd, " analytic ", analytic);
            CHECK(rel <= 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("parameter serialization round trip") {
  const ModelConfig cfg = small_config(PosMode::learned_absolute, false);
  const ModelParams p = init_params(cfg, 1234);
  save_params(p, cfg, "params_test.bin", "params_test.json");
  const auto [loaded, loaded_cfg] = load_params("params_test.bin", "params_test.json");
  CHECK(params_max_abs_diff(p, loaded) == 0.0);
  CHECK(loaded_cfg.vocab_size == cfg.vocab_size);
  CHECK(loaded_cfg.pos_mode == cfg.pos_mode);
  std::remove("params_test.bin");
  std::remove("params_test.json");
}
