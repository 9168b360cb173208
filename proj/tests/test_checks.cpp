#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "revlab/checks.hpp"

using namespace revlab;
using testing::corpus_from_utf8;

namespace {

ModelConfig check_config(PosMode mode = PosMode::rotary) {
  ModelConfig cfg;
  cfg.vocab_size = 8;  // overwritten by tokenizer-driven checks
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.max_len = 64;
  cfg.pos_mode = mode;
  cfg.tie_embeddings = true;
  return cfg;
}

Corpus demo_corpus() {
  return load_corpus(std::string(REVLAB_DATA_DIR) + "/demo_corpus.txt");
}

}  // namespace

TEST_CASE("stable pair construction") {
  const Corpus demo = demo_corpus();
  SUBCASE("character-level pair") {
    const StablePair pair = build_stable_pair(demo, 0);
    CHECK(!pair.char_fallback);
    CHECK(pair.pi.total());
    CHECK(pair.stability.stable());
    CHECK(pair.fwd.merges.empty());
  }
  SUBCASE("trained pair on the demo corpus is stable with merges") {
    const StablePair pair = build_stable_pair(demo, 16);
    CHECK(!pair.char_fallback);
    CHECK(pair.pi.total());
    CHECK(pair.stability.stable());
    CHECK(pair.fwd.merges.size() == 8);
  }
  SUBCASE("tie-broken corpus falls back to characters") {
    const Corpus ties = corpus_from_utf8({"ab", "ab", "ba", "ba"});
    const StablePair pair = build_stable_pair(ties, 3);
    CHECK(pair.char_fallback);
    CHECK(pair.stability.stable());
    CHECK(pair.fwd.merges.empty());
  }
}

TEST_CASE("permutation equivariance check") {
  const ModelConfig cfg = check_config();
  SUBCASE("passes over all mode/tying combinations") {
    const CheckReport r = check_perm_equivariance(cfg, 7, {.n_cases = 12});
    CHECK(r.passed);
    CHECK(r.cases_run == 12);
    CHECK(r.max_abs_error <= 1e-9);
  }
  SUBCASE("reports are reproducible bit-for-bit") {
    const CheckReport a = check_perm_equivariance(cfg, 19, {.n_cases = 6});
    const CheckReport b = check_perm_equivariance(cfg, 19, {.n_cases = 6});
    CHECK(a.max_abs_error == b.max_abs_error);
    CHECK(a.worst_case == b.worst_case);
    CHECK(check_to_json(a).dump() == check_to_json(b).dump());
  }
  SUBCASE("negative control fails loudly") {
    const CheckReport r = check_perm_equivariance(cfg, 7, {.n_cases = 6, .corrupt = true});
    CHECK(!r.passed);
    CHECK(r.max_abs_error > 1e-3);
  }
  SUBCASE("identity permutation is bit-exact") {
    ModelConfig ccfg = cfg;
    ccfg.vocab_size = 6;
    const ModelParams theta = init_params(ccfg, 3);
    const ModelParams same = apply_param_map(ParamMap::identity(ccfg.vocab_size), theta, ccfg);
    const TokenSeq z = {0, 3, 5, 1, 1, 4};
    const auto r1 = forward_logprobs(theta, ccfg, z, EvalDirection::standard);
    const auto r2 = forward_logprobs(same, ccfg, z, EvalDirection::standard);
    for (std::size_t k = 0; k < r1.size(); ++k)
      for (int v = 0; v < ccfg.vocab_size; ++v) CHECK(r1[k](v) == r2[k](v));
  }
}

TEST_CASE("reversal invariance check") {
  const Corpus demo = demo_corpus();
  SUBCASE("passes with a merged tokenizer pair in every positional mode") {
    for (PosMode mode : {PosMode::rotary, PosMode::relative_bias, PosMode::learned_absolute}) {
      const CheckReport r = check_reversal_invariance(check_config(mode), 11, demo,
                                                      {.n_cases = 2, .bpe_vocab_target = 16});
      INFO(pos_mode_name(mode), " worst ", r.worst_case, " err ", r.max_abs_error);
      CHECK(r.passed);
    }
  }
  SUBCASE("palindromic corpus with identity map reduces to mirror consistency") {
    const Corpus pal = corpus_from_utf8({"abcba", "aa", "racecar", "abbacabba"});
    const CheckReport r = check_reversal_invariance(check_config(), 5, pal, {.n_cases = 3});
    CHECK(r.passed);
  }
  SUBCASE("disabling the position flip must break learned_absolute") {
    const CheckReport r = check_reversal_invariance(check_config(PosMode::learned_absolute), 11, demo,
                                                    {.n_cases = 2, .disable_flip = true});
    CHECK(!r.passed);
    CHECK(r.max_abs_error > 1e-3);
  }
  SUBCASE("corrupting the mapped embeddings must fail") {
    const CheckReport r = check_reversal_invariance(check_config(), 11, demo, {.n_cases = 1, .corrupt = true});
    CHECK(!r.passed);
  }
}

TEST_CASE("matched training check") {
  const Corpus demo = demo_corpus();
  TrainConfig tcfg;
  tcfg.steps = 25;
  tcfg.batch_size = 8;
  tcfg.seed = 3;

  SUBCASE("sgd run stays matched") {
    tcfg.learning_rate = 0.05;
    const MatchedTrainResult r = matched_training_check(check_config(), tcfg, demo, 16);
    CHECK(!r.used_char_fallback);
    CHECK(r.params_report.passed);
    CHECK(r.loss_report.passed);
    REQUIRE(r.curve.size() == 26);
    CHECK(r.curve[0].param_discrepancy == 0.0);
    CHECK(r.curve.back().loss_a < r.curve[1].loss_a);  // it actually trains
    const std::string csv = curves_csv(r);
    CHECK(csv.find("step,loss_A,loss_B,grad_discrepancy,param_discrepancy") == 0);
  }
  SUBCASE("adam run stays matched in learned_absolute mode") {
    tcfg.optimizer = OptimizerKind::adam;
    tcfg.learning_rate = 3e-3;
    const MatchedTrainResult r = matched_training_check(check_config(PosMode::learned_absolute), tcfg, demo, 16);
    CHECK(r.params_report.passed);
    CHECK(r.loss_report.passed);
  }
  SUBCASE("zero steps is the trivial fixed point") {
    tcfg.steps = 0;
    const MatchedTrainResult r = matched_training_check(check_config(), tcfg, demo, 0);
    CHECK(r.params_report.passed);
    CHECK(r.params_report.max_abs_error == 0.0);
  }
  SUBCASE("corrupted start must fail") {
    tcfg.steps = 2;
    const MatchedTrainResult r = matched_training_check(check_config(), tcfg, demo, 0, true);
    CHECK(!r.params_report.passed);
  }
}

TEST_CASE("independent curves comparison") {
  const Corpus demo = demo_corpus();
  TrainConfig tcfg;
  tcfg.steps = 12;
  tcfg.batch_size = 8;
  tcfg.learning_rate = 0.05;
  tcfg.seed = 5;

  SUBCASE("seed requirements") {
    CHECK_THROWS_AS(independent_curves_comparison(check_config(), tcfg, demo, 1), std::invalid_argument);
  }
  SUBCASE("forward and reversed training land in the same band") {
    const CurveComparisonResult r = independent_curves_comparison(check_config(), tcfg, demo, 3);
    CHECK(r.report.passed);
    CHECK(r.finals_forward.size() == 3);
    CHECK(r.pooled_std > 0.0);
  }
  SUBCASE("a different reversed-side corpus must fail the band") {
    const CurveComparisonResult r = independent_curves_comparison(check_config(), tcfg, demo, 3, 0, true);
    CHECK(!r.report.passed);
  }
}

TEST_CASE("gradient finite-difference gate") {
  for (PosMode mode : {PosMode::rotary, PosMode::relative_bias, PosMode::learned_absolute}) {
    ModelConfig cfg = check_config(mode);
    cfg.vocab_size = 6;
    const CheckReport r = gradient_fd_check(cfg, 2027, 12);
    INFO(pos_mode_name(mode), " worst ", r.worst_case, " err ", r.max_abs_error);
    CHECK(r.passed);
    CHECK(r.cases_run == 12);
  }
}
