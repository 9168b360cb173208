#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/bpe.hpp"
#include "revlab/model.hpp"
#include "revlab/reparam.hpp"
#include "revlab/text.hpp"
#include "revlab/train.hpp"

namespace revlab {

struct CheckReport {
  std::string name;
  int cases_run = 0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;          // always max_abs_error <= tolerance
  std::string worst_case;       // inputs of the maximal-error case
  std::vector<std::string> notes;
};

nlohmann::ordered_json check_to_json(const CheckReport& r);

// Tokenizer pair for a corpus and its reversal. Falls back to the
// character-level pair when the trained pair is not fully stable (partial
// bijection or any sequence-level violation); the fallback is recorded.
struct StablePair {
  BpeTokenizer fwd, rev;
  VocabBijection pi;
  bool char_fallback = false;
  StabilityReport stability;
};
StablePair build_stable_pair(const Corpus& d, int bpe_vocab_target);

// Coverage-1 bijection as a dense permutation vector.
std::vector<int> bijection_to_permutation(const VocabBijection& pi, int vocab_size);

// Per-token log-prob rows agree, after column relabeling, between a model
// and its vocabulary-permuted image on the permuted sequence. Cases cycle
// through all three positional modes and tied/untied embeddings.
struct EquivarianceOptions {
  int n_cases = 100;
  bool corrupt = false;  // negative control: damage one mapped embedding row
};
CheckReport check_perm_equivariance(const ModelConfig& cfg, std::uint64_t seed,
                                    const EquivarianceOptions& opt = {});

// Corpus NLL (and every per-document NLL) agrees between standard
// evaluation on the corpus and mirror evaluation of the remapped model on
// the reversed corpus.
struct InvarianceOptions {
  int n_cases = 25;
  int bpe_vocab_target = 0;  // <= 0 selects the character-level pair
  bool disable_flip = false;  // negative control for learned_absolute
  bool corrupt = false;       // negative control: damage one embedding row
};
CheckReport check_reversal_invariance(const ModelConfig& cfg, std::uint64_t seed, const Corpus& corpus,
                                      const InvarianceOptions& opt = {});

struct MatchedTrainRow {
  int step = 0;
  double loss_a = 0.0, loss_b = 0.0;
  double grad_discrepancy = 0.0;
  double param_discrepancy = 0.0;
  bool has_losses = false;  // false for the initial row
};

struct MatchedTrainResult {
  CheckReport params_report;  // sup-norm parameter discrepancy, tol 1e-5
  CheckReport loss_report;    // per-step loss difference, tol 1e-7
  std::vector<MatchedTrainRow> curve;
  bool used_char_fallback = false;
};

// Trains the standard run on the corpus and the mirror run on the reversed
// corpus from remapped initial parameters, with identical batch schedules,
// and compares losses, gradients (against the pushforward) and parameters
// at every step.
MatchedTrainResult matched_training_check(const ModelConfig& cfg, const TrainConfig& tcfg, const Corpus& corpus,
                                          int bpe_vocab_target = 0, bool corrupt = false);

std::string curves_csv(const MatchedTrainResult& r);

struct CurveComparisonResult {
  CheckReport report;  // |mean final NLL difference|, tol 2 x pooled seed std
  double mean_forward = 0.0, mean_reversed = 0.0, pooled_std = 0.0;
  std::vector<double> finals_forward, finals_reversed;
};

// Independently seeded standard-architecture runs on the corpus vs its
// reversal; a statistical criterion, deliberately weaker than the exact
// matched-trajectory check.
CurveComparisonResult independent_curves_comparison(const ModelConfig& cfg, const TrainConfig& tcfg,
                                                    const Corpus& corpus, int n_seeds, int bpe_vocab_target = 0,
                                                    bool corrupt = false);

// Analytic gradients vs central finite differences on random coordinates,
// exercising both evaluation directions. Gate before any trajectory claim.
CheckReport gradient_fd_check(const ModelConfig& cfg, std::uint64_t seed, int n_coords = 20);

}  // namespace revlab
