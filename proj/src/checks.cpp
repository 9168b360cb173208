#include "revlab/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace revlab {

namespace {

constexpr double kForwardTol = 1e-9;
constexpr double kTrainParamTol = 1e-5;
constexpr double kTrainLossTol = 1e-7;
constexpr double kGradRelTol = 1e-6;

void finish(CheckReport& r) { r.passed = r.max_abs_error <= r.tolerance; }

std::string case_desc(int i, const ModelConfig& cfg) {
  std::ostringstream s;
  s << "{\"case\":" << i << ",\"pos_mode\":\"" << pos_mode_name(cfg.pos_mode) << "\",\"tied\":"
    << (cfg.tie_embeddings ? "true" : "false") << "}";
  return s.str();
}

std::vector<TokenSeq> encode_all(const BpeTokenizer& t, const Corpus& d) {
  std::vector<TokenSeq> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.docs.size(); ++i) {
    try {
      out.push_back(encode(t, d.docs[i]));
    } catch (const std::exception& e) {
      throw std::runtime_error("document " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

ModelParams train_run(const ModelConfig& cfg, const TrainConfig& tcfg, const std::vector<TokenSeq>& seqs,
                      EvalDirection dir, ModelParams theta, std::uint64_t schedule_seed) {
  Optimizer opt(tcfg, cfg);
  BatchSchedule sched(seqs.size(), tcfg.batch_size, schedule_seed);
  for (int step = 0; step < tcfg.steps; ++step) {
    const std::vector<std::size_t> idx = sched.batch(step);
    std::vector<TokenSeq> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(seqs[i]);
    ModelParams grad = zeros_like(cfg);
    const double loss = batch_nll_and_gradient(theta, cfg, batch, dir, grad);
    if (!std::isfinite(loss)) throw std::runtime_error("training diverged at step " + std::to_string(step));
    opt.step(theta, grad);
  }
  return theta;
}

}  // namespace

nlohmann::ordered_json check_to_json(const CheckReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["cases_run"] = r.cases_run;
  j["max_abs_error"] = r.max_abs_error;
  j["tolerance"] = r.tolerance;
  j["passed"] = r.passed;
  j["worst_case"] = r.worst_case;
  j["notes"] = r.notes;
  return j;
}

std::vector<int> bijection_to_permutation(const VocabBijection& pi, int vocab_size) {
  if (!pi.total() || static_cast<int>(pi.forward.size()) != vocab_size)
    throw std::invalid_argument("bijection does not cover the full vocabulary");
  std::vector<int> perm(static_cast<std::size_t>(vocab_size), -1);
  for (const auto& [src, dst] : pi.forward) {
    if (src < 0 || src >= vocab_size || dst < 0 || dst >= vocab_size)
      throw std::invalid_argument("bijection ids outside vocabulary range");
    perm[static_cast<std::size_t>(src)] = dst;
  }
  return perm;
}

StablePair build_stable_pair(const Corpus& d, int bpe_vocab_target) {
  auto make = [&](int target) {
    StablePair pair;
    const Corpus reversed = reverse_corpus(d);
    pair.fwd = target <= 0 ? char_tokenizer(d) : train_bpe(d, target);
    pair.rev = target <= 0 ? char_tokenizer(reversed) : train_bpe(reversed, target);
    pair.pi = propose_reversal_bijection(pair.fwd, pair.rev);
    pair.stability = stability_report(pair.fwd, pair.rev, pair.pi, d);
    return pair;
  };
  StablePair pair = make(bpe_vocab_target);
  if (bpe_vocab_target > 0 && (!pair.pi.total() || !pair.stability.stable())) {
    pair = make(0);
    pair.char_fallback = true;
  }
  return pair;
}

CheckReport check_perm_equivariance(const ModelConfig& cfg, std::uint64_t seed, const EquivarianceOptions& opt) {
  CheckReport report;
  report.name = "perm_equivariance";
  report.tolerance = kForwardTol;

  static const PosMode kModes[3] = {PosMode::rotary, PosMode::relative_bias, PosMode::learned_absolute};
  for (int i = 0; i < opt.n_cases; ++i) {
    ModelConfig ccfg = cfg;
    ccfg.pos_mode = kModes[i % 3];
    ccfg.tie_embeddings = (i / 3) % 2 == 0;
    ccfg.validate();

    const std::uint64_t case_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    const ModelParams theta = init_params(ccfg, case_seed);

    Rng rng(mix_seed(case_seed, 1));
    ParamMap phi = ParamMap::identity(ccfg.vocab_size);
    rng.shuffle(phi.vocab_perm);
    const int len = 2 + rng.below(std::min(ccfg.max_len, 12) - 1);
    TokenSeq z;
    for (int k = 0; k < len; ++k) z.push_back(rng.below(ccfg.vocab_size));

    ModelParams mapped = apply_param_map(phi, theta, ccfg);
    if (opt.corrupt) mapped.embedding(0, 0) += 1.0;

    const auto rows = forward_logprobs(theta, ccfg, z, EvalDirection::standard);
    const auto rows_mapped = forward_logprobs(mapped, ccfg, permute_sequence(phi.vocab_perm, z),
                                              EvalDirection::standard);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int v = 0; v < ccfg.vocab_size; ++v) {
        const double err = std::abs(rows[k](v) - rows_mapped[k](phi.vocab_perm[static_cast<std::size_t>(v)]));
        if (err > report.max_abs_error) {
          report.max_abs_error = err;
          report.worst_case = case_desc(i, ccfg);
        }
      }
    }
    ++report.cases_run;
  }
  finish(report);
  return report;
}

CheckReport check_reversal_invariance(const ModelConfig& cfg, std::uint64_t seed, const Corpus& corpus,
                                      const InvarianceOptions& opt) {
  CheckReport report;
  report.name = "reversal_invariance";
  report.tolerance = kForwardTol;

  const StablePair pair = build_stable_pair(corpus, opt.bpe_vocab_target);
  if (pair.char_fallback) report.notes.push_back("trained tokenizer pair was unstable; fell back to character level");
  report.notes.push_back("tokenizer coverage " + std::to_string(pair.pi.coverage) + ", stable fraction " +
                         std::to_string(pair.stability.seq_stable_fraction));

  ModelConfig ccfg = cfg;
  ccfg.vocab_size = pair.fwd.vocab_size();
  ccfg.validate();

  ParamMap psi;
  psi.vocab_perm = bijection_to_permutation(pair.pi, ccfg.vocab_size);
  psi.flip_positions = ccfg.pos_mode == PosMode::learned_absolute && !opt.disable_flip;
  if (ccfg.pos_mode == PosMode::learned_absolute) {
    report.notes.push_back(psi.flip_positions ? "position index flip applied"
                                              : "position index flip DISABLED (negative control)");
  } else {
    report.notes.push_back("position index flip not applicable for " + pos_mode_name(ccfg.pos_mode));
  }

  const Corpus reversed = reverse_corpus(corpus);
  for (int i = 0; i < opt.n_cases; ++i) {
    const ModelParams theta = init_params(ccfg, mix_seed(seed, static_cast<std::uint64_t>(i)));
    ModelParams mapped = apply_param_map(psi, theta, ccfg);
    if (opt.corrupt) mapped.embedding(0, 0) += 1.0;

    const std::vector<double> fwd = per_document_nll(theta, ccfg, pair.fwd, corpus, EvalDirection::standard);
    const std::vector<double> rev = per_document_nll(mapped, ccfg, pair.rev, reversed, EvalDirection::mirror);
    double mean_fwd = 0.0, mean_rev = 0.0;
    for (std::size_t k = 0; k < fwd.size(); ++k) {
      mean_fwd += fwd[k];
      mean_rev += rev[k];
      const double err = std::abs(fwd[k] - rev[k]);
      if (err > report.max_abs_error) {
        report.max_abs_error = err;
        report.worst_case = "{\"case\":" + std::to_string(i) + ",\"doc\":" + std::to_string(k) + "}";
      }
    }
    const double mean_err = std::abs(mean_fwd - mean_rev) / static_cast<double>(fwd.size());
    if (mean_err > report.max_abs_error) {
      report.max_abs_error = mean_err;
      report.worst_case = "{\"case\":" + std::to_string(i) + ",\"doc\":\"corpus mean\"}";
    }
    ++report.cases_run;
  }
  finish(report);
  return report;
}

MatchedTrainResult matched_training_check(const ModelConfig& cfg, const TrainConfig& tcfg, const Corpus& corpus,
                                          int bpe_vocab_target, bool corrupt) {
  tcfg.validate();
  MatchedTrainResult result;
  const StablePair pair = build_stable_pair(corpus, bpe_vocab_target);
  result.used_char_fallback = pair.char_fallback;

  ModelConfig ccfg = cfg;
  ccfg.vocab_size = pair.fwd.vocab_size();
  ccfg.validate();

  ParamMap psi;
  psi.vocab_perm = bijection_to_permutation(pair.pi, ccfg.vocab_size);
  psi.flip_positions = ccfg.pos_mode == PosMode::learned_absolute;

  const std::vector<TokenSeq> seqs_a = encode_all(pair.fwd, corpus);
  const std::vector<TokenSeq> seqs_b = encode_all(pair.rev, reverse_corpus(corpus));

  ModelParams theta_a = init_params(ccfg, tcfg.seed);
  ModelParams theta_b = apply_param_map(psi, theta_a, ccfg);
  if (corrupt) theta_b.embedding(0, 0) += 0.01;

  result.params_report.name = "matched_training_params";
  result.params_report.tolerance = kTrainParamTol;
  result.loss_report.name = "matched_training_loss";
  result.loss_report.tolerance = kTrainLossTol;

  MatchedTrainRow initial;
  initial.step = 0;
  initial.param_discrepancy = params_max_abs_diff(theta_b, apply_param_map(psi, theta_a, ccfg));
  result.curve.push_back(initial);
  result.params_report.max_abs_error = initial.param_discrepancy;
  result.params_report.worst_case = "{\"step\":0}";

  Optimizer opt_a(tcfg, ccfg), opt_b(tcfg, ccfg);
  BatchSchedule sched(seqs_a.size(), tcfg.batch_size, tcfg.seed);
  for (int step = 0; step < tcfg.steps; ++step) {
    const std::vector<std::size_t> idx = sched.batch(step);
    std::vector<TokenSeq> batch_a, batch_b;
    batch_a.reserve(idx.size());
    batch_b.reserve(idx.size());
    for (std::size_t i : idx) {
      batch_a.push_back(seqs_a[i]);
      batch_b.push_back(seqs_b[i]);
    }

    ModelParams grad_a = zeros_like(ccfg), grad_b = zeros_like(ccfg);
    const double loss_a = batch_nll_and_gradient(theta_a, ccfg, batch_a, EvalDirection::standard, grad_a);
    const double loss_b = batch_nll_and_gradient(theta_b, ccfg, batch_b, EvalDirection::mirror, grad_b);
    if (!std::isfinite(loss_a) || !std::isfinite(loss_b))
      throw std::runtime_error("training diverged at step " + std::to_string(step));

    MatchedTrainRow row;
    row.step = step + 1;
    row.has_losses = true;
    row.loss_a = loss_a;
    row.loss_b = loss_b;
    row.grad_discrepancy = params_max_abs_diff(grad_b, pushforward_gradient(psi, grad_a, ccfg));

    opt_a.step(theta_a, grad_a);
    opt_b.step(theta_b, grad_b);
    row.param_discrepancy = params_max_abs_diff(theta_b, apply_param_map(psi, theta_a, ccfg));
    result.curve.push_back(row);

    if (row.param_discrepancy > result.params_report.max_abs_error) {
      result.params_report.max_abs_error = row.param_discrepancy;
      result.params_report.worst_case = "{\"step\":" + std::to_string(row.step) + "}";
    }
    const double loss_err = std::abs(loss_a - loss_b);
    if (loss_err > result.loss_report.max_abs_error) {
      result.loss_report.max_abs_error = loss_err;
      result.loss_report.worst_case = "{\"step\":" + std::to_string(row.step) + "}";
    }
  }
  result.params_report.cases_run = tcfg.steps;
  result.loss_report.cases_run = tcfg.steps;
  if (result.used_char_fallback) {
    result.params_report.notes.push_back("character-level tokenizer fallback");
    result.loss_report.notes.push_back("character-level tokenizer fallback");
  }
  finish(result.params_report);
  finish(result.loss_report);
  return result;
}

std::string curves_csv(const MatchedTrainResult& r) {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss_A,loss_B,grad_discrepancy,param_discrepancy\n";
  for (const auto& row : r.curve) {
    out << row.step << ',';
    if (row.has_losses)
      out << row.loss_a << ',' << row.loss_b << ',' << row.grad_discrepancy;
    else
      out << ",,";
    out << ',' << row.param_discrepancy << '\n';
  }
  return out.str();
}

CurveComparisonResult independent_curves_comparison(const ModelConfig& cfg, const TrainConfig& tcfg,
                                                    const Corpus& corpus, int n_seeds, int bpe_vocab_target,
                                                    bool corrupt) {
  tcfg.validate();
  if (n_seeds < 3) throw std::invalid_argument("independent curve comparison needs at least 3 seeds");

  const StablePair pair = build_stable_pair(corpus, bpe_vocab_target);
  ModelConfig ccfg = cfg;
  ccfg.vocab_size = pair.fwd.vocab_size();
  ccfg.validate();

  Corpus side_b = reverse_corpus(corpus);
  if (corrupt) {
    // negative control: replace the reversed side with a trivially
    // learnable constant corpus; the 2-sigma criterion must then fail
    const Str filler(16, pair.rev.base_alphabet.front());
    for (auto& doc : side_b.docs) doc = filler;
  }

  const std::vector<TokenSeq> seqs_a = encode_all(pair.fwd, corpus);
  const std::vector<TokenSeq> seqs_b = encode_all(pair.rev, side_b);

  CurveComparisonResult result;
  for (int k = 0; k < n_seeds; ++k) {
    const std::uint64_t seed_a = mix_seed(tcfg.seed, static_cast<std::uint64_t>(k));
    const std::uint64_t seed_b = mix_seed(tcfg.seed, 0x10000ULL + static_cast<std::uint64_t>(k));
    ModelParams theta_a = train_run(ccfg, tcfg, seqs_a, EvalDirection::standard, init_params(ccfg, seed_a), seed_a);
    ModelParams theta_b = train_run(ccfg, tcfg, seqs_b, EvalDirection::standard, init_params(ccfg, seed_b), seed_b);
    result.finals_forward.push_back(corpus_nll(theta_a, ccfg, pair.fwd, corpus, EvalDirection::standard));
    result.finals_reversed.push_back(corpus_nll(theta_b, ccfg, pair.rev, side_b, EvalDirection::standard));
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sample_std = [&](const std::vector<double>& v, double mu) {
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  result.mean_forward = mean(result.finals_forward);
  result.mean_reversed = mean(result.finals_reversed);
  const double sa = sample_std(result.finals_forward, result.mean_forward);
  const double sb = sample_std(result.finals_reversed, result.mean_reversed);
  result.pooled_std = std::sqrt(0.5 * (sa * sa + sb * sb));

  result.report.name = "independent_curves";
  result.report.cases_run = n_seeds;
  result.report.max_abs_error = std::abs(result.mean_forward - result.mean_reversed);
  result.report.tolerance = 2.0 * result.pooled_std;
  result.report.worst_case = "{\"mean_forward\":" + std::to_string(result.mean_forward) +
                             ",\"mean_reversed\":" + std::to_string(result.mean_reversed) + "}";
  finish(result.report);
  return result;
}

CheckReport gradient_fd_check(const ModelConfig& cfg, std::uint64_t seed, int n_coords) {
  cfg.validate();
  CheckReport report;
  report.name = "gradient_finite_difference";
  report.tolerance = kGradRelTol;

  Rng rng(mix_seed(seed, 0xfd));
  std::vector<TokenSeq> batch;
  for (int i = 0; i < 3; ++i) {
    TokenSeq z;
    const int len = 6 + rng.below(5);
    for (int k = 0; k < len; ++k) z.push_back(rng.below(cfg.vocab_size));
    batch.push_back(std::move(z));
  }
  std::vector<TokenSeq> batch_rev;
  for (const TokenSeq& z : batch) batch_rev.push_back(reverse_tokens(z));

  ModelParams theta = init_params(cfg, seed);
  ModelParams grad_std = zeros_like(cfg), grad_mir = zeros_like(cfg);
  batch_nll_and_gradient(theta, cfg, batch, EvalDirection::standard, grad_std);
  batch_nll_and_gradient(theta, cfg, batch_rev, EvalDirection::mirror, grad_mir);

  auto views = tensor_views(theta);
  std::ptrdiff_t total = 0;
  for (const auto& v : views) total += v.size;

  const double h = 5e-5;
  for (int c = 0; c < n_coords; ++c) {
    // flat coordinate, alternating between the two evaluation directions
    std::ptrdiff_t flat = static_cast<std::ptrdiff_t>(rng.next() % static_cast<std::uint64_t>(total));
    std::size_t view_idx = 0;
    while (flat >= views[view_idx].size) {
      flat -= views[view_idx].size;
      ++view_idx;
    }
    const bool use_mirror = c % 2 == 1;
    const std::vector<TokenSeq>& b = use_mirror ? batch_rev : batch;
    const EvalDirection dir = use_mirror ? EvalDirection::mirror : EvalDirection::standard;
    const ModelParams& grad = use_mirror ? grad_mir : grad_std;

    double& coord = views[view_idx].data[flat];
    const double saved = coord;
    ModelParams scratch = zeros_like(cfg);
    coord = saved + h;
    const double up = batch_nll_and_gradient(theta, cfg, b, dir, scratch);
    coord = saved - h;
    const double down = batch_nll_and_gradient(theta, cfg, b, dir, scratch);
    coord = saved;

    const double fd = (up - down) / (2.0 * h);
    const double analytic = tensor_views(const_cast<ModelParams&>(grad))[view_idx].data[flat];
    const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-4});
    if (rel > report.max_abs_error) {
      report.max_abs_error = rel;
      report.worst_case = "{\"tensor\":\"" + views[view_idx].name + "\",\"flat_index\":" + std::to_string(flat) +
                          ",\"direction\":\"" + (use_mirror ? "mirror" : "standard") + "\"}";
    }
    ++report.cases_run;
  }
  finish(report);
  return report;
}

}  // namespace revlab
