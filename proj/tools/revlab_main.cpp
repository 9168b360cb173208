// revlab: reversal-invariance laboratory for autoregressive language models.
//
// Subcommands:
//   check-invariance    permutation-equivariance + reversal-invariance checks
//   tokenizer-stability paired BPE training and the stability measurement
//   divergence          entropy rate / time-reversal divergence (exact or estimated)
//   matched-train       matched and independent training-trajectory checks
//
// Exit codes: 0 all checks passed, 1 a check failed, 2 usage or I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "revlab/checks.hpp"
#include "revlab/digest.hpp"
#include "revlab/markov.hpp"
#include "revlab/ngram.hpp"
#include "revlab/version.hpp"

using namespace revlab;
using nlohmann::ordered_json;

namespace {

struct CommonOpts {
  std::string corpus_path;
  std::string out_dir = "out";
  bool pretty = false;
  std::uint64_t seed = 0;
};

struct ModelOpts {
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int max_len = 128;
  bool untied = false;

  ModelConfig config(PosMode mode) const {
    ModelConfig cfg;
    cfg.vocab_size = 1;  // placeholder; checks derive it from the tokenizer
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.max_len = max_len;
    cfg.pos_mode = mode;
    cfg.tie_embeddings = !untied;
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelOpts& m) {
  cmd->add_option("--d-model", m.d_model, "model width");
  cmd->add_option("--n-heads", m.n_heads, "attention heads");
  cmd->add_option("--n-layers", m.n_layers, "transformer layers");
  cmd->add_option("--max-len", m.max_len, "maximum sequence length");
  cmd->add_flag("--untied", m.untied, "use a separate unembedding matrix");
}

void add_common_flags(CLI::App* cmd, CommonOpts& c, bool needs_corpus = true) {
  auto* opt = cmd->add_option("--corpus", c.corpus_path, "corpus file, one document per line");
  if (needs_corpus) opt->required();
  cmd->add_option("--out", c.out_dir, "output directory for reports");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_flag("--pretty", c.pretty, "print human-readable tables to stdout");
}

std::vector<PosMode> parse_modes(const std::string& s) {
  if (s == "all") return {PosMode::rotary, PosMode::relative_bias, PosMode::learned_absolute};
  return {pos_mode_from_name(s)};
}

ordered_json input_entry(const std::string& path, const std::string& content) {
  return {{"path", path}, {"digest", "fnv1a64:" + fnv1a64_hex(content)}};
}

ordered_json envelope(const std::string& command, std::uint64_t seed, ordered_json config, ordered_json inputs) {
  ordered_json j;
  j["command"] = command;
  j["version"] = REVLAB_VERSION;
  j["seed"] = seed;
  j["config"] = std::move(config);
  j["inputs"] = std::move(inputs);
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_report(const std::filesystem::path& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

void print_check_line(const CheckReport& r) {
  std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": max error " << r.max_abs_error << " (tolerance "
            << r.tolerance << ", " << r.cases_run << " cases)\n";
}

int cmd_check_invariance(const CommonOpts& common, const ModelOpts& model, const std::string& mode_arg,
                         int perm_cases, int reversal_cases, int bpe_vocab, bool no_flip) {
  const std::string corpus_bytes = read_file(common.corpus_path);
  const Corpus corpus = parse_corpus(corpus_bytes);

  ordered_json config;
  config["pos_modes"] = mode_arg;
  config["perm_cases"] = perm_cases;
  config["reversal_cases"] = reversal_cases;
  config["bpe_vocab"] = bpe_vocab;
  config["flip_positions_disabled"] = no_flip;
  config["model"] = config_to_json(model.config(PosMode::rotary));
  config["model"].erase("vocab_size");
  config["model"].erase("pos_mode");

  ordered_json results;
  bool all_passed = true;

  {
    ModelConfig cfg = model.config(PosMode::rotary);
    cfg.vocab_size = 16;  // the equivariance check draws its own sequences
    const CheckReport r = check_perm_equivariance(cfg, common.seed, {.n_cases = perm_cases});
    results["perm_equivariance"] = check_to_json(r);
    print_check_line(r);
    all_passed = all_passed && r.passed;
  }

  for (PosMode mode : parse_modes(mode_arg)) {
    InvarianceOptions opt;
    opt.n_cases = reversal_cases;
    opt.bpe_vocab_target = bpe_vocab;
    opt.disable_flip = no_flip;
    const CheckReport r = check_reversal_invariance(model.config(mode), common.seed, corpus, opt);
    results["reversal_invariance"][pos_mode_name(mode)] = check_to_json(r);
    std::cout << pos_mode_name(mode) << "  ";
    print_check_line(r);
    all_passed = all_passed && r.passed;
  }

  ordered_json report = envelope("check-invariance", common.seed, std::move(config),
                                 {{"corpus", input_entry(common.corpus_path, corpus_bytes)}});
  report["results"] = std::move(results);
  report["all_passed"] = all_passed;
  write_report(std::filesystem::path(common.out_dir) / "check_invariance.json", report);
  return all_passed ? 0 : 1;
}

int cmd_tokenizer_stability(const CommonOpts& common, int vocab_size, std::size_t max_violations,
                            bool dump_tokenizers) {
  const std::string corpus_bytes = read_file(common.corpus_path);
  const Corpus corpus = parse_corpus(corpus_bytes);

  const BpeTokenizer fwd = train_bpe(corpus, vocab_size);
  const BpeTokenizer rev = train_bpe(reverse_corpus(corpus), vocab_size);
  const VocabBijection pi = propose_reversal_bijection(fwd, rev);
  const StabilityReport rep = stability_report(fwd, rev, pi, corpus, max_violations);

  ordered_json report = envelope("tokenizer-stability", common.seed,
                                 {{"vocab_size", vocab_size}, {"max_violations", max_violations}},
                                 {{"corpus", input_entry(common.corpus_path, corpus_bytes)}});
  report["results"] = stability_to_json(rep);
  report["results"]["forward_tie_events"] = fwd.tie_events;
  report["results"]["reverse_tie_events"] = rev.tie_events;
  write_report(std::filesystem::path(common.out_dir) / "tokenizer_stability.json", report);
  if (dump_tokenizers) {
    write_report(std::filesystem::path(common.out_dir) / "tokenizer_forward.json", tokenizer_to_json(fwd));
    write_report(std::filesystem::path(common.out_dir) / "tokenizer_reverse.json", tokenizer_to_json(rev));
  }

  if (common.pretty)
    std::cout << stability_table(rep);
  else
    std::cout << "coverage " << rep.coverage << "  stable_fraction " << rep.seq_stable_fraction
              << "  merge_agreement " << rep.merge_agreement << "\n";
  return 0;  // a measurement, not a gate
}

int cmd_divergence(const CommonOpts& common, const std::string& chain_path, int order, double lambda,
                   int bruteforce_max_n, bool want_contributions) {
  ordered_json results;
  ordered_json inputs;
  ordered_json config = {{"lambda", lambda}};

  if (!chain_path.empty()) {
    const std::string chain_bytes = read_file(chain_path);
    const MarkovChain mc = chain_from_json(nlohmann::json::parse(chain_bytes));
    inputs["chain"] = input_entry(chain_path, chain_bytes);
    config["bruteforce_max_n"] = bruteforce_max_n;

    const double h = entropy_rate(mc);
    const double a = time_reversal_divergence(mc);
    results["h_nats"] = h;
    results["h_bits"] = h / std::log(2.0);
    results["perplexity_floor"] = perplexity_floor(h);
    results["A_nats"] = a;
    results["A_bits"] = a / std::log(2.0);
    results["reversed_entropy_rate"] = entropy_rate(reverse_chain(mc));

    ordered_json table = ordered_json::array();
    double paths = static_cast<double>(mc.n_states());
    for (int n = 2; n <= bruteforce_max_n; ++n) {
      paths *= mc.n_states();
      if (paths > 1e7) break;
      const double kl = path_kl_bruteforce(mc, n);
      table.push_back({{"n", n}, {"path_kl_per_token", kl}, {"gap_to_closed_form", std::abs(kl - a)}});
    }
    results["bruteforce_convergence"] = std::move(table);

    if (common.pretty) {
      std::cout << "entropy rate      " << h << " nats (" << h / std::log(2.0) << " bits)\n"
                << "perplexity floor  " << perplexity_floor(h) << "\n"
                << "divergence rate   " << a << " nats (" << a / std::log(2.0) << " bits)\n";
      for (const auto& row : results["bruteforce_convergence"])
        std::cout << "  n=" << row["n"] << "  (1/n)KL=" << row["path_kl_per_token"].get<double>() << "\n";
    } else {
      std::cout << "h " << h << "  A " << a << "\n";
    }
  } else {
    const std::string corpus_bytes = read_file(common.corpus_path);
    const Corpus corpus = parse_corpus(corpus_bytes);
    inputs["corpus"] = input_entry(common.corpus_path, corpus_bytes);
    config["order"] = order;

    const BpeTokenizer t = char_tokenizer(corpus);
    const EstimateReport est = estimate_from_corpus(t, corpus, order, lambda);
    results = estimate_to_json(est);
    if (want_contributions)
      write_text(std::filesystem::path(common.out_dir) / "divergence_contributions.csv", contributions_csv(est));

    if (common.pretty) {
      std::cout << "h_hat " << est.h_nats << " nats  A_hat " << est.a_nats << " nats  (order " << order
                << ", lambda " << lambda << ", " << est.token_count << " tokens)\n";
      for (const auto& w : est.warnings) std::cout << "warning: " << w << "\n";
    } else {
      std::cout << "h_hat " << est.h_nats << "  A_hat " << est.a_nats << "\n";
    }
  }

  ordered_json report = envelope("divergence", common.seed, std::move(config), std::move(inputs));
  report["results"] = std::move(results);
  write_report(std::filesystem::path(common.out_dir) / "divergence.json", report);
  return 0;
}

int cmd_matched_train(const CommonOpts& common, const ModelOpts& model, const std::string& mode_arg,
                      TrainConfig tcfg, const std::string& optimizer_arg, int bpe_vocab, bool independent,
                      int n_seeds) {
  tcfg.optimizer = optimizer_from_name(optimizer_arg);
  tcfg.seed = common.seed;
  const std::string corpus_bytes = read_file(common.corpus_path);
  const Corpus corpus = parse_corpus(corpus_bytes);
  const PosMode mode = pos_mode_from_name(mode_arg);

  ordered_json config;
  config["steps"] = tcfg.steps;
  config["batch_size"] = tcfg.batch_size;
  config["learning_rate"] = tcfg.learning_rate;
  config["optimizer"] = optimizer_name(tcfg.optimizer);
  config["bpe_vocab"] = bpe_vocab;
  config["pos_mode"] = mode_arg;
  config["independent_seeds"] = independent ? n_seeds : 0;
  config["model"] = config_to_json(model.config(mode));
  config["model"].erase("vocab_size");

  bool all_passed = true;
  ordered_json results;

  const MatchedTrainResult r = matched_training_check(model.config(mode), tcfg, corpus, bpe_vocab);
  results["matched"] = {{"params", check_to_json(r.params_report)},
                        {"loss", check_to_json(r.loss_report)},
                        {"char_fallback", r.used_char_fallback}};
  print_check_line(r.params_report);
  print_check_line(r.loss_report);
  all_passed = all_passed && r.params_report.passed && r.loss_report.passed;
  write_text(std::filesystem::path(common.out_dir) / "matched_train_curves.csv", curves_csv(r));

  if (independent) {
    const CurveComparisonResult ic = independent_curves_comparison(model.config(mode), tcfg, corpus, n_seeds,
                                                                   bpe_vocab);
    results["independent"] = check_to_json(ic.report);
    results["independent"]["mean_forward"] = ic.mean_forward;
    results["independent"]["mean_reversed"] = ic.mean_reversed;
    results["independent"]["pooled_std"] = ic.pooled_std;
    print_check_line(ic.report);
    all_passed = all_passed && ic.report.passed;
  }

  ordered_json report = envelope("matched-train", common.seed, std::move(config),
                                 {{"corpus", input_entry(common.corpus_path, corpus_bytes)}});
  report["results"] = std::move(results);
  report["all_passed"] = all_passed;
  write_report(std::filesystem::path(common.out_dir) / "matched_train.json", report);
  return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reversal-invariance laboratory for autoregressive language models"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.fallthrough();

  // check-invariance
  CommonOpts ci_common;
  ModelOpts ci_model;
  std::string ci_modes = "all";
  int ci_perm_cases = 60, ci_rev_cases = 10, ci_bpe_vocab = 16;
  bool ci_no_flip = false;
  auto* ci = app.add_subcommand("check-invariance", "verify permutation equivariance and reversal invariance");
  add_common_flags(ci, ci_common);
  add_model_flags(ci, ci_model);
  ci->add_option("--pos-mode", ci_modes, "rotary|relative_bias|learned_absolute|all")->default_str("all");
  ci->add_option("--perm-cases", ci_perm_cases, "equivariance cases");
  ci->add_option("--cases", ci_rev_cases, "random parameter draws for the reversal check");
  ci->add_option("--bpe-vocab", ci_bpe_vocab, "tokenizer vocab target (0 = character level)");
  ci->add_flag("--no-flip", ci_no_flip, "disable the position index flip (negative control)");

  // tokenizer-stability
  CommonOpts ts_common;
  int ts_vocab = 64;
  std::size_t ts_max_violations = 10;
  bool ts_dump = false;
  auto* ts = app.add_subcommand("tokenizer-stability", "measure tokenization stability under reversal");
  add_common_flags(ts, ts_common);
  ts->add_option("--vocab-size", ts_vocab, "BPE target vocabulary size")->required();
  ts->add_option("--max-violations", ts_max_violations, "violating examples to keep");
  ts->add_flag("--dump-tokenizers", ts_dump, "also write both tokenizers as JSON");

  // divergence
  CommonOpts dv_common;
  std::string dv_chain;
  int dv_order = 2, dv_bruteforce = 8;
  double dv_lambda = 0.5;
  bool dv_contrib = false;
  auto* dv = app.add_subcommand("divergence", "entropy rate and time-reversal divergence");
  add_common_flags(dv, dv_common, /*needs_corpus=*/false);
  dv->add_option("--chain", dv_chain, "chain spec JSON ({states, transition})");
  dv->add_option("--order", dv_order, "n-gram order for corpus estimation");
  dv->add_option("--lambda", dv_lambda, "add-lambda smoothing");
  dv->add_option("--bruteforce-max-n", dv_bruteforce, "path-KL table upper n (enumeration-guarded)");
  dv->add_flag("--contributions-csv", dv_contrib, "write per-context KL contributions");

  // matched-train
  CommonOpts mt_common;
  ModelOpts mt_model;
  std::string mt_mode = "rotary", mt_optimizer = "sgd";
  TrainConfig mt_tcfg;
  int mt_bpe_vocab = 16, mt_seeds = 5;
  bool mt_independent = false;
  auto* mt = app.add_subcommand("matched-train", "matched and independent training trajectory checks");
  add_common_flags(mt, mt_common);
  add_model_flags(mt, mt_model);
  mt->add_option("--steps", mt_tcfg.steps, "optimizer steps");
  mt->add_option("--batch-size", mt_tcfg.batch_size, "documents per batch");
  mt->add_option("--lr", mt_tcfg.learning_rate, "learning rate");
  mt->add_option("--optimizer", mt_optimizer, "sgd|adam");
  mt->add_option("--pos-mode", mt_mode, "rotary|relative_bias|learned_absolute");
  mt->add_option("--bpe-vocab", mt_bpe_vocab, "tokenizer vocab target (0 = character level)");
  mt->add_flag("--independent", mt_independent, "also run the independently seeded comparison");
  mt->add_option("--seeds", mt_seeds, "seeds per side for --independent (minimum 3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (ci->parsed())
      return cmd_check_invariance(ci_common, ci_model, ci_modes, ci_perm_cases, ci_rev_cases, ci_bpe_vocab,
                                  ci_no_flip);
    if (ts->parsed()) return cmd_tokenizer_stability(ts_common, ts_vocab, ts_max_violations, ts_dump);
    if (dv->parsed()) {
      if (dv_chain.empty() && dv_common.corpus_path.empty()) {
        std::cerr << "divergence needs either --chain or --corpus\n";
        return 2;
      }
      return cmd_divergence(dv_common, dv_chain, dv_order, dv_lambda, dv_bruteforce, dv_contrib);
    }
    if (mt->parsed()) {
      if (mt_independent && mt_seeds < 3) {
        std::cerr << "--independent needs --seeds of at least 3\n";
        return 2;
      }
      return cmd_matched_train(mt_common, mt_model, mt_mode, mt_tcfg, mt_optimizer, mt_bpe_vocab, mt_independent,
                               mt_seeds);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
