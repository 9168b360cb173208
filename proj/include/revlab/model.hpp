#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "revlab/bpe.hpp"
#include "revlab/text.hpp"

namespace revlab {

enum class PosMode { rotary, relative_bias, learned_absolute };

// standard: causal mask, positions 0..m-1, slot k scores the next token.
// mirror: anti-causal mask (a slot attends to itself and later slots),
// positions m-1 down to 0, slot k scores the previous token.
enum class EvalDirection { standard, mirror };

std::string pos_mode_name(PosMode m);
PosMode pos_mode_from_name(const std::string& s);

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int max_len = 128;
  PosMode pos_mode = PosMode::rotary;
  bool tie_embeddings = true;

  int head_dim() const { return d_model / n_heads; }
  int ff_dim() const { return 4 * d_model; }
  void validate() const;  // throws std::invalid_argument
};

nlohmann::ordered_json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

struct LayerParams {
  Eigen::VectorXd ln1_gain, ln1_bias;
  Eigen::MatrixXd attn_q, attn_k, attn_v, attn_out;  // d x d
  Eigen::VectorXd ln2_gain, ln2_bias;
  Eigen::MatrixXd mlp_in;  // d x ff
  Eigen::VectorXd mlp_in_bias;
  Eigen::MatrixXd mlp_out;  // ff x d
  Eigen::VectorXd mlp_out_bias;
};

struct ModelParams {
  Eigen::MatrixXd embedding;    // vocab x d
  Eigen::MatrixXd unembedding;  // vocab x d; empty when tied
  std::vector<LayerParams> layers;
  Eigen::VectorXd final_gain, final_bias;
  Eigen::MatrixXd pos_table;  // max_len x d; learned_absolute only
  Eigen::MatrixXd rel_bias;   // n_heads x (2*max_len - 1); relative_bias only
};

// Flat named access to every tensor, in a fixed canonical order. Used for
// initialization, optimizer state, serialization and norms.
struct TensorView {
  std::string name;
  double* data;
  std::ptrdiff_t size;
  int rows, cols;
};
std::vector<TensorView> tensor_views(ModelParams& p);

// Shape-correct zero parameters for a config (also the gradient layout).
ModelParams zeros_like(const ModelConfig& cfg);

// Deterministic init: one RNG stream, tensors drawn in canonical order.
// Weight matrices are uniform in +-1/sqrt(fan_in), embeddings in
// +-1/sqrt(d_model), position and relative-bias tables in +-0.5;
// layer-norm gains are 1, all biases 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

double params_max_abs_diff(const ModelParams& a, const ModelParams& b);
bool params_all_finite(const ModelParams& p);

// Per-position next-token (standard) or previous-token (mirror) log-prob
// rows; z of length m yields m-1 rows, each log-normalized over the vocab.
// Row k scores z[k+1] in standard mode and z[k] in mirror mode.
std::vector<Eigen::VectorXd> forward_logprobs(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& z,
                                              EvalDirection dir);

// Negative sum of realized log-probs, nats. Requires len(z) >= 2.
double sequence_nll(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& z, EvalDirection dir);

std::vector<double> per_document_nll(const ModelParams& p, const ModelConfig& cfg, const BpeTokenizer& t,
                                     const Corpus& d, EvalDirection dir);

// Mean sequence NLL over the corpus multiset, nats per document.
double corpus_nll(const ModelParams& p, const ModelConfig& cfg, const BpeTokenizer& t, const Corpus& d,
                  EvalDirection dir);

// Training objective: mean NLL per predicted token over the batch, with the
// gradient accumulated into `grad` (which must be zeros_like-shaped).
double batch_nll_and_gradient(const ModelParams& p, const ModelConfig& cfg, const std::vector<TokenSeq>& batch,
                              EvalDirection dir, ModelParams& grad);

// Flat binary container of little-endian float64 plus a JSON sidecar with
// tensor names/shapes and the config.
void save_params(const ModelParams& p, const ModelConfig& cfg, const std::string& data_path,
                 const std::string& sidecar_path);
std::pair<ModelParams, ModelConfig> load_params(const std::string& data_path, const std::string& sidecar_path);

}  // namespace revlab
