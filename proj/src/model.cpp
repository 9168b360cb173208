#include "revlab/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "revlab/rng.hpp"

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace revlab {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kRotaryBase = 10000.0;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  return cdf + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

// slot geometry for the two evaluation directions
struct Geometry {
  int m;
  int max_len;
  bool mirror;

  int pos(int slot) const { return mirror ? m - 1 - slot : slot; }
  int att_begin(int q) const { return mirror ? q : 0; }
  int att_end(int q) const { return mirror ? m : q + 1; }
  // mirror reads the absolute table from its top end, so that a whole-table
  // index flip restores standard behavior for any sequence length
  int abs_row(int slot) const { return mirror ? max_len - m + slot : slot; }
};

struct LnCache {
  Eigen::MatrixXd xhat;
  Eigen::VectorXd rstd;
};

Eigen::MatrixXd layernorm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain, const Eigen::VectorXd& bias,
                          LnCache& cache) {
  const Eigen::Index m = x.rows(), d = x.cols();
  cache.xhat.resize(m, d);
  cache.rstd.resize(m);
  Eigen::MatrixXd y(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mu) * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(gain.transpose()) + bias.transpose();
  }
  return y;
}

Eigen::MatrixXd layernorm_backward(const Eigen::MatrixXd& dy, const LnCache& cache, const Eigen::VectorXd& gain,
                                   Eigen::VectorXd& dgain, Eigen::VectorXd& dbias) {
  const Eigen::Index m = dy.rows(), d = dy.cols();
  Eigen::MatrixXd dx(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    dgain += dy.row(i).cwiseProduct(cache.xhat.row(i)).transpose();
    dbias += dy.row(i).transpose();
    const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gain.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

// in-place rotary rotation of the head blocks of every row; sign=-1 applies
// the inverse rotation (used for gradients)
void rotate_rows(Eigen::MatrixXd& x, const Geometry& geo, int n_heads, int head_dim, double sign) {
  const int pairs = head_dim / 2;
  for (Eigen::Index slot = 0; slot < x.rows(); ++slot) {
    const double p = static_cast<double>(geo.pos(static_cast<int>(slot)));
    for (int h = 0; h < n_heads; ++h) {
      const int base = h * head_dim;
      for (int t = 0; t < pairs; ++t) {
        const double omega = std::pow(kRotaryBase, -2.0 * t / head_dim);
        const double angle = sign * p * omega;
        const double c = std::cos(angle), s = std::sin(angle);
        const double x0 = x(slot, base + 2 * t);
        const double x1 = x(slot, base + 2 * t + 1);
        x(slot, base + 2 * t) = x0 * c - x1 * s;
        x(slot, base + 2 * t + 1) = x0 * s + x1 * c;
      }
    }
  }
}

struct LayerCache {
  Eigen::MatrixXd x_in;
  LnCache ln1;
  Eigen::MatrixXd a;           // post-ln1
  Eigen::MatrixXd q, k, v;     // q,k already rotated in rotary mode
  std::vector<Eigen::MatrixXd> wgt;  // per head, attended region only
  Eigen::MatrixXd ctx;
  Eigen::MatrixXd x_mid;
  LnCache ln2;
  Eigen::MatrixXd b;           // post-ln2
  Eigen::MatrixXd h_pre, h_act;
};

int rel_index(const ModelConfig& cfg, int off) {
  const int lim = cfg.max_len - 1;
  if (off > lim) off = lim;
  if (off < -lim) off = -lim;
  return off + lim;
}

const Eigen::MatrixXd& output_matrix(const ModelParams& p, const ModelConfig& cfg) {
  return cfg.tie_embeddings ? p.embedding : p.unembedding;
}

void check_sequence(const ModelConfig& cfg, const TokenSeq& z) {
  if (z.empty()) throw std::invalid_argument("sequence must be non-empty");
  if (static_cast<int>(z.size()) > cfg.max_len)
    throw std::invalid_argument("sequence length " + std::to_string(z.size()) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  for (std::size_t i = 0; i < z.size(); ++i)
    if (z[i] < 0 || z[i] >= cfg.vocab_size)
      throw std::invalid_argument("token id " + std::to_string(z[i]) + " at position " + std::to_string(i) +
                                  " outside vocab of size " + std::to_string(cfg.vocab_size));
}

// Runs one sequence in the given direction. Returns the NLL (sum over the
// m-1 realized predictions). If grad is non-null, accumulates grad_scale
// times the NLL gradient. If rows_out is non-null, stores the m-1
// log-normalized prediction rows.
double run_sequence(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& z, EvalDirection dir,
                    double grad_scale, ModelParams* grad, std::vector<Eigen::VectorXd>* rows_out) {
  check_sequence(cfg, z);
  const int m = static_cast<int>(z.size());
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Geometry geo{m, cfg.max_len, dir == EvalDirection::mirror};

  Eigen::MatrixXd x(m, d);
  for (int i = 0; i < m; ++i) {
    x.row(i) = p.embedding.row(z[static_cast<std::size_t>(i)]);
    if (cfg.pos_mode == PosMode::learned_absolute) x.row(i) += p.pos_table.row(geo.abs_row(i));
  }

  std::vector<LayerCache> caches(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];
    LayerCache& c = caches[static_cast<std::size_t>(l)];
    c.x_in = x;
    c.a = layernorm(c.x_in, lp.ln1_gain, lp.ln1_bias, c.ln1);
    c.q = c.a * lp.attn_q;
    c.k = c.a * lp.attn_k;
    c.v = c.a * lp.attn_v;
    if (cfg.pos_mode == PosMode::rotary) {
      rotate_rows(c.q, geo, nh, dh, 1.0);
      rotate_rows(c.k, geo, nh, dh, 1.0);
    }
    c.ctx = Eigen::MatrixXd::Zero(m, d);
    c.wgt.assign(static_cast<std::size_t>(nh), Eigen::MatrixXd::Zero(m, m));
    for (int h = 0; h < nh; ++h) {
      const int base = h * dh;
      for (int qs = 0; qs < m; ++qs) {
        const int kb = geo.att_begin(qs), ke = geo.att_end(qs);
        double mx = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd score(ke - kb);
        for (int ks = kb; ks < ke; ++ks) {
          double sc = c.q.row(qs).segment(base, dh).dot(c.k.row(ks).segment(base, dh)) * inv_sqrt_dh;
          if (cfg.pos_mode == PosMode::relative_bias)
            sc += p.rel_bias(h, rel_index(cfg, geo.pos(qs) - geo.pos(ks)));
          score(ks - kb) = sc;
          mx = std::max(mx, sc);
        }
        double denom = 0.0;
        for (int ks = kb; ks < ke; ++ks) denom += std::exp(score(ks - kb) - mx);
        for (int ks = kb; ks < ke; ++ks) {
          const double w = std::exp(score(ks - kb) - mx) / denom;
          c.wgt[static_cast<std::size_t>(h)](qs, ks) = w;
          c.ctx.row(qs).segment(base, dh) += w * c.v.row(ks).segment(base, dh);
        }
      }
    }
    c.x_mid = c.x_in + c.ctx * lp.attn_out;
    c.b = layernorm(c.x_mid, lp.ln2_gain, lp.ln2_bias, c.ln2);
    c.h_pre = (c.b * lp.mlp_in).rowwise() + lp.mlp_in_bias.transpose();
    c.h_act = c.h_pre.unaryExpr([](double v) { return gelu(v); });
    x = c.x_mid + ((c.h_act * lp.mlp_out).rowwise() + lp.mlp_out_bias.transpose());
  }

  LnCache lnf;
  const Eigen::MatrixXd f = layernorm(x, p.final_gain, p.final_bias, lnf);
  const Eigen::MatrixXd& out_mat = output_matrix(p, cfg);
  Eigen::MatrixXd logits = f * out_mat.transpose();  // m x vocab

  // log-softmax per row: max subtraction, then a left-to-right sum
  Eigen::MatrixXd logprob(m, cfg.vocab_size);
  for (int i = 0; i < m; ++i) {
    double mx = logits(i, 0);
    for (int vId = 1; vId < cfg.vocab_size; ++vId) mx = std::max(mx, logits(i, vId));
    double denom = 0.0;
    for (int vId = 0; vId < cfg.vocab_size; ++vId) denom += std::exp(logits(i, vId) - mx);
    const double lse = mx + std::log(denom);
    for (int vId = 0; vId < cfg.vocab_size; ++vId) logprob(i, vId) = logits(i, vId) - lse;
  }

  // prediction slots and their targets
  std::vector<std::pair<int, int>> slots;  // (slot, target token)
  slots.reserve(static_cast<std::size_t>(m - 1));
  if (geo.mirror) {
    for (int s = 1; s < m; ++s) slots.emplace_back(s, z[static_cast<std::size_t>(s - 1)]);
  } else {
    for (int s = 0; s + 1 < m; ++s) slots.emplace_back(s, z[static_cast<std::size_t>(s + 1)]);
  }

  if (rows_out) {
    rows_out->clear();
    rows_out->reserve(slots.size());
    for (const auto& [slot, target] : slots) rows_out->push_back(logprob.row(slot).transpose());
  }

  double nll = 0.0;
  for (const auto& [slot, target] : slots) nll -= logprob(slot, target);

  if (!grad) return nll;

  // ---- backward ----
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(m, cfg.vocab_size);
  for (const auto& [slot, target] : slots) {
    for (int vId = 0; vId < cfg.vocab_size; ++vId) dlogits(slot, vId) = grad_scale * std::exp(logprob(slot, vId));
    dlogits(slot, target) -= grad_scale;
  }

  Eigen::MatrixXd& dout_mat = cfg.tie_embeddings ? grad->embedding : grad->unembedding;
  dout_mat += dlogits.transpose() * f;
  Eigen::MatrixXd dx = layernorm_backward(dlogits * out_mat, lnf, p.final_gain, grad->final_gain, grad->final_bias);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(l)];
    LayerParams& gl = grad->layers[static_cast<std::size_t>(l)];
    const LayerCache& c = caches[static_cast<std::size_t>(l)];

    // mlp
    const Eigen::MatrixXd& dm = dx;
    gl.mlp_out += c.h_act.transpose() * dm;
    gl.mlp_out_bias += dm.colwise().sum().transpose();
    Eigen::MatrixXd dh_act = dm * lp.mlp_out.transpose();
    Eigen::MatrixXd dh_pre = dh_act.cwiseProduct(c.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    gl.mlp_in += c.b.transpose() * dh_pre;
    gl.mlp_in_bias += dh_pre.colwise().sum().transpose();
    Eigen::MatrixXd dx_mid =
        dx + layernorm_backward(dh_pre * lp.mlp_in.transpose(), c.ln2, lp.ln2_gain, gl.ln2_gain, gl.ln2_bias);

    // attention
    gl.attn_out += c.ctx.transpose() * dx_mid;
    Eigen::MatrixXd dctx = dx_mid * lp.attn_out.transpose();
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(m, d);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(m, d);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(m, d);
    for (int h = 0; h < nh; ++h) {
      const int base = h * dh;
      const Eigen::MatrixXd& w = c.wgt[static_cast<std::size_t>(h)];
      for (int qs = 0; qs < m; ++qs) {
        const int kb = geo.att_begin(qs), ke = geo.att_end(qs);
        Eigen::VectorXd dw(ke - kb);
        for (int ks = kb; ks < ke; ++ks) {
          dw(ks - kb) = dctx.row(qs).segment(base, dh).dot(c.v.row(ks).segment(base, dh));
          dv.row(ks).segment(base, dh) += w(qs, ks) * dctx.row(qs).segment(base, dh);
        }
        double rowdot = 0.0;
        for (int ks = kb; ks < ke; ++ks) rowdot += w(qs, ks) * dw(ks - kb);
        for (int ks = kb; ks < ke; ++ks) {
          const double dsc = w(qs, ks) * (dw(ks - kb) - rowdot);
          if (cfg.pos_mode == PosMode::relative_bias)
            grad->rel_bias(h, rel_index(cfg, geo.pos(qs) - geo.pos(ks))) += dsc;
          dq.row(qs).segment(base, dh) += dsc * inv_sqrt_dh * c.k.row(ks).segment(base, dh);
          dk.row(ks).segment(base, dh) += dsc * inv_sqrt_dh * c.q.row(qs).segment(base, dh);
        }
      }
    }
    if (cfg.pos_mode == PosMode::rotary) {
      rotate_rows(dq, geo, nh, dh, -1.0);
      rotate_rows(dk, geo, nh, dh, -1.0);
    }
    gl.attn_q += c.a.transpose() * dq;
    gl.attn_k += c.a.transpose() * dk;
    gl.attn_v += c.a.transpose() * dv;
    Eigen::MatrixXd da = dq * lp.attn_q.transpose() + dk * lp.attn_k.transpose() + dv * lp.attn_v.transpose();
    dx = dx_mid + layernorm_backward(da, c.ln1, lp.ln1_gain, gl.ln1_gain, gl.ln1_bias);
  }

  for (int i = 0; i < m; ++i) {
    grad->embedding.row(z[static_cast<std::size_t>(i)]) += dx.row(i);
    if (cfg.pos_mode == PosMode::learned_absolute) grad->pos_table.row(geo.abs_row(i)) += dx.row(i);
  }
  return nll;
}

}  // namespace

std::string pos_mode_name(PosMode m) {
  switch (m) {
    case PosMode::rotary: return "rotary";
    case PosMode::relative_bias: return "relative_bias";
    case PosMode::learned_absolute: return "learned_absolute";
  }
  throw std::logic_error("unknown pos mode");
}

PosMode pos_mode_from_name(const std::string& s) {
  if (s == "rotary") return PosMode::rotary;
  if (s == "relative_bias") return PosMode::relative_bias;
  if (s == "learned_absolute") return PosMode::learned_absolute;
  throw std::invalid_argument("unknown positional mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
  if (d_model < 2 || d_model % 2 != 0) throw std::invalid_argument("d_model must be a positive even integer");
  if (n_heads < 1 || d_model % n_heads != 0) throw std::invalid_argument("n_heads must divide d_model");
  if (n_layers < 1) throw std::invalid_argument("n_layers must be positive");
  if (max_len < 1) throw std::invalid_argument("max_len must be positive");
  if (pos_mode == PosMode::rotary && head_dim() % 2 != 0)
    throw std::invalid_argument("rotary positions require an even head dimension");
}

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},  {"n_heads", cfg.n_heads},
          {"n_layers", cfg.n_layers},     {"max_len", cfg.max_len},  {"pos_mode", pos_mode_name(cfg.pos_mode)},
          {"tie_embeddings", cfg.tie_embeddings}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.pos_mode = pos_mode_from_name(j.at("pos_mode").get<std::string>());
  cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
  cfg.validate();
  return cfg;
}

std::vector<TensorView> tensor_views(ModelParams& p) {
  std::vector<TensorView> out;
  auto add_mat = [&](const std::string& name, Eigen::MatrixXd& m) {
    if (m.size() > 0) out.push_back({name, m.data(), m.size(), static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  };
  auto add_vec = [&](const std::string& name, Eigen::VectorXd& v) {
    if (v.size() > 0) out.push_back({name, v.data(), v.size(), static_cast<int>(v.size()), 1});
  };
  add_mat("embedding", p.embedding);
  add_mat("unembedding", p.unembedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    LayerParams& lp = p.layers[l];
    add_vec(prefix + "ln1_gain", lp.ln1_gain);
    add_vec(prefix + "ln1_bias", lp.ln1_bias);
    add_mat(prefix + "attn_q", lp.attn_q);
    add_mat(prefix + "attn_k", lp.attn_k);
    add_mat(prefix + "attn_v", lp.attn_v);
    add_mat(prefix + "attn_out", lp.attn_out);
    add_vec(prefix + "ln2_gain", lp.ln2_gain);
    add_vec(prefix + "ln2_bias", lp.ln2_bias);
    add_mat(prefix + "mlp_in", lp.mlp_in);
    add_vec(prefix + "mlp_in_bias", lp.mlp_in_bias);
    add_mat(prefix + "mlp_out", lp.mlp_out);
    add_vec(prefix + "mlp_out_bias", lp.mlp_out_bias);
  }
  add_vec("final_gain", p.final_gain);
  add_vec("final_bias", p.final_bias);
  add_mat("pos_table", p.pos_table);
  add_mat("rel_bias", p.rel_bias);
  return out;
}

ModelParams zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  ModelParams p;
  p.embedding = Eigen::MatrixXd::Zero(cfg.vocab_size, d);
  if (!cfg.tie_embeddings) p.unembedding = Eigen::MatrixXd::Zero(cfg.vocab_size, d);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& lp : p.layers) {
    lp.ln1_gain = Eigen::VectorXd::Zero(d);
    lp.ln1_bias = Eigen::VectorXd::Zero(d);
    lp.attn_q = Eigen::MatrixXd::Zero(d, d);
    lp.attn_k = Eigen::MatrixXd::Zero(d, d);
    lp.attn_v = Eigen::MatrixXd::Zero(d, d);
    lp.attn_out = Eigen::MatrixXd::Zero(d, d);
    lp.ln2_gain = Eigen::VectorXd::Zero(d);
    lp.ln2_bias = Eigen::VectorXd::Zero(d);
    lp.mlp_in = Eigen::MatrixXd::Zero(d, cfg.ff_dim());
    lp.mlp_in_bias = Eigen::VectorXd::Zero(cfg.ff_dim());
    lp.mlp_out = Eigen::MatrixXd::Zero(cfg.ff_dim(), d);
    lp.mlp_out_bias = Eigen::VectorXd::Zero(d);
  }
  p.final_gain = Eigen::VectorXd::Zero(d);
  p.final_bias = Eigen::VectorXd::Zero(d);
  if (cfg.pos_mode == PosMode::learned_absolute) p.pos_table = Eigen::MatrixXd::Zero(cfg.max_len, d);
  if (cfg.pos_mode == PosMode::relative_bias) p.rel_bias = Eigen::MatrixXd::Zero(cfg.n_heads, 2 * cfg.max_len - 1);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros_like(cfg);
  Rng rng(seed);
  auto fill_uniform = [&](Eigen::MatrixXd& m, double scale) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-scale, scale);
  };
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  fill_uniform(p.embedding, emb_scale);
  if (!cfg.tie_embeddings) fill_uniform(p.unembedding, emb_scale);
  for (auto& lp : p.layers) {
    lp.ln1_gain.setOnes();
    fill_uniform(lp.attn_q, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    fill_uniform(lp.attn_k, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    fill_uniform(lp.attn_v, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    fill_uniform(lp.attn_out, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    lp.ln2_gain.setOnes();
    fill_uniform(lp.mlp_in, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    fill_uniform(lp.mlp_out, 1.0 / std::sqrt(static_cast<double>(cfg.ff_dim())));
  }
  p.final_gain.setOnes();
  fill_uniform(p.pos_table, 0.5);
  fill_uniform(p.rel_bias, 0.5);
  return p;
}

double params_max_abs_diff(const ModelParams& a, const ModelParams& b) {
  auto va = tensor_views(const_cast<ModelParams&>(a));
  auto vb = tensor_views(const_cast<ModelParams&>(b));
  if (va.size() != vb.size()) throw std::invalid_argument("parameter layouts differ");
  double mx = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size != vb[i].size) throw std::invalid_argument("tensor " + va[i].name + " shapes differ");
    for (std::ptrdiff_t k = 0; k < va[i].size; ++k) mx = std::max(mx, std::abs(va[i].data[k] - vb[i].data[k]));
  }
  return mx;
}

bool params_all_finite(const ModelParams& p) {
  auto views = tensor_views(const_cast<ModelParams&>(p));
  for (const auto& v : views)
    for (std::ptrdiff_t k = 0; k < v.size; ++k)
      if (!std::isfinite(v.data[k])) return false;
  return true;
}

std::vector<Eigen::VectorXd> forward_logprobs(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& z,
                                              EvalDirection dir) {
  cfg.validate();
  std::vector<Eigen::VectorXd> rows;
  run_sequence(p, cfg, z, dir, 0.0, nullptr, &rows);
  return rows;
}

double sequence_nll(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& z, EvalDirection dir) {
  cfg.validate();
  if (z.size() < 2) throw std::invalid_argument("nothing to predict: sequence length must be at least 2");
  return run_sequence(p, cfg, z, dir, 0.0, nullptr, nullptr);
}

std::vector<double> per_document_nll(const ModelParams& p, const ModelConfig& cfg, const BpeTokenizer& t,
                                     const Corpus& d, EvalDirection dir) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.docs.size(); ++i) {
    try {
      const TokenSeq z = encode(t, d.docs[i]);
      out.push_back(sequence_nll(p, cfg, z, dir));
    } catch (const std::exception& e) {
      throw std::runtime_error("document " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

double corpus_nll(const ModelParams& p, const ModelConfig& cfg, const BpeTokenizer& t, const Corpus& d,
                  EvalDirection dir) {
  if (d.empty()) throw std::invalid_argument("empty corpus");
  const std::vector<double> nlls = per_document_nll(p, cfg, t, d, dir);
  double sum = 0.0;
  for (double v : nlls) sum += v;
  return sum / static_cast<double>(nlls.size());
}

double batch_nll_and_gradient(const ModelParams& p, const ModelConfig& cfg, const std::vector<TokenSeq>& batch,
                              EvalDirection dir, ModelParams& grad) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::ptrdiff_t predicted = 0;
  for (const TokenSeq& z : batch) {
    if (z.size() < 2) throw std::invalid_argument("nothing to predict: sequence length must be at least 2");
    predicted += static_cast<std::ptrdiff_t>(z.size()) - 1;
  }
  const double scale = 1.0 / static_cast<double>(predicted);
  double total = 0.0;
  for (const TokenSeq& z : batch) total += run_sequence(p, cfg, z, dir, scale, &grad, nullptr);
  return total * scale;
}

void save_params(const ModelParams& p, const ModelConfig& cfg, const std::string& data_path,
                 const std::string& sidecar_path) {
  auto views = tensor_views(const_cast<ModelParams&>(p));
  nlohmann::ordered_json sidecar;
  sidecar["format"] = "float64_le";
  sidecar["config"] = config_to_json(cfg);
  sidecar["tensors"] = nlohmann::ordered_json::array();

  std::ofstream data(data_path, std::ios::binary);
  if (!data) throw std::runtime_error("cannot write " + data_path);
  std::ptrdiff_t offset = 0;
  for (const auto& v : views) {
    sidecar["tensors"].push_back({{"name", v.name}, {"rows", v.rows}, {"cols", v.cols}, {"offset", offset}});
    // row-major in the file regardless of in-memory layout
    for (int r = 0; r < v.rows; ++r) {
      for (int c = 0; c < v.cols; ++c) {
        const double value = v.data[static_cast<std::ptrdiff_t>(c) * v.rows + r];
        data.write(reinterpret_cast<const char*>(&value), sizeof(double));
      }
    }
    offset += v.size;
  }
  data.close();
  std::ofstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot write " + sidecar_path);
  side << sidecar.dump(2) << "\n";
}

std::pair<ModelParams, ModelConfig> load_params(const std::string& data_path, const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot read " + sidecar_path);
  const nlohmann::json sidecar = nlohmann::json::parse(side);
  if (sidecar.at("format").get<std::string>() != "float64_le")
    throw std::runtime_error("unsupported parameter format");
  const ModelConfig cfg = config_from_json(sidecar.at("config"));
  ModelParams p = zeros_like(cfg);
  auto views = tensor_views(p);

  std::ifstream data(data_path, std::ios::binary);
  if (!data) throw std::runtime_error("cannot read " + data_path);
  const auto& tensors = sidecar.at("tensors");
  if (tensors.size() != views.size()) throw std::runtime_error("tensor list does not match config layout");
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& tj = tensors[i];
    if (tj.at("name").get<std::string>() != views[i].name || tj.at("rows").get<int>() != views[i].rows ||
        tj.at("cols").get<int>() != views[i].cols)
      throw std::runtime_error("tensor " + views[i].name + " does not match config layout");
    for (int r = 0; r < views[i].rows; ++r) {
      for (int c = 0; c < views[i].cols; ++c) {
        double value;
        if (!data.read(reinterpret_cast<char*>(&value), sizeof(double)))
          throw std::runtime_error("parameter file truncated");
        views[i].data[static_cast<std::ptrdiff_t>(c) * views[i].rows + r] = value;
      }
    }
  }
  if (!params_all_finite(p)) throw std::runtime_error("parameter file contains non-finite values");
  return {std::move(p), cfg};
}

}  // namespace revlab
