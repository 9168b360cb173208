#include "revlab/train.hpp"

#include <cmath>
#include <stdexcept>

namespace revlab {

std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
}

Optimizer::Optimizer(const TrainConfig& cfg, const ModelConfig& model_cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.optimizer == OptimizerKind::adam) {
    m_ = zeros_like(model_cfg);
    v_ = zeros_like(model_cfg);
  }
}

void Optimizer::step(ModelParams& params, const ModelParams& grad) {
  auto pv = tensor_views(params);
  auto gv = tensor_views(const_cast<ModelParams&>(grad));
  if (cfg_.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < pv.size(); ++i)
      for (std::ptrdiff_t k = 0; k < pv[i].size; ++k) pv[i].data[k] -= cfg_.learning_rate * gv[i].data[k];
    return;
  }
  ++t_;
  auto mv = tensor_views(m_);
  auto vv = tensor_views(v_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::ptrdiff_t k = 0; k < pv[i].size; ++k) {
      const double g = gv[i].data[k];
      double& m = mv[i].data[k];
      double& v = vv[i].data[k];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      pv[i].data[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
    }
  }
}

BatchSchedule::BatchSchedule(std::size_t n_docs, int batch_size, std::uint64_t seed)
    : n_docs_(n_docs), batch_size_(batch_size), rng_(mix_seed(seed, 0x6261746368ULL)) {
  if (n_docs_ == 0) throw std::invalid_argument("schedule needs a non-empty corpus");
  if (batch_size_ < 1) throw std::invalid_argument("batch_size must be positive");
}

void BatchSchedule::refill() {
  order_.resize(n_docs_);
  for (std::size_t i = 0; i < n_docs_; ++i) order_[i] = i;
  rng_.shuffle(order_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSchedule::batch(int step) {
  if (step != next_step_) throw std::logic_error("batch schedule must be consumed in step order");
  ++next_step_;
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  for (int k = 0; k < batch_size_; ++k) {
    if (cursor_ >= order_.size()) refill();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace revlab
