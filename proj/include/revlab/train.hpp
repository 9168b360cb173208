#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revlab/model.hpp"
#include "revlab/rng.hpp"

namespace revlab {

enum class OptimizerKind { sgd, adam };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& s);

struct TrainConfig {
  int steps = 200;
  int batch_size = 8;
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// SGD or Adam over the flat parameter vector. Updates are elementwise, so
// they commute with any relabeling of tensor rows.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ModelConfig& model_cfg);
  void step(ModelParams& params, const ModelParams& grad);

 private:
  TrainConfig cfg_;
  ModelParams m_, v_;  // adam moments, zero-initialized
  long t_ = 0;
};

// Deterministic document schedule: repeated seeded shuffles of the corpus
// indices, consumed batch_size at a time. Replayable by construction.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n_docs, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> batch(int step);  // steps must be consumed in order

 private:
  std::size_t n_docs_;
  int batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int next_step_ = 0;

  void refill();
};

}  // namespace revlab
