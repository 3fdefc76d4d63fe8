// Copyright 2026 The fedsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDSV_NN_HPP_
#define FEDSV_NN_HPP_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedsv/matrix.hpp"
#include "fedsv/rng.hpp"

namespace fedsv {

enum class LayerKind { kDense, kBatchNorm, kSigmoid, kSoftmaxHead };

struct LayerSpec {
  LayerKind kind;
  int in_dim = 0;
  int out_dim = 0;
};

struct HeadSpec {
  std::string name;
  int out_dim = 0;
};

// A trunk of layers followed by any number of named classification heads.
// Each head is a linear layer whose logits feed a softmax at the loss.
// The trunk output is the embedding.
struct NetworkSpec {
  int input_dim = 0;
  std::vector<LayerSpec> trunk;
  std::vector<HeadSpec> heads;

  int embedding_dim() const {
    return trunk.empty() ? input_dim : trunk.back().out_dim;
  }
  // Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 256;

  void validate() const;
};

struct BatchNormConfig {
  double running_momentum = 0.99;
  double epsilon = 1e-5;
};

enum class Mode { kTrain, kInfer };

// One named tensor of the model. Running batch-norm statistics are part of
// the flattened parameter vector (so the central model state is a single
// vector in federated aggregation) but are not touched by the optimizer.
struct ParamBlock {
  std::string name;
  Matrix value;
  bool trainable = true;
};

// Per-block gradients, aligned by index with Network::blocks(). Entries for
// non-trainable blocks stay empty.
struct Gradients {
  std::vector<Matrix> blocks;

  void accumulate(const Gradients& other, double scale = 1.0);
  bool all_finite_or_empty() const;
};

struct BatchNormCache {
  Matrix xhat;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> inv_std;
};

struct ForwardCache {
  Mode mode = Mode::kTrain;
  std::vector<Matrix> layer_inputs;  // input to trunk layer i
  std::vector<BatchNormCache> bn;    // parallel to trunk, used for kBatchNorm
  Matrix embedding;                  // trunk output
  std::map<std::string, Matrix> head_logits;
};

struct ForwardResult {
  Matrix embedding;
  std::map<std::string, Matrix> head_logits;
};

class Network {
 public:
  Network() = default;
  explicit Network(const NetworkSpec& spec, BatchNormConfig bn_cfg = {});

  // Uniform init with scale 1/sqrt(in_dim) for weights, zero biases,
  // gamma=1 / beta=0 and unit running variance for batch norm. Every block
  // draws from its own stream derived from `base`, so adding a head leaves
  // the other blocks' initial values unchanged.
  void init_params(const Rng& base);

  // Pure function of (params, batch, mode, batch-norm state). Does not
  // update running statistics; call update_running_stats(cache) after a
  // training step to fold the cached batch statistics in. Pass
  // compute_heads = false to stop at the embedding.
  ForwardResult forward(const Matrix& batch, Mode mode,
                        ForwardCache* cache = nullptr,
                        bool compute_heads = true) const;

  // Backpropagates head logit gradients (and optionally a gradient arriving
  // directly at the embedding) through heads and trunk. `cache` must come
  // from a forward() call in train mode on this network.
  Gradients backward(const ForwardCache& cache,
                     const std::map<std::string, Matrix>& d_logits,
                     const Matrix* d_embedding = nullptr) const;

  void update_running_stats(const ForwardCache& cache);

  const NetworkSpec& spec() const { return spec_; }
  const BatchNormConfig& bn_config() const { return bn_cfg_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  ParamBlock& block(const std::string& name);
  const ParamBlock& block(const std::string& name) const;

  std::size_t param_count() const;  // includes running statistics

  // Flattened view of all blocks (trainable + running stats) in declaration
  // order; the unit of clipping, noising and aggregation.
  std::vector<double> param_vector() const;
  // Restores a flattened vector. When clamp_bn_var is set, negative running
  // variances (possible after DP noise) are clamped to zero so the
  // batch-norm invariant holds.
  void set_param_vector(const std::vector<double>& v, bool clamp_bn_var = false);

  Gradients zero_gradients() const;

 private:
  NetworkSpec spec_;
  BatchNormConfig bn_cfg_;
  std::vector<ParamBlock> blocks_;
  // block indices per trunk layer / head for fast lookup
  struct LayerRef {
    int weight = -1, bias = -1;
    int gamma = -1, beta = -1, run_mean = -1, run_var = -1;
  };
  std::vector<LayerRef> trunk_refs_;
  std::vector<LayerRef> head_refs_;

  friend struct NetworkOps;
};

// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix& logits);

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;  // d loss / d logits
};

// Mean over the batch of -log softmax(logits)[label]; gradient is
// (softmax - onehot) / batch_size.
LossResult cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels);

struct SgdState {
  std::vector<Matrix> velocity;  // aligned with blocks, empty if non-trainable
};

// velocity <- momentum * velocity + grad + weight_decay * param
// param    <- param - learning_rate * velocity
// Throws std::runtime_error (with the block name) on non-finite gradients.
void sgd_step(Network& net, const Gradients& grads, const OptimizerConfig& cfg,
              SgdState& state);

struct GradCheckEntry {
  std::string block;
  double max_rel_err = 0.0;
};

// Central-difference check of `analytic` against `loss_fn`, per trainable
// block. Relative error is |a - n| / max(|a|, |n|, 1e-8), maximised over the
// block's entries. The network is restored to its original parameters.
std::vector<GradCheckEntry> grad_check(
    Network& net, const std::function<double(const Network&)>& loss_fn,
    const Gradients& analytic, double step = 1e-5);

// Convenience form: cross-entropy on `head` over (batch, labels).
std::vector<GradCheckEntry> grad_check(Network& net, const Matrix& batch,
                                       const std::vector<int>& labels,
                                       const std::string& head,
                                       double step = 1e-5);

double max_rel_err(const std::vector<GradCheckEntry>& report);

}  // namespace fedsv

#endif  // FEDSV_NN_HPP_
