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

#include "fedsv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedsv {

namespace {

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "Dense";
    case LayerKind::kBatchNorm: return "BatchNorm";
    case LayerKind::kSigmoid: return "Sigmoid";
    case LayerKind::kSoftmaxHead: return "SoftmaxHead";
  }
  return "?";
}

void add_col_sums(const Matrix& m, Matrix& out) {
  for (int r = 0; r < m.rows; ++r) {
    const double* src = m.row_ptr(r);
    for (int c = 0; c < m.cols; ++c) out.data[c] += src[c];
  }
}

}  // namespace

void NetworkSpec::validate() const {
  int dim = input_dim;
  if (dim <= 0) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const LayerSpec& l = trunk[i];
    if (l.kind == LayerKind::kSoftmaxHead) {
      throw std::invalid_argument(
          "NetworkSpec: SoftmaxHead layers belong to heads, not the trunk");
    }
    if (l.in_dim != dim) {
      throw std::invalid_argument("NetworkSpec: trunk layer " + std::to_string(i) +
                                  " (" + layer_kind_name(l.kind) + ") in_dim " +
                                  std::to_string(l.in_dim) + " does not match " +
                                  std::to_string(dim));
    }
    if (l.kind != LayerKind::kDense && l.in_dim != l.out_dim) {
      throw std::invalid_argument("NetworkSpec: " + layer_kind_name(l.kind) +
                                  " layer must preserve its dimension");
    }
    if (l.out_dim <= 0) throw std::invalid_argument("NetworkSpec: non-positive out_dim");
    dim = l.out_dim;
  }
  for (const HeadSpec& h : heads) {
    if (h.name.empty()) throw std::invalid_argument("NetworkSpec: head without a name");
    if (h.out_dim <= 0) {
      throw std::invalid_argument("NetworkSpec: head " + h.name + " has non-positive dim");
    }
  }
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

Network::Network(const NetworkSpec& spec, BatchNormConfig bn_cfg)
    : spec_(spec), bn_cfg_(bn_cfg) {
  spec_.validate();
  trunk_refs_.resize(spec_.trunk.size());
  for (std::size_t i = 0; i < spec_.trunk.size(); ++i) {
    const LayerSpec& l = spec_.trunk[i];
    const std::string prefix = "trunk." + std::to_string(i);
    LayerRef& ref = trunk_refs_[i];
    switch (l.kind) {
      case LayerKind::kDense:
        ref.weight = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".weight", Matrix(l.out_dim, l.in_dim), true});
        ref.bias = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".bias", Matrix(1, l.out_dim), true});
        break;
      case LayerKind::kBatchNorm:
        ref.gamma = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".gamma", Matrix(1, l.out_dim, 1.0), true});
        ref.beta = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".beta", Matrix(1, l.out_dim), true});
        ref.run_mean = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".running_mean", Matrix(1, l.out_dim), false});
        ref.run_var = static_cast<int>(blocks_.size());
        blocks_.push_back({prefix + ".running_var", Matrix(1, l.out_dim, 1.0), false});
        break;
      case LayerKind::kSigmoid:
        break;
      case LayerKind::kSoftmaxHead:
        break;  // rejected by validate()
    }
  }
  head_refs_.resize(spec_.heads.size());
  const int emb = spec_.embedding_dim();
  for (std::size_t i = 0; i < spec_.heads.size(); ++i) {
    const HeadSpec& h = spec_.heads[i];
    LayerRef& ref = head_refs_[i];
    ref.weight = static_cast<int>(blocks_.size());
    blocks_.push_back({"head." + h.name + ".weight", Matrix(h.out_dim, emb), true});
    ref.bias = static_cast<int>(blocks_.size());
    blocks_.push_back({"head." + h.name + ".bias", Matrix(1, h.out_dim), true});
  }
}

void Network::init_params(const Rng& base) {
  for (ParamBlock& b : blocks_) {
    Rng rng = base.derive(b.name);
    if (b.name.ends_with(".weight")) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(b.value.cols));
      for (double& v : b.value.data) v = rng.uniform(-scale, scale);
    }
    // biases stay zero, batch-norm blocks keep their construction values
  }
}

ParamBlock& Network::block(const std::string& name) {
  for (ParamBlock& b : blocks_) {
    if (b.name == name) return b;
  }
  throw std::invalid_argument("unknown block: " + name);
}

const ParamBlock& Network::block(const std::string& name) const {
  return const_cast<Network*>(this)->block(name);
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const ParamBlock& b : blocks_) n += b.value.size();
  return n;
}

std::vector<double> Network::param_vector() const {
  std::vector<double> v;
  v.reserve(param_count());
  for (const ParamBlock& b : blocks_) {
    v.insert(v.end(), b.value.data.begin(), b.value.data.end());
  }
  return v;
}

void Network::set_param_vector(const std::vector<double>& v, bool clamp_bn_var) {
  if (v.size() != param_count()) {
    throw std::invalid_argument("set_param_vector: size mismatch");
  }
  std::size_t pos = 0;
  for (ParamBlock& b : blocks_) {
    std::copy(v.begin() + pos, v.begin() + pos + b.value.size(),
              b.value.data.begin());
    pos += b.value.size();
    if (clamp_bn_var && b.name.ends_with(".running_var")) {
      for (double& x : b.value.data) x = std::max(x, 0.0);
    }
  }
}

Gradients Network::zero_gradients() const {
  Gradients g;
  g.blocks.resize(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].trainable) {
      g.blocks[i] = Matrix(blocks_[i].value.rows, blocks_[i].value.cols);
    }
  }
  return g;
}

void Gradients::accumulate(const Gradients& other, double scale) {
  if (blocks.size() != other.blocks.size()) {
    throw std::invalid_argument("Gradients::accumulate: block count mismatch");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (other.blocks[i].empty()) continue;
    if (blocks[i].empty()) {
      blocks[i] = Matrix(other.blocks[i].rows, other.blocks[i].cols);
    }
    axpy(scale, other.blocks[i], blocks[i]);
  }
}

bool Gradients::all_finite_or_empty() const {
  for (const Matrix& m : blocks) {
    if (!m.empty() && !all_finite(m)) return false;
  }
  return true;
}

ForwardResult Network::forward(const Matrix& batch, Mode mode,
                               ForwardCache* cache, bool compute_heads) const {
  if (batch.cols != spec_.input_dim) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols) +
                                " columns, expected " +
                                std::to_string(spec_.input_dim));
  }
  ForwardCache local;
  ForwardCache& cc = cache ? *cache : local;
  cc = ForwardCache{};
  cc.mode = mode;
  cc.layer_inputs.reserve(spec_.trunk.size());
  cc.bn.resize(spec_.trunk.size());

  Matrix x = batch;
  for (std::size_t i = 0; i < spec_.trunk.size(); ++i) {
    const LayerSpec& l = spec_.trunk[i];
    cc.layer_inputs.push_back(x);
    const Matrix& in = cc.layer_inputs.back();
    switch (l.kind) {
      case LayerKind::kDense: {
        const Matrix& w = blocks_[trunk_refs_[i].weight].value;
        const Matrix& b = blocks_[trunk_refs_[i].bias].value;
        Matrix y;
        gemm(1.0, in, false, w, true, 0.0, y);
        for (int r = 0; r < y.rows; ++r) {
          double* row = y.row_ptr(r);
          for (int c = 0; c < y.cols; ++c) row[c] += b.data[c];
        }
        x = std::move(y);
        break;
      }
      case LayerKind::kBatchNorm: {
        const Matrix& gamma = blocks_[trunk_refs_[i].gamma].value;
        const Matrix& beta = blocks_[trunk_refs_[i].beta].value;
        const int n = in.rows, d = in.cols;
        BatchNormCache& bc = cc.bn[i];
        bc.mean.assign(d, 0.0);
        bc.var.assign(d, 0.0);
        bc.inv_std.assign(d, 0.0);
        if (mode == Mode::kTrain) {
          for (int r = 0; r < n; ++r) {
            const double* row = in.row_ptr(r);
            for (int c = 0; c < d; ++c) bc.mean[c] += row[c];
          }
          for (int c = 0; c < d; ++c) bc.mean[c] /= n;
          for (int r = 0; r < n; ++r) {
            const double* row = in.row_ptr(r);
            for (int c = 0; c < d; ++c) {
              const double dv = row[c] - bc.mean[c];
              bc.var[c] += dv * dv;
            }
          }
          for (int c = 0; c < d; ++c) bc.var[c] /= n;
        } else {
          const Matrix& rm = blocks_[trunk_refs_[i].run_mean].value;
          const Matrix& rv = blocks_[trunk_refs_[i].run_var].value;
          for (int c = 0; c < d; ++c) {
            bc.mean[c] = rm.data[c];
            bc.var[c] = std::max(rv.data[c], 0.0);
          }
        }
        for (int c = 0; c < d; ++c) {
          bc.inv_std[c] = 1.0 / std::sqrt(bc.var[c] + bn_cfg_.epsilon);
        }
        bc.xhat = Matrix(n, d);
        Matrix y(n, d);
        for (int r = 0; r < n; ++r) {
          const double* row = in.row_ptr(r);
          double* xh = bc.xhat.row_ptr(r);
          double* out = y.row_ptr(r);
          for (int c = 0; c < d; ++c) {
            xh[c] = (row[c] - bc.mean[c]) * bc.inv_std[c];
            out[c] = gamma.data[c] * xh[c] + beta.data[c];
          }
        }
        x = std::move(y);
        break;
      }
      case LayerKind::kSigmoid: {
        Matrix y(in.rows, in.cols);
        for (std::size_t j = 0; j < in.size(); ++j) {
          y.data[j] = 1.0 / (1.0 + std::exp(-in.data[j]));
        }
        x = std::move(y);
        break;
      }
      case LayerKind::kSoftmaxHead:
        break;
    }
  }
  cc.embedding = std::move(x);

  ForwardResult result;
  result.embedding = cc.embedding;
  if (!compute_heads) return result;
  for (std::size_t i = 0; i < spec_.heads.size(); ++i) {
    const Matrix& w = blocks_[head_refs_[i].weight].value;
    const Matrix& b = blocks_[head_refs_[i].bias].value;
    Matrix logits;
    gemm(1.0, cc.embedding, false, w, true, 0.0, logits);
    for (int r = 0; r < logits.rows; ++r) {
      double* row = logits.row_ptr(r);
      for (int c = 0; c < logits.cols; ++c) row[c] += b.data[c];
    }
    cc.head_logits[spec_.heads[i].name] = logits;
    result.head_logits[spec_.heads[i].name] = std::move(logits);
  }
  return result;
}

Gradients Network::backward(const ForwardCache& cache,
                            const std::map<std::string, Matrix>& d_logits,
                            const Matrix* d_embedding) const {
  Gradients grads = zero_gradients();
  const int batch = cache.embedding.rows;
  Matrix d_emb(batch, spec_.embedding_dim());
  if (d_embedding) {
    if (!d_embedding->same_shape(d_emb)) {
      throw std::invalid_argument("backward: d_embedding shape mismatch");
    }
    d_emb = *d_embedding;
  }

  for (std::size_t i = 0; i < spec_.heads.size(); ++i) {
    auto it = d_logits.find(spec_.heads[i].name);
    if (it == d_logits.end()) continue;
    const Matrix& dy = it->second;
    const Matrix& w = blocks_[head_refs_[i].weight].value;
    gemm(1.0, dy, true, cache.embedding, false, 0.0,
         grads.blocks[head_refs_[i].weight]);
    add_col_sums(dy, grads.blocks[head_refs_[i].bias]);
    gemm(1.0, dy, false, w, false, 1.0, d_emb);
  }
  for (const auto& [name, unused] : d_logits) {
    bool known = false;
    for (const HeadSpec& h : spec_.heads) known = known || h.name == name;
    if (!known) throw std::invalid_argument("backward: unknown head " + name);
  }

  Matrix dx = std::move(d_emb);
  for (int i = static_cast<int>(spec_.trunk.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = spec_.trunk[i];
    const Matrix& in = cache.layer_inputs[i];
    switch (l.kind) {
      case LayerKind::kDense: {
        const Matrix& w = blocks_[trunk_refs_[i].weight].value;
        gemm(1.0, dx, true, in, false, 0.0, grads.blocks[trunk_refs_[i].weight]);
        add_col_sums(dx, grads.blocks[trunk_refs_[i].bias]);
        Matrix dprev;
        gemm(1.0, dx, false, w, false, 0.0, dprev);
        dx = std::move(dprev);
        break;
      }
      case LayerKind::kBatchNorm: {
        const BatchNormCache& bc = cache.bn[i];
        const Matrix& gamma = blocks_[trunk_refs_[i].gamma].value;
        const int n = in.rows, d = in.cols;
        Matrix& dgamma = grads.blocks[trunk_refs_[i].gamma];
        Matrix& dbeta = grads.blocks[trunk_refs_[i].beta];
        std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
        for (int r = 0; r < n; ++r) {
          const double* dyr = dx.row_ptr(r);
          const double* xh = bc.xhat.row_ptr(r);
          for (int c = 0; c < d; ++c) {
            dgamma.data[c] += dyr[c] * xh[c];
            dbeta.data[c] += dyr[c];
            const double dxh = dyr[c] * gamma.data[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * xh[c];
          }
        }
        Matrix dprev(n, d);
        if (cache.mode == Mode::kTrain) {
          for (int r = 0; r < n; ++r) {
            const double* dyr = dx.row_ptr(r);
            const double* xh = bc.xhat.row_ptr(r);
            double* out = dprev.row_ptr(r);
            for (int c = 0; c < d; ++c) {
              const double dxh = dyr[c] * gamma.data[c];
              out[c] = bc.inv_std[c] / n *
                       (n * dxh - sum_dxhat[c] - xh[c] * sum_dxhat_xhat[c]);
            }
          }
        } else {
          // running statistics are constants in inference mode
          for (int r = 0; r < n; ++r) {
            const double* dyr = dx.row_ptr(r);
            double* out = dprev.row_ptr(r);
            for (int c = 0; c < d; ++c) {
              out[c] = dyr[c] * gamma.data[c] * bc.inv_std[c];
            }
          }
        }
        dx = std::move(dprev);
        break;
      }
      case LayerKind::kSigmoid: {
        const Matrix& out =
            (i + 1 < static_cast<int>(spec_.trunk.size()))
                ? cache.layer_inputs[i + 1]
                : cache.embedding;
        Matrix dprev(in.rows, in.cols);
        for (std::size_t j = 0; j < in.size(); ++j) {
          dprev.data[j] = dx.data[j] * out.data[j] * (1.0 - out.data[j]);
        }
        dx = std::move(dprev);
        break;
      }
      case LayerKind::kSoftmaxHead:
        break;
    }
  }
  return grads;
}

void Network::update_running_stats(const ForwardCache& cache) {
  if (cache.mode != Mode::kTrain) {
    throw std::invalid_argument("update_running_stats: cache is not from train mode");
  }
  const double p = bn_cfg_.running_momentum;
  for (std::size_t i = 0; i < spec_.trunk.size(); ++i) {
    if (spec_.trunk[i].kind != LayerKind::kBatchNorm) continue;
    const BatchNormCache& bc = cache.bn[i];
    Matrix& rm = blocks_[trunk_refs_[i].run_mean].value;
    Matrix& rv = blocks_[trunk_refs_[i].run_var].value;
    for (int c = 0; c < spec_.trunk[i].out_dim; ++c) {
      rm.data[c] = p * rm.data[c] + (1.0 - p) * bc.mean[c];
      rv.data[c] = p * rv.data[c] + (1.0 - p) * bc.var[c];
    }
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    const double* row = logits.row_ptr(r);
    double* out = p.row_ptr(r);
    double mx = row[0];
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      out[c] = std::exp(row[c] - mx);
      sum += out[c];
    }
    for (int c = 0; c < logits.cols; ++c) out[c] /= sum;
  }
  return p;
}

LossResult cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows) {
    throw std::invalid_argument("cross_entropy_loss: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols) {
      throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(y) +
                                  " out of range [0, " + std::to_string(logits.cols) +
                                  ")");
    }
  }
  const int n = logits.rows;
  LossResult res;
  res.dlogits = softmax_rows(logits);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = logits.row_ptr(r);
    double mx = row[0];
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, row[c]);
    double lse = 0.0;
    for (int c = 0; c < logits.cols; ++c) lse += std::exp(row[c] - mx);
    loss += mx + std::log(lse) - row[labels[r]];
  }
  res.loss = loss / n;
  for (int r = 0; r < n; ++r) {
    double* row = res.dlogits.row_ptr(r);
    row[labels[r]] -= 1.0;
    for (int c = 0; c < logits.cols; ++c) row[c] /= n;
  }
  return res;
}

void sgd_step(Network& net, const Gradients& grads, const OptimizerConfig& cfg,
              SgdState& state) {
  cfg.validate();
  auto& blocks = net.blocks();
  if (grads.blocks.size() != blocks.size()) {
    throw std::invalid_argument("sgd_step: gradient block count mismatch");
  }
  if (state.velocity.empty()) state.velocity.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].trainable) continue;
    const Matrix& g = grads.blocks[i];
    if (g.empty()) continue;
    if (!g.same_shape(blocks[i].value)) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " +
                                  blocks[i].name);
    }
    if (!all_finite(g)) {
      throw std::runtime_error("sgd_step: non-finite gradient in block " +
                               blocks[i].name);
    }
    Matrix& v = state.velocity[i];
    if (v.empty()) v = Matrix(g.rows, g.cols);
    Matrix& p = blocks[i].value;
    for (std::size_t j = 0; j < g.size(); ++j) {
      v.data[j] = cfg.momentum * v.data[j] + g.data[j] +
                  cfg.weight_decay * p.data[j];
    }
    if (cfg.learning_rate != 0.0) {
      for (std::size_t j = 0; j < g.size(); ++j) {
        p.data[j] -= cfg.learning_rate * v.data[j];
      }
    }
  }
}

std::vector<GradCheckEntry> grad_check(
    Network& net, const std::function<double(const Network&)>& loss_fn,
    const Gradients& analytic, double step) {
  std::vector<GradCheckEntry> report;
  auto& blocks = net.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].trainable) continue;
    GradCheckEntry entry{blocks[i].name, 0.0};
    const Matrix* g = nullptr;
    if (i < analytic.blocks.size() && !analytic.blocks[i].empty()) {
      g = &analytic.blocks[i];
    }
    for (std::size_t j = 0; j < blocks[i].value.size(); ++j) {
      const double saved = blocks[i].value.data[j];
      blocks[i].value.data[j] = saved + step;
      const double up = loss_fn(net);
      blocks[i].value.data[j] = saved - step;
      const double down = loss_fn(net);
      blocks[i].value.data[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g ? g->data[j] : 0.0;
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(a - numeric) / denom);
    }
    report.push_back(std::move(entry));
  }
  return report;
}

std::vector<GradCheckEntry> grad_check(Network& net, const Matrix& batch,
                                       const std::vector<int>& labels,
                                       const std::string& head, double step) {
  ForwardCache cache;
  ForwardResult fwd = net.forward(batch, Mode::kTrain, &cache);
  LossResult ce = cross_entropy_loss(fwd.head_logits.at(head), labels);
  Gradients analytic = net.backward(cache, {{head, ce.dlogits}});
  auto loss_fn = [&](const Network& n) {
    ForwardResult f = n.forward(batch, Mode::kTrain);
    return cross_entropy_loss(f.head_logits.at(head), labels).loss;
  };
  return grad_check(net, loss_fn, analytic, step);
}

double max_rel_err(const std::vector<GradCheckEntry>& report) {
  double m = 0.0;
  for (const GradCheckEntry& e : report) m = std::max(m, e.max_rel_err);
  return m;
}

}  // namespace fedsv
