#include "feds2t/model.hpp"

#include "feds2t/numeric.hpp"

#include <cmath>
#include <string>

namespace feds2t {

void ModelConfig::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  if (vocab_size < 4)
    throw std::invalid_argument("vocab_size must be >= 4 (BOS, EOS, PAD + one real token)");
  if (lora_targets != 0) {
    if (lora_rank < 1) throw std::invalid_argument("lora_rank must be >= 1");
    if (lora_alpha <= 0) throw std::invalid_argument("lora_alpha must be > 0");
    for (LoraTarget t : kAllLoraTargets) {
      if (!has_target(lora_targets, t)) continue;
      auto [rows, cols] = target_shape(t);
      if (lora_rank > std::min(rows, cols))
        throw std::invalid_argument("lora_rank exceeds min(rows, cols) of a target");
    }
  }
}

ParameterSet zero_parameters(const ModelConfig& config) {
  config.validate();
  const int df = config.feature_dim, dh = config.hidden_dim, v = config.vocab_size;
  ParameterSet p;
  p.w_enc = Matrix::Zero(dh, df);
  p.embed = Matrix::Zero(v, dh);
  p.w_q = Matrix::Zero(dh, dh);
  p.w_h = Matrix::Zero(dh, 2 * dh);
  p.b_h = Vector::Zero(dh);
  p.w_o = Matrix::Zero(v, dh);
  p.b_o = Vector::Zero(v);
  return p;
}

ParameterSet init_parameters(const ModelConfig& config, StreamRng& rng) {
  ParameterSet p = zero_parameters(config);
  // Uniform +-1/sqrt(fan_in); biases stay zero.
  auto init = [&](Matrix& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    rng.fill_uniform(m, -bound, bound);
  };
  init(p.w_enc);
  init(p.embed);
  init(p.w_q);
  init(p.w_h);
  init(p.w_o);
  return p;
}

LoraAdapter zero_adapter(const ModelConfig& config) {
  config.validate();
  if (config.lora_targets == 0)
    throw std::invalid_argument("config has no LoRA targets");
  LoraAdapter ad;
  ad.rank = config.lora_rank;
  ad.alpha = config.lora_alpha;
  ad.targets = config.lora_targets;
  for (LoraTarget t : kAllLoraTargets) {
    if (!has_target(config.lora_targets, t)) continue;
    auto [rows, cols] = config.target_shape(t);
    ad.factors.push_back({t, Matrix::Zero(config.lora_rank, cols),
                          Matrix::Zero(rows, config.lora_rank)});
  }
  return ad;
}

LoraAdapter init_adapter(const ModelConfig& config, StreamRng& rng) {
  LoraAdapter ad = zero_adapter(config);
  for (auto& f : ad.factors) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(f.a.cols()));
    rng.fill_uniform(f.a, -bound, bound);
  }
  return ad;
}

namespace {

Matrix* target_of(ParameterSet& p, LoraTarget t) {
  switch (t) {
    case LoraTarget::kEnc: return &p.w_enc;
    case LoraTarget::kQ: return &p.w_q;
    case LoraTarget::kH: return &p.w_h;
    case LoraTarget::kO: return &p.w_o;
  }
  return nullptr;
}

const Matrix* target_of(const ParameterSet& p, LoraTarget t) {
  return target_of(const_cast<ParameterSet&>(p), t);
}

void check_adapter_shapes(const ParameterSet& params, const LoraAdapter& adapter) {
  if (adapter.rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
  for (const auto& f : adapter.factors) {
    const Matrix& w = *target_of(params, f.target);
    if (f.b.rows() != w.rows() || f.a.cols() != w.cols() ||
        f.a.rows() != adapter.rank || f.b.cols() != adapter.rank)
      throw std::invalid_argument("adapter factor shape does not match target");
  }
}

// The four matrices a forward pass multiplies by, with any adapter update
// already applied. embed and biases are never adapted.
struct EffectiveWeights {
  Matrix w_enc, w_q, w_h, w_o;
};

EffectiveWeights effective_weights(const ParameterSet& params,
                                   const LoraAdapter* adapter) {
  EffectiveWeights e{params.w_enc, params.w_q, params.w_h, params.w_o};
  if (!adapter) return e;
  check_adapter_shapes(params, *adapter);
  const double s = adapter->scale();
  for (const auto& f : adapter->factors) {
    switch (f.target) {
      case LoraTarget::kEnc: e.w_enc += s * (f.b * f.a); break;
      case LoraTarget::kQ: e.w_q += s * (f.b * f.a); break;
      case LoraTarget::kH: e.w_h += s * (f.b * f.a); break;
      case LoraTarget::kO: e.w_o += s * (f.b * f.a); break;
    }
  }
  return e;
}

void check_inputs(const ParameterSet& params, const Matrix& frames,
                  std::span<const TokenId> prev_tokens) {
  if (frames.cols() < 1) throw std::invalid_argument("frames must be nonempty");
  if (frames.rows() != params.w_enc.cols())
    throw std::invalid_argument("frame dimension mismatch: got " +
                                std::to_string(frames.rows()) + ", expected " +
                                std::to_string(params.w_enc.cols()));
  if (prev_tokens.empty() || prev_tokens.front() != kBos)
    throw std::invalid_argument("prev_tokens must begin with BOS");
  const TokenId v = static_cast<TokenId>(params.embed.rows());
  for (TokenId id : prev_tokens)
    if (id < 0 || id >= v)
      throw std::invalid_argument("token id out of range: " + std::to_string(id));
}

ForwardTrace run_forward(const ParameterSet& params, const EffectiveWeights& w,
                         const Matrix& frames, std::span<const TokenId> prev_tokens) {
  const Index src = frames.cols();
  const Index steps = static_cast<Index>(prev_tokens.size());
  const Index dh = params.w_enc.rows();

  ForwardTrace tr;
  tr.encodings = (w.w_enc * frames).array().tanh();
  tr.embeds.resize(dh, steps);
  tr.queries.resize(dh, steps);
  tr.attention.resize(src, steps);
  tr.contexts.resize(dh, steps);
  tr.hidden.resize(dh, steps);
  tr.logits.resize(params.embed.rows(), steps);

  Vector cat(2 * dh);
  for (Index t = 0; t < steps; ++t) {
    tr.embeds.col(t) = params.embed.row(prev_tokens[t]).transpose();
    tr.queries.col(t) = w.w_q * tr.embeds.col(t);
    tr.attention.col(t) = softmax(tr.encodings.transpose() * tr.queries.col(t));
    tr.contexts.col(t) = tr.encodings * tr.attention.col(t);
    cat << tr.embeds.col(t), tr.contexts.col(t);
    tr.hidden.col(t) = (w.w_h * cat + params.b_h).array().tanh();
    tr.logits.col(t) = w.w_o * tr.hidden.col(t) + params.b_o;
  }
  return tr;
}

void check_example(const ParameterSet& params, const Example& ex) {
  if (ex.tokens.empty()) throw std::invalid_argument("example has no tokens");
  const TokenId v = static_cast<TokenId>(params.embed.rows());
  for (TokenId id : ex.tokens)
    if (id < kFirstRealToken || id >= v)
      throw std::invalid_argument("example token outside real-token range");
}

// Gradients w.r.t. the effective matrices plus the always-shared pieces.
struct RawGrads {
  Matrix w_enc, embed, w_q, w_h, w_o;
  Vector b_h, b_o;
};

RawGrads zero_raw_grads(const ParameterSet& p) {
  return {Matrix::Zero(p.w_enc.rows(), p.w_enc.cols()),
          Matrix::Zero(p.embed.rows(), p.embed.cols()),
          Matrix::Zero(p.w_q.rows(), p.w_q.cols()),
          Matrix::Zero(p.w_h.rows(), p.w_h.cols()),
          Matrix::Zero(p.w_o.rows(), p.w_o.cols()),
          Vector::Zero(p.b_h.size()), Vector::Zero(p.b_o.size())};
}

// Accumulates one example's contribution to nll and grads. inv_total is
// 1 / (total target positions in the batch) so results are batch means.
double backward_example(const ParameterSet& params, const EffectiveWeights& w,
                        const Example& ex, double inv_total, RawGrads& g) {
  std::vector<TokenId> prev(ex.tokens.size() + 1);
  prev[0] = kBos;
  std::copy(ex.tokens.begin(), ex.tokens.end(), prev.begin() + 1);
  std::vector<TokenId> targets(ex.tokens.begin(), ex.tokens.end());
  targets.push_back(kEos);

  const ForwardTrace tr = run_forward(params, w, ex.frames, prev);
  const Index steps = tr.hidden.cols();
  const Index dh = tr.hidden.rows();

  double nll = 0;
  Matrix d_enc = Matrix::Zero(tr.encodings.rows(), tr.encodings.cols());
  Vector cat(2 * dh);
  for (Index t = 0; t < steps; ++t) {
    nll -= inv_total * log_softmax_at(tr.logits.col(t), targets[t]);

    Vector dlogit = softmax(tr.logits.col(t));
    dlogit(targets[t]) -= 1.0;
    dlogit *= inv_total;

    g.w_o.noalias() += dlogit * tr.hidden.col(t).transpose();
    g.b_o += dlogit;

    Vector dh_t = w.w_o.transpose() * dlogit;
    Vector dz = dh_t.array() * (1.0 - tr.hidden.col(t).array().square());
    cat << tr.embeds.col(t), tr.contexts.col(t);
    g.w_h.noalias() += dz * cat.transpose();
    g.b_h += dz;

    Vector dcat = w.w_h.transpose() * dz;
    Vector de = dcat.head(dh);
    Vector dc = dcat.tail(dh);

    const auto a = tr.attention.col(t);
    Vector da = tr.encodings.transpose() * dc;
    d_enc.noalias() += dc * a.transpose();

    Vector ds = a.array() * (da.array() - a.dot(da));
    Vector dq = tr.encodings * ds;
    d_enc.noalias() += tr.queries.col(t) * ds.transpose();

    g.w_q.noalias() += dq * tr.embeds.col(t).transpose();
    de += w.w_q.transpose() * dq;
    g.embed.row(prev[t]) += de.transpose();
  }
  Matrix du = d_enc.array() * (1.0 - tr.encodings.array().square());
  g.w_enc.noalias() += du * ex.frames.transpose();
  return nll;
}

std::pair<double, RawGrads> backward_batch(const ParameterSet& params,
                                           const LoraAdapter* adapter,
                                           std::span<const Example* const> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const EffectiveWeights w = effective_weights(params, adapter);
  std::size_t total = 0;
  for (const Example* ex : batch) {
    check_example(params, *ex);
    total += ex->tokens.size() + 1;  // EOS appended
  }
  const double inv_total = 1.0 / static_cast<double>(total);

  RawGrads g = zero_raw_grads(params);
  double nll = 0;
  for (const Example* ex : batch) nll += backward_example(params, w, *ex, inv_total, g);
  return {nll, std::move(g)};
}

std::vector<const Example*> pointer_view(std::span<const Example> batch) {
  std::vector<const Example*> ptrs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) ptrs[i] = &batch[i];
  return ptrs;
}

}  // namespace

ParameterSet merge(const ParameterSet& params, const LoraAdapter& adapter) {
  check_adapter_shapes(params, adapter);
  ParameterSet out = params;
  const double s = adapter.scale();
  for (const auto& f : adapter.factors)
    *target_of(out, f.target) += s * (f.b * f.a);
  return out;
}

ForwardTrace forward_trace(const ParameterSet& params, const LoraAdapter* adapter,
                           const Matrix& frames,
                           std::span<const TokenId> prev_tokens) {
  check_inputs(params, frames, prev_tokens);
  return run_forward(params, effective_weights(params, adapter), frames, prev_tokens);
}

ForwardResult forward(const ParameterSet& params, const LoraAdapter* adapter,
                      const Matrix& frames, std::span<const TokenId> prev_tokens) {
  ForwardTrace tr = forward_trace(params, adapter, frames, prev_tokens);
  return {std::move(tr.hidden), std::move(tr.logits)};
}

FullLoss loss_and_grads(const ParameterSet& params,
                        std::span<const Example* const> batch) {
  auto [nll, raw] = backward_batch(params, nullptr, batch);
  FullLoss out;
  out.nll = nll;
  out.grads.w_enc = std::move(raw.w_enc);
  out.grads.embed = std::move(raw.embed);
  out.grads.w_q = std::move(raw.w_q);
  out.grads.w_h = std::move(raw.w_h);
  out.grads.b_h = std::move(raw.b_h);
  out.grads.w_o = std::move(raw.w_o);
  out.grads.b_o = std::move(raw.b_o);
  return out;
}

AdapterLoss loss_and_grads(const ParameterSet& params, const LoraAdapter& adapter,
                           std::span<const Example* const> batch) {
  auto [nll, raw] = backward_batch(params, &adapter, batch);
  AdapterLoss out;
  out.nll = nll;
  out.grads.rank = adapter.rank;
  out.grads.alpha = adapter.alpha;
  out.grads.targets = adapter.targets;
  const double s = adapter.scale();
  for (const auto& f : adapter.factors) {
    const Matrix* dw = nullptr;
    switch (f.target) {
      case LoraTarget::kEnc: dw = &raw.w_enc; break;
      case LoraTarget::kQ: dw = &raw.w_q; break;
      case LoraTarget::kH: dw = &raw.w_h; break;
      case LoraTarget::kO: dw = &raw.w_o; break;
    }
    // w_eff = w0 + s*b*a, so da = s * b^T * dw_eff and db = s * dw_eff * a^T.
    out.grads.factors.push_back(
        {f.target, s * (f.b.transpose() * *dw), s * (*dw * f.a.transpose())});
  }
  return out;
}

FullLoss loss_and_grads(const ParameterSet& params, std::span<const Example> batch) {
  auto ptrs = pointer_view(batch);
  return loss_and_grads(params, std::span<const Example* const>(ptrs));
}

AdapterLoss loss_and_grads(const ParameterSet& params, const LoraAdapter& adapter,
                           std::span<const Example> batch) {
  auto ptrs = pointer_view(batch);
  return loss_and_grads(params, adapter, std::span<const Example* const>(ptrs));
}

double loss(const ParameterSet& params, const LoraAdapter* adapter,
            std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const EffectiveWeights w = effective_weights(params, adapter);
  std::size_t total = 0;
  for (const Example& ex : batch) {
    check_example(params, ex);
    total += ex.tokens.size() + 1;
  }
  double nll = 0;
  for (const Example& ex : batch) {
    std::vector<TokenId> prev(ex.tokens.size() + 1);
    prev[0] = kBos;
    std::copy(ex.tokens.begin(), ex.tokens.end(), prev.begin() + 1);
    const ForwardTrace tr = run_forward(params, w, ex.frames, prev);
    for (Index t = 0; t < tr.logits.cols(); ++t) {
      const TokenId target =
          t + 1 < tr.logits.cols() ? ex.tokens[t] : kEos;
      nll -= log_softmax_at(tr.logits.col(t), target);
    }
  }
  return nll / static_cast<double>(total);
}

}  // namespace feds2t
