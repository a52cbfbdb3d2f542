#pragma once

#include "feds2t/rng.hpp"
#include "feds2t/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace feds2t {

// Low-rank adapter targets, one per adaptable backbone matrix.
enum class LoraTarget : std::uint32_t {
  kEnc = 1u << 0,  // w_enc
  kQ = 1u << 1,    // w_q
  kH = 1u << 2,    // w_h
  kO = 1u << 3,    // w_o
};

inline constexpr LoraTarget kAllLoraTargets[] = {LoraTarget::kEnc, LoraTarget::kQ,
                                                 LoraTarget::kH, LoraTarget::kO};

inline bool has_target(std::uint32_t mask, LoraTarget t) {
  return (mask & static_cast<std::uint32_t>(t)) != 0;
}

struct ModelConfig {
  int feature_dim = 0;  // d_f
  int hidden_dim = 0;   // d_h
  int vocab_size = 0;   // V, includes BOS/EOS/PAD

  std::uint32_t lora_targets = 0;
  int lora_rank = 0;
  double lora_alpha = 0.0;

  // (rows, cols) of a LoRA target matrix.
  std::pair<int, int> target_shape(LoraTarget t) const {
    switch (t) {
      case LoraTarget::kEnc: return {hidden_dim, feature_dim};
      case LoraTarget::kQ: return {hidden_dim, hidden_dim};
      case LoraTarget::kH: return {hidden_dim, 2 * hidden_dim};
      case LoraTarget::kO: return {vocab_size, hidden_dim};
    }
    throw std::invalid_argument("unknown LoRA target");
  }

  std::int64_t backbone_params() const {
    const std::int64_t df = feature_dim, dh = hidden_dim, v = vocab_size;
    return dh * df + v * dh + dh * dh + dh * 2 * dh + dh + v * dh + v;
  }

  std::int64_t adapter_params() const {
    std::int64_t n = 0;
    for (LoraTarget t : kAllLoraTargets) {
      if (!has_target(lora_targets, t)) continue;
      auto [rows, cols] = target_shape(t);
      n += static_cast<std::int64_t>(lora_rank) * (rows + cols);
    }
    return n;
  }

  void validate() const;
};

// Full weight set of the backbone. Column vectors act on the right:
// logits = w_o * h + b_o.
template <typename Scalar>
struct ParameterSetT {
  Mat<Scalar> w_enc;  // d_h x d_f
  Mat<Scalar> embed;  // V x d_h, one row per token
  Mat<Scalar> w_q;    // d_h x d_h
  Mat<Scalar> w_h;    // d_h x 2*d_h
  Vec<Scalar> b_h;    // d_h
  Mat<Scalar> w_o;    // V x d_h
  Vec<Scalar> b_o;    // V

  // Fixed field order; also the checkpoint serialization order.
  template <typename F>
  void visit(F&& f) {
    f("w_enc", w_enc); f("embed", embed); f("w_q", w_q); f("w_h", w_h);
    f("b_h", b_h); f("w_o", w_o); f("b_o", b_o);
  }
  template <typename F>
  void visit(F&& f) const {
    f("w_enc", w_enc); f("embed", embed); f("w_q", w_q); f("w_h", w_h);
    f("b_h", b_h); f("w_o", w_o); f("b_o", b_o);
  }

  Index size() const {
    Index n = 0;
    visit([&](const char*, const auto& m) { n += m.size(); });
    return n;
  }

  Vec<Scalar> to_vector() const {
    Vec<Scalar> out(size());
    Index at = 0;
    visit([&](const char*, const auto& m) {
      out.segment(at, m.size()) = Eigen::Map<const Vec<Scalar>>(m.data(), m.size());
      at += m.size();
    });
    return out;
  }

  void set_from_vector(const Vec<Scalar>& flat) {
    if (flat.size() != size())
      throw std::invalid_argument("parameter vector size mismatch");
    Index at = 0;
    visit([&](const char*, auto& m) {
      Eigen::Map<Vec<Scalar>>(m.data(), m.size()) = flat.segment(at, m.size());
      at += m.size();
    });
  }

  int feature_dim() const { return static_cast<int>(w_enc.cols()); }
  int hidden_dim() const { return static_cast<int>(w_enc.rows()); }
  int vocab_size() const { return static_cast<int>(embed.rows()); }
};

using ParameterSet = ParameterSetT<double>;

// Per-target low-rank factors. Effective update is (alpha / rank) * b * a,
// shaped like the target. A fresh adapter has b == 0, so the update is zero.
template <typename Scalar>
struct LoraAdapterT {
  struct Factors {
    LoraTarget target;
    Mat<Scalar> a;  // rank x cols
    Mat<Scalar> b;  // rows x rank
  };

  int rank = 0;
  Scalar alpha = 0;
  std::uint32_t targets = 0;
  std::vector<Factors> factors;  // canonical target order: Enc, Q, H, O

  Scalar scale() const { return alpha / static_cast<Scalar>(rank); }

  const Factors* find(LoraTarget t) const {
    for (const auto& f : factors)
      if (f.target == t) return &f;
    return nullptr;
  }

  Index size() const {
    Index n = 0;
    for (const auto& f : factors) n += f.a.size() + f.b.size();
    return n;
  }

  Vec<Scalar> to_vector() const {
    Vec<Scalar> out(size());
    Index at = 0;
    for (const auto& f : factors) {
      out.segment(at, f.a.size()) = Eigen::Map<const Vec<Scalar>>(f.a.data(), f.a.size());
      at += f.a.size();
      out.segment(at, f.b.size()) = Eigen::Map<const Vec<Scalar>>(f.b.data(), f.b.size());
      at += f.b.size();
    }
    return out;
  }

  void set_from_vector(const Vec<Scalar>& flat) {
    if (flat.size() != size())
      throw std::invalid_argument("adapter vector size mismatch");
    Index at = 0;
    for (auto& f : factors) {
      Eigen::Map<Vec<Scalar>>(f.a.data(), f.a.size()) = flat.segment(at, f.a.size());
      at += f.a.size();
      Eigen::Map<Vec<Scalar>>(f.b.data(), f.b.size()) = flat.segment(at, f.b.size());
      at += f.b.size();
    }
  }
};

using LoraAdapter = LoraAdapterT<double>;

// One paired example: frames are d_f x S (one column per source position),
// tokens are real-token ids; decoding targets are tokens followed by EOS.
struct Example {
  Matrix frames;
  std::vector<TokenId> tokens;
};

ParameterSet zero_parameters(const ModelConfig& config);
ParameterSet init_parameters(const ModelConfig& config, StreamRng& rng);

// a ~ uniform(-1/sqrt(cols), 1/sqrt(cols)), b = 0: a fresh adapter is a no-op.
LoraAdapter zero_adapter(const ModelConfig& config);
LoraAdapter init_adapter(const ModelConfig& config, StreamRng& rng);

// Backbone with the adapter update folded in: w += scale * b * a per target.
ParameterSet merge(const ParameterSet& params, const LoraAdapter& adapter);

struct ForwardResult {
  Matrix hidden;  // d_h x T, pre-output-projection state h_t per decode step
  Matrix logits;  // V x T
};

// Teacher-forced pass. prev_tokens must begin with BOS; one decode step per
// prev token. The adapter, when present, contributes (alpha/rank)*b*a to each
// targeted matrix.
ForwardResult forward(const ParameterSet& params, const LoraAdapter* adapter,
                      const Matrix& frames, std::span<const TokenId> prev_tokens);

// Full internals of a forward pass, consumed by backprop and by tests that
// check attention normalization.
struct ForwardTrace {
  Matrix encodings;  // d_h x S
  Matrix embeds;     // d_h x T
  Matrix queries;    // d_h x T
  Matrix attention;  // S x T, columns sum to 1
  Matrix contexts;   // d_h x T
  Matrix hidden;     // d_h x T
  Matrix logits;     // V x T
};

ForwardTrace forward_trace(const ParameterSet& params, const LoraAdapter* adapter,
                           const Matrix& frames, std::span<const TokenId> prev_tokens);

struct FullLoss {
  double nll = 0;      // mean -log p over all target positions in the batch
  ParameterSet grads;  // same shapes as the trainable ParameterSet
};

struct AdapterLoss {
  double nll = 0;
  LoraAdapter grads;  // gradients of the a/b factors only; backbone is frozen
};

// Mean NLL with EOS appended to every target sequence, plus analytic gradients.
FullLoss loss_and_grads(const ParameterSet& params,
                        std::span<const Example* const> batch);
AdapterLoss loss_and_grads(const ParameterSet& params, const LoraAdapter& adapter,
                           std::span<const Example* const> batch);

FullLoss loss_and_grads(const ParameterSet& params, std::span<const Example> batch);
AdapterLoss loss_and_grads(const ParameterSet& params, const LoraAdapter& adapter,
                           std::span<const Example> batch);

// Loss only, shared by both trainable sets.
double loss(const ParameterSet& params, const LoraAdapter* adapter,
            std::span<const Example> batch);

}  // namespace feds2t
