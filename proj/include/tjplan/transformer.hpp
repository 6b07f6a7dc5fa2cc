#pragma once

// Dual-encoder transformer that maps one joint's waypoints (source) and the
// other joints' waypoints (context) to spline coefficients and knots.
// Post-norm layers, masked mean pooling into two ReLU heads. Forward and
// reverse passes are written out by hand; every tensor is a MatrixXd
// (biases and gains are 1 x n rows).

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace tjplan::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ModelConfig {
  int joints = 6;           ///< K
  int max_waypoints = 48;   ///< I_max
  int dim = 32;             ///< D
  int heads = 8;
  int context_layers = 6;   ///< N_c
  int source_layers = 6;    ///< N_s
  int ffn_dim = 0;          ///< 0 selects 4 * dim
  double dropout = 0.1;

  [[nodiscard]] int seq_len() const { return (joints - 1) * max_waypoints; }
  [[nodiscard]] int coef_len() const { return max_waypoints + 4; }
  [[nodiscard]] int knot_len() const { return max_waypoints + 10; }
  [[nodiscard]] int hidden() const { return ffn_dim > 0 ? ffn_dim : 4 * dim; }
  /// Throws ParameterError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Attention {
  MatrixXd wq, wk, wv, wo;  // D x D
  MatrixXd bq, bk, bv, bo;  // 1 x D
};

struct Norm {
  MatrixXd gain, bias;  // 1 x D
};

struct Ffn {
  MatrixXd w1, b1;  // D x F, 1 x F
  MatrixXd w2, b2;  // F x D, 1 x D
};

struct ContextLayer {
  Attention self;
  Norm norm1;
  Ffn ffn;
  Norm norm2;
};

struct SourceLayer {
  Attention self;
  Norm norm1;
  Attention cross;  ///< queries from the source, keys and values from the context memory
  Norm norm2;
  Ffn ffn;
  Norm norm3;
};

/// Two-layer ReLU network on the pooled encoding.
struct Head {
  MatrixXd w1, b1;  // D x F, 1 x F
  MatrixXd w2, b2;  // F x out, 1 x out
};

struct ModelParams {
  ModelConfig config;
  MatrixXd embed_weight;  ///< 1 x D, scalar joint value -> token
  MatrixXd embed_bias;    ///< 1 x D
  MatrixXd pad_token;     ///< 1 x D, used at every padding position
  MatrixXd positional;    ///< L x D sinusoidal table, not trained
  std::vector<ContextLayer> context;
  std::vector<SourceLayer> source;
  Head coef_head;
  Head knot_head;

  /// Every shape set, weights zero, norm gains one.
  static ModelParams zeros(const ModelConfig& config);
  /// Xavier-uniform weights, zero biases, unit gains.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Visits the trainable tensors in a fixed order (also the file order).
  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool all_finite() const;

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f);
};

/// A parameter-shaped set of zeros, for gradients and optimizer moments.
[[nodiscard]] ModelParams zeros_like(const ModelParams& p);

/// Tokens after embedding and positional encoding; *_pad marks padding.
struct EncodedInput {
  MatrixXd src;  ///< L x D, I real tokens first
  MatrixXd ctx;  ///< L x D, (K-1) I real tokens first, joint after joint
  std::vector<std::uint8_t> src_pad;
  std::vector<std::uint8_t> ctx_pad;
  int waypoints = 0;
};

struct ModelOutput {
  VectorXd coefficients;  ///< M_out = I_max + 4
  VectorXd knots;         ///< N_out = I_max + 10
};

/// Fixed sinusoidal table: even columns sin, odd columns cos.
[[nodiscard]] MatrixXd sinusoidal_encoding(int length, int dim);

/// source: I values; context: (K-1) x I. Throws UnsupportedLength if I > I_max.
[[nodiscard]] EncodedInput embed_and_encode(const VectorXd& source, const MatrixXd& context,
                                            const ModelParams& params);

/// Scaled dot-product attention. Masked keys get exactly zero weight; a
/// query with no visible key yields a zero row before the output projection.
[[nodiscard]] MatrixXd multi_head_attention(const MatrixXd& queries, const MatrixXd& keys_values,
                                            const std::vector<std::uint8_t>& key_pad,
                                            const Attention& a, int heads);

[[nodiscard]] MatrixXd layer_norm(const MatrixXd& x, const Norm& n);
inline constexpr double kNormEpsilon = 1e-5;

[[nodiscard]] MatrixXd context_encoder(const EncodedInput& in, const ModelParams& params);
[[nodiscard]] MatrixXd source_encoder(const EncodedInput& in, const MatrixXd& memory,
                                      const ModelParams& params);
[[nodiscard]] ModelOutput output_heads(const MatrixXd& s, const std::vector<std::uint8_t>& src_pad,
                                       const ModelParams& params);

/// Inference: dropout off, deterministic.
[[nodiscard]] ModelOutput forward(const ModelParams& params, const EncodedInput& in);

// ---------------------------------------------------------------------------
// Loss and gradients

[[nodiscard]] double smooth_l1(double x);

struct LossWeights {
  double coef = 1.0;  ///< theta_1
  double knot = 1.0;  ///< theta_2
};

/// theta_1 * mean smooth-L1 over the first coef_len coefficients plus
/// theta_2 * mean |diff| over the first knot_len knots.
[[nodiscard]] double composite_loss(const ModelOutput& pred, const ModelOutput& target,
                                    int coef_len, int knot_len, const LossWeights& w);

/// d loss / d pred, zero beyond the valid prefixes.
[[nodiscard]] ModelOutput composite_loss_gradient(const ModelOutput& pred, const ModelOutput& target,
                                                  int coef_len, int knot_len, const LossWeights& w);

/// One supervised sample: joint k as source, the others as context.
struct Example {
  VectorXd source;       ///< I
  MatrixXd context;      ///< (K-1) x I
  VectorXd coef_target;  ///< I + 4
  VectorXd knot_target;  ///< I + 10
};

/// Forward with recorded dropout masks plus reverse pass. Owns its buffers.
class Tape {
 public:
  /// Embeds the raw values itself so the embedding gets gradients too.
  /// rng == nullptr disables dropout.
  ModelOutput forward(const ModelParams& params, const VectorXd& source, const MatrixXd& context,
                      std::mt19937_64* rng);
  /// Accumulates d loss / d params into grad given d loss / d output.
  void backward(const ModelParams& params, const ModelOutput& d_out, ModelParams& grad) const;

  struct Impl;
  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;

 private:
  std::unique_ptr<Impl> impl_;
};

struct BatchGradient {
  double loss = 0.0;  ///< mean over the batch
  ModelParams grad;   ///< of the mean loss
};

/// Mean composite loss over the batch and its exact gradient. Throws
/// NumericalBreakdown naming the layer where a non-finite value appeared.
[[nodiscard]] BatchGradient batch_gradient(const ModelParams& params, const std::vector<Example>& batch,
                                           const LossWeights& w, std::mt19937_64* rng);

/// Mean loss with dropout off.
[[nodiscard]] double evaluate_loss(const ModelParams& params, const std::vector<Example>& examples,
                                   const LossWeights& w);

[[nodiscard]] EncodedInput encode_example(const Example& e, const ModelParams& params);
[[nodiscard]] ModelOutput target_of(const Example& e, const ModelConfig& config);

// ---------------------------------------------------------------------------

template <class Self, class F>
void ModelParams::visit(Self& p, F& f) {
  auto att = [&](const std::string& pre, auto& a) {
    f(pre + ".wq", a.wq); f(pre + ".bq", a.bq);
    f(pre + ".wk", a.wk); f(pre + ".bk", a.bk);
    f(pre + ".wv", a.wv); f(pre + ".bv", a.bv);
    f(pre + ".wo", a.wo); f(pre + ".bo", a.bo);
  };
  auto norm = [&](const std::string& pre, auto& n) {
    f(pre + ".gain", n.gain);
    f(pre + ".bias", n.bias);
  };
  auto ffn = [&](const std::string& pre, auto& m) {
    f(pre + ".w1", m.w1); f(pre + ".b1", m.b1);
    f(pre + ".w2", m.w2); f(pre + ".b2", m.b2);
  };
  f(std::string("embed.weight"), p.embed_weight);
  f(std::string("embed.bias"), p.embed_bias);
  f(std::string("embed.pad"), p.pad_token);
  for (std::size_t l = 0; l < p.context.size(); ++l) {
    const std::string pre = "context." + std::to_string(l);
    att(pre + ".self", p.context[l].self);
    norm(pre + ".norm1", p.context[l].norm1);
    ffn(pre + ".ffn", p.context[l].ffn);
    norm(pre + ".norm2", p.context[l].norm2);
  }
  for (std::size_t l = 0; l < p.source.size(); ++l) {
    const std::string pre = "source." + std::to_string(l);
    att(pre + ".self", p.source[l].self);
    norm(pre + ".norm1", p.source[l].norm1);
    att(pre + ".cross", p.source[l].cross);
    norm(pre + ".norm2", p.source[l].norm2);
    ffn(pre + ".ffn", p.source[l].ffn);
    norm(pre + ".norm3", p.source[l].norm3);
  }
  ffn(std::string("head.coef"), p.coef_head);
  ffn(std::string("head.knot"), p.knot_head);
}

}  // namespace tjplan::nn
