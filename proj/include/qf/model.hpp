#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qf/tasks.hpp"

namespace qf {

// Decoder-only Transformer++: pre-norm RMSNorm, RoPE, SwiGLU, no biases,
// untied embedding/head.
struct ModelConfig {
  int model_dim = 64;
  int n_layers = 4;
  int n_heads = 4;
  int vocab_size = 0;
  int max_seq_len = 0;
  double rope_base = 10000.0;
  int ffn_hidden = 0;  // 0 selects default_ffn_hidden(model_dim)
  std::uint64_t seed = 0;

  int head_dim() const { return model_dim / n_heads; }
  int hidden() const;
  // Throws a configuration error.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// (8/3)·d rounded to the nearest multiple of 8.
int default_ffn_hidden(int model_dim);

std::int64_t count_params(const ModelConfig& config);
// Training FLOPs per token, 6 · N.
double flops_per_token(const ModelConfig& config);

inline constexpr double kRmsNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool decay = true;  // weight decay applies (matrices only)
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Flat parameter layout shared by parameters, gradients and optimizer moments.
// Weight matrices are stored input-major (in x out), so y = x · W.
struct ParamLayout {
  struct Layer {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };
  std::vector<TensorInfo> tensors;
  std::size_t embed = 0;
  std::vector<Layer> layers;
  std::size_t final_norm = 0;
  std::size_t head = 0;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& config);
  const TensorInfo& find(const std::string& name) const;
};

template <typename T>
struct ModelState {
  ModelConfig config;
  ParamLayout layout;
  std::vector<T> params;

  template <typename U>
  ModelState<U> cast() const {
    ModelState<U> out;
    out.config = config;
    out.layout = layout;
    out.params.assign(params.begin(), params.end());
    return out;
  }
};

template <typename T>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed);
template <typename T>
ModelState<T> init_model(const ModelConfig& config) {
  return init_model<T>(config, config.seed);
}

// Right-padded token matrix. loss_mask[r*cols + t] is 1 when token t is an
// answer token (after '=' through <EOS>); the logits at t-1 predict it.
struct Batch {
  int rows = 0;
  int cols = 0;
  std::vector<int> tokens;
  std::vector<std::uint8_t> loss_mask;
  std::vector<int> lengths;

  int token(int r, int t) const { return tokens[static_cast<std::size_t>(r) * cols + t]; }
};

Batch make_batch(std::span<const TokenSequence> sequences, int pad_to = 0);

// Replace the post-layer residual x at (layer, position) of every row by its
// projection onto {x : w·x + b = 0}. Layers are 0-based.
struct Intervention {
  int layer = 0;
  int position = 0;
  std::vector<double> direction;
  double bias = 0.0;
};

struct ForwardOptions {
  bool capture = false;      // post-layer residual streams
  bool capture_mid = false;  // also the mid-layer (after attention) streams
  std::span<const Intervention> interventions;
};

// Residual streams laid out [layer][row][position][dim].
template <typename T>
struct ActivationTrace {
  int layers = 0;
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<T> post;
  std::vector<T> mid;

  std::size_t index(int layer, int row, int pos) const {
    return ((static_cast<std::size_t>(layer) * rows + row) * cols + pos) * dim;
  }
  const T* post_at(int layer, int row, int pos) const { return post.data() + index(layer, row, pos); }
  const T* mid_at(int layer, int row, int pos) const { return mid.data() + index(layer, row, pos); }
};

template <typename T>
struct ForwardResult {
  int rows = 0;
  int cols = 0;
  int vocab = 0;
  std::vector<T> logits;  // [row][position][vocab]
  ActivationTrace<T> trace;

  const T* logits_at(int row, int pos) const {
    return logits.data() + (static_cast<std::size_t>(row) * cols + pos) * vocab;
  }
};

template <typename T>
struct LossAndGrads {
  T loss = 0;
  std::size_t tokens = 0;  // masked positions contributing to the mean
  std::vector<T> grads;
};

// Owns the scratch buffers of forward/backward passes so a training loop can
// reuse them. The model state itself is never modified.
template <typename T>
class ModelRunner {
 public:
  ModelRunner();
  ~ModelRunner();
  ModelRunner(ModelRunner&&) noexcept;
  ModelRunner& operator=(ModelRunner&&) noexcept;

  ForwardResult<T> forward(const ModelState<T>& state, const Batch& batch, const ForwardOptions& options = {});
  LossAndGrads<T> loss_and_grads(const ModelState<T>& state, const Batch& batch);

 private:
  struct Workspace;
  std::unique_ptr<Workspace> ws_;
};

template <typename T>
ForwardResult<T> forward(const ModelState<T>& state, const Batch& batch, const ForwardOptions& options = {}) {
  return ModelRunner<T>().forward(state, batch, options);
}

template <typename T>
LossAndGrads<T> loss_and_grads(const ModelState<T>& state, const Batch& batch) {
  return ModelRunner<T>().loss_and_grads(state, batch);
}

// Masked mean cross-entropy from precomputed logits (no gradients).
template <typename T>
double masked_cross_entropy(const ForwardResult<T>& result, const Batch& batch);

// Building blocks, exposed for property tests.
template <typename T>
void rms_norm_rows(const T* x, const T* gain, T* y, int rows, int dim);
template <typename T>
void apply_rope(T* x, int rows, int cols, int dim, int head_dim, double base, bool inverse = false);

}  // namespace qf
