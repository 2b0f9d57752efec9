#include "qf/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qf/error.hpp"
#include "qf/random.hpp"

namespace qf {

int default_ffn_hidden(int model_dim) {
  const double raw = 8.0 * model_dim / 3.0;
  return std::max(8, static_cast<int>(std::lround(raw / 8.0)) * 8);
}

int ModelConfig::hidden() const { return ffn_hidden > 0 ? ffn_hidden : default_ffn_hidden(model_dim); }

void ModelConfig::validate() const {
  require(model_dim > 0, ErrorKind::kConfig, "model_dim must be positive");
  require(n_layers >= 0, ErrorKind::kConfig, "n_layers must be non-negative");
  require(n_heads > 0 && model_dim % n_heads == 0, ErrorKind::kConfig,
          "model_dim " + std::to_string(model_dim) + " is not divisible by n_heads " + std::to_string(n_heads));
  require(head_dim() % 2 == 0, ErrorKind::kConfig, "head_dim must be even for rotary embeddings");
  require(vocab_size > 0, ErrorKind::kConfig, "vocab_size must be positive");
  require(max_seq_len > 0, ErrorKind::kConfig, "max_seq_len must be positive");
  require(rope_base > 1.0, ErrorKind::kConfig, "rope_base must exceed 1");
  require(ffn_hidden >= 0, ErrorKind::kConfig, "ffn_hidden must be non-negative");
}

std::int64_t count_params(const ModelConfig& c) {
  const std::int64_t d = c.model_dim;
  const std::int64_t h = c.hidden();
  const std::int64_t v = c.vocab_size;
  const std::int64_t per_layer = 2 * d + 4 * d * d + 3 * d * h;
  return v * d + c.n_layers * per_layer + d + d * v;
}

double flops_per_token(const ModelConfig& c) { return 6.0 * static_cast<double>(count_params(c)); }

ParamLayout ParamLayout::build(const ModelConfig& c) {
  c.validate();
  ParamLayout layout;
  const int d = c.model_dim;
  const int h = c.hidden();
  auto add = [&](std::string name, int rows, int cols, bool decay) {
    TensorInfo info{std::move(name), rows, cols, layout.total, decay};
    layout.total += info.size();
    layout.tensors.push_back(std::move(info));
    return layout.tensors.size() - 1;
  };
  layout.embed = add("embed", c.vocab_size, d, true);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer layer{};
    layer.attn_norm = add(p + "attn_norm", 1, d, false);
    layer.wq = add(p + "wq", d, d, true);
    layer.wk = add(p + "wk", d, d, true);
    layer.wv = add(p + "wv", d, d, true);
    layer.wo = add(p + "wo", d, d, true);
    layer.ffn_norm = add(p + "ffn_norm", 1, d, false);
    layer.w_gate = add(p + "w_gate", d, h, true);
    layer.w_up = add(p + "w_up", d, h, true);
    layer.w_down = add(p + "w_down", h, d, true);
    layout.layers.push_back(layer);
  }
  layout.final_norm = add("final_norm", 1, d, false);
  layout.head = add("head", d, c.vocab_size, true);
  return layout;
}

const TensorInfo& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail(ErrorKind::kShape, "no parameter tensor named " + name);
}

template <typename T>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelState<T> state;
  state.config = config;
  state.config.seed = seed;
  state.layout = ParamLayout::build(config);
  state.params.assign(state.layout.total, T(0));
  const double branch_scale = config.n_layers > 0 ? 1.0 / std::sqrt(2.0 * config.n_layers) : 1.0;
  for (std::size_t i = 0; i < state.layout.tensors.size(); ++i) {
    const auto& info = state.layout.tensors[i];
    T* out = state.params.data() + info.offset;
    if (!info.decay) {
      std::fill(out, out + info.size(), T(1));
      continue;
    }
    const bool residual_out = info.name.ends_with(".wo") || info.name.ends_with(".w_down");
    const double std_dev = kInitStd * (residual_out ? branch_scale : 1.0);
    Rng rng(derive_seed(seed, 0x696e6974, i));
    for (std::size_t k = 0; k < info.size(); ++k) out[k] = static_cast<T>(std_dev * rng.normal());
  }
  return state;
}

Batch make_batch(std::span<const TokenSequence> sequences, int pad_to) {
  require(!sequences.empty(), ErrorKind::kData, "empty batch");
  Batch batch;
  batch.rows = static_cast<int>(sequences.size());
  int longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, static_cast<int>(s.ids.size()));
  batch.cols = std::max(longest, pad_to);
  batch.tokens.assign(static_cast<std::size_t>(batch.rows) * batch.cols, Vocabulary::kPadId);
  batch.loss_mask.assign(batch.tokens.size(), 0);
  for (int r = 0; r < batch.rows; ++r) {
    const auto& s = sequences[static_cast<std::size_t>(r)];
    batch.lengths.push_back(static_cast<int>(s.ids.size()));
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      const std::size_t at = static_cast<std::size_t>(r) * batch.cols + t;
      batch.tokens[at] = s.ids[t];
      batch.loss_mask[at] = (t >= s.answer_start && s.answer_start > 0) ? 1 : 0;
    }
  }
  return batch;
}

template <typename T>
void rms_norm_rows(const T* x, const T* gain, T* y, int rows, int dim) {
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * dim;
    T* yi = y + static_cast<std::size_t>(i) * dim;
    T ss = 0;
    for (int k = 0; k < dim; ++k) ss += xi[k] * xi[k];
    const T r = T(1) / std::sqrt(ss / dim + T(kRmsNormEps));
    for (int k = 0; k < dim; ++k) yi[k] = xi[k] * r * gain[k];
  }
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

struct RopeTable {
  int cols = 0;
  int head_dim = 0;
  double base = 0;
  std::vector<double> cos, sin;  // [position][pair]

  void ensure(int t, int hd, double b) {
    if (t <= cols && hd == head_dim && b == base) return;
    cols = t;
    head_dim = hd;
    base = b;
    const int pairs = hd / 2;
    cos.assign(static_cast<std::size_t>(t) * pairs, 0);
    sin.assign(cos.size(), 0);
    for (int p = 0; p < t; ++p) {
      for (int j = 0; j < pairs; ++j) {
        const double theta = p * std::pow(b, -2.0 * j / hd);
        cos[static_cast<std::size_t>(p) * pairs + j] = std::cos(theta);
        sin[static_cast<std::size_t>(p) * pairs + j] = std::sin(theta);
      }
    }
  }
};

template <typename T>
void rope_rows(T* x, int rows, int cols, int dim, int head_dim, const RopeTable& table, bool inverse) {
  const int pairs = head_dim / 2;
  for (int i = 0; i < rows * cols; ++i) {
    const int pos = i % cols;
    const double* c = table.cos.data() + static_cast<std::size_t>(pos) * pairs;
    const double* s = table.sin.data() + static_cast<std::size_t>(pos) * pairs;
    T* row = x + static_cast<std::size_t>(i) * dim;
    for (int h = 0; h < dim; h += head_dim) {
      for (int j = 0; j < pairs; ++j) {
        T& a = row[h + 2 * j];
        T& b = row[h + 2 * j + 1];
        const T cj = static_cast<T>(c[j]);
        const T sj = inverse ? static_cast<T>(-s[j]) : static_cast<T>(s[j]);
        const T a0 = a;
        a = a0 * cj - b * sj;
        b = a0 * sj + b * cj;
      }
    }
  }
}

// Returns 1/rms per row so the backward pass can reuse it.
template <typename T>
void rms_forward(const T* x, const T* gain, T* y, T* inv_rms, int rows, int dim) {
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * dim;
    T* yi = y + static_cast<std::size_t>(i) * dim;
    T ss = 0;
    for (int k = 0; k < dim; ++k) ss += xi[k] * xi[k];
    const T r = T(1) / std::sqrt(ss / dim + T(kRmsNormEps));
    inv_rms[i] = r;
    for (int k = 0; k < dim; ++k) yi[k] = xi[k] * r * gain[k];
  }
}

// Accumulates into dx and dgain.
template <typename T>
void rms_backward(const T* x, const T* gain, const T* inv_rms, const T* dy, T* dx, T* dgain, int rows, int dim) {
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * dim;
    const T* dyi = dy + static_cast<std::size_t>(i) * dim;
    T* dxi = dx + static_cast<std::size_t>(i) * dim;
    const T r = inv_rms[i];
    T dot = 0;
    for (int k = 0; k < dim; ++k) {
      const T xhat = xi[k] * r;
      const T g = dyi[k] * gain[k];
      dgain[k] += dyi[k] * xhat;
      dot += g * xhat;
    }
    dot /= dim;
    for (int k = 0; k < dim; ++k) {
      const T xhat = xi[k] * r;
      dxi[k] += r * (dyi[k] * gain[k] - xhat * dot);
    }
  }
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace

template <typename T>
void apply_rope(T* x, int rows, int cols, int dim, int head_dim, double base, bool inverse) {
  RopeTable table;
  table.ensure(cols, head_dim, base);
  rope_rows(x, rows, cols, dim, head_dim, table, inverse);
}

template <typename T>
struct ModelRunner<T>::Workspace {
  struct LayerCache {
    Mat<T> x_pre, a, q, k, v, att, x_mid, m, gate, up, s;
    std::vector<T> rms1, rms2, probs;
  };
  std::vector<LayerCache> layers;
  Mat<T> x, y;
  std::vector<T> rmsf;
  RopeTable rope;
};

template <typename T>
ModelRunner<T>::ModelRunner() : ws_(std::make_unique<Workspace>()) {}
template <typename T>
ModelRunner<T>::~ModelRunner() = default;
template <typename T>
ModelRunner<T>::ModelRunner(ModelRunner&&) noexcept = default;
template <typename T>
ModelRunner<T>& ModelRunner<T>::operator=(ModelRunner&&) noexcept = default;

namespace {

template <typename T>
void check_batch(const ModelConfig& c, const Batch& batch) {
  require(batch.rows > 0 && batch.cols > 0, ErrorKind::kShape, "empty batch");
  require(batch.tokens.size() == static_cast<std::size_t>(batch.rows) * batch.cols, ErrorKind::kShape,
          "batch token matrix has the wrong size");
  require(batch.cols <= c.max_seq_len, ErrorKind::kShape,
          "sequence length " + std::to_string(batch.cols) + " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  for (int id : batch.tokens) {
    require(id >= 0 && id < c.vocab_size, ErrorKind::kShape, "token id " + std::to_string(id) + " outside vocabulary");
  }
}

template <typename T>
void project_out(T* x, int dim, const Intervention& iv) {
  double wx = iv.bias;
  double ww = 0;
  for (int k = 0; k < dim; ++k) {
    wx += iv.direction[static_cast<std::size_t>(k)] * static_cast<double>(x[k]);
    ww += iv.direction[static_cast<std::size_t>(k)] * iv.direction[static_cast<std::size_t>(k)];
  }
  const double scale = wx / ww;
  for (int k = 0; k < dim; ++k) {
    x[k] = static_cast<T>(static_cast<double>(x[k]) - scale * iv.direction[static_cast<std::size_t>(k)]);
  }
}

}  // namespace

template <typename T>
ForwardResult<T> ModelRunner<T>::forward(const ModelState<T>& state, const Batch& batch, const ForwardOptions& options) {
  const ModelConfig& c = state.config;
  check_batch<T>(c, batch);
  for (const auto& iv : options.interventions) {
    require(iv.layer >= 0 && iv.layer < c.n_layers, ErrorKind::kConfig,
            "intervention layer " + std::to_string(iv.layer) + " outside the model");
    require(iv.position >= 0, ErrorKind::kConfig, "intervention position must be non-negative");
    require(static_cast<int>(iv.direction.size()) == c.model_dim, ErrorKind::kConfig,
            "intervention direction does not match model_dim");
    double ww = 0;
    for (double w : iv.direction) ww += w * w;
    require(ww > 0, ErrorKind::kContract, "intervention direction has zero norm");
  }

  const int B = batch.rows;
  const int Tn = batch.cols;
  const int N = B * Tn;
  const int d = c.model_dim;
  const int H = c.n_heads;
  const int hd = c.head_dim();
  const int hidden = c.hidden();
  const int V = c.vocab_size;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto& P = state.params;
  const auto& layout = state.layout;
  auto W = [&](std::size_t index) {
    const auto& info = layout.tensors[index];
    return CMapM<T>(P.data() + info.offset, info.rows, info.cols);
  };
  auto ptr = [&](std::size_t index) { return P.data() + layout.tensors[index].offset; };

  Workspace& ws = *ws_;
  ws.rope.ensure(Tn, hd, c.rope_base);
  ws.layers.resize(static_cast<std::size_t>(c.n_layers));

  ForwardResult<T> result;
  result.rows = B;
  result.cols = Tn;
  result.vocab = V;
  if (options.capture || options.capture_mid) {
    auto& tr = result.trace;
    tr.layers = c.n_layers;
    tr.rows = B;
    tr.cols = Tn;
    tr.dim = d;
    const std::size_t total = static_cast<std::size_t>(c.n_layers) * N * d;
    if (options.capture) tr.post.resize(total);
    if (options.capture_mid) tr.mid.resize(total);
  }

  ws.x.resize(N, d);
  {
    const auto embed = W(layout.embed);
    for (int i = 0; i < N; ++i) ws.x.row(i) = embed.row(batch.tokens[static_cast<std::size_t>(i)]);
  }

  for (int l = 0; l < c.n_layers; ++l) {
    auto& lc = ws.layers[static_cast<std::size_t>(l)];
    const auto& ly = layout.layers[static_cast<std::size_t>(l)];
    lc.x_pre = ws.x;
    lc.a.resize(N, d);
    lc.rms1.resize(static_cast<std::size_t>(N));
    rms_forward(lc.x_pre.data(), ptr(ly.attn_norm), lc.a.data(), lc.rms1.data(), N, d);
    lc.q.noalias() = lc.a * W(ly.wq);
    lc.k.noalias() = lc.a * W(ly.wk);
    lc.v.noalias() = lc.a * W(ly.wv);
    rope_rows(lc.q.data(), B, Tn, d, hd, ws.rope, false);
    rope_rows(lc.k.data(), B, Tn, d, hd, ws.rope, false);

    lc.att.resize(N, d);
    lc.probs.assign(static_cast<std::size_t>(B) * H * Tn * Tn, T(0));
    Mat<T> scores(Tn, Tn);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto qb = lc.q.block(b * Tn, h * hd, Tn, hd);
        const auto kb = lc.k.block(b * Tn, h * hd, Tn, hd);
        const auto vb = lc.v.block(b * Tn, h * hd, Tn, hd);
        scores.noalias() = qb * kb.transpose();
        MapM<T> probs(lc.probs.data() + (static_cast<std::size_t>(b) * H + h) * Tn * Tn, Tn, Tn);
        for (int i = 0; i < Tn; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * scale);
          T sum = 0;
          for (int j = 0; j <= i; ++j) {
            const T e = std::exp(scores(i, j) * scale - mx);
            probs(i, j) = e;
            sum += e;
          }
          const T inv = T(1) / sum;
          for (int j = 0; j <= i; ++j) probs(i, j) *= inv;
        }
        lc.att.block(b * Tn, h * hd, Tn, hd).noalias() = probs * vb;
      }
    }
    lc.x_mid = lc.x_pre;
    lc.x_mid.noalias() += lc.att * W(ly.wo);

    lc.m.resize(N, d);
    lc.rms2.resize(static_cast<std::size_t>(N));
    rms_forward(lc.x_mid.data(), ptr(ly.ffn_norm), lc.m.data(), lc.rms2.data(), N, d);
    lc.gate.noalias() = lc.m * W(ly.w_gate);
    lc.up.noalias() = lc.m * W(ly.w_up);
    lc.s.resize(N, hidden);
    for (Eigen::Index i = 0; i < lc.s.size(); ++i) {
      const T g = lc.gate.data()[i];
      lc.s.data()[i] = g * sigmoid(g) * lc.up.data()[i];
    }
    ws.x = lc.x_mid;
    ws.x.noalias() += lc.s * W(ly.w_down);

    for (const auto& iv : options.interventions) {
      if (iv.layer != l || iv.position >= Tn) continue;
      for (int b = 0; b < B; ++b) project_out(ws.x.data() + (static_cast<std::size_t>(b) * Tn + iv.position) * d, d, iv);
    }
    const std::size_t off = static_cast<std::size_t>(l) * N * d;
    if (options.capture) std::copy(ws.x.data(), ws.x.data() + static_cast<std::size_t>(N) * d, result.trace.post.data() + off);
    if (options.capture_mid) {
      std::copy(lc.x_mid.data(), lc.x_mid.data() + static_cast<std::size_t>(N) * d, result.trace.mid.data() + off);
    }
  }

  ws.y.resize(N, d);
  ws.rmsf.resize(static_cast<std::size_t>(N));
  rms_forward(ws.x.data(), ptr(layout.final_norm), ws.y.data(), ws.rmsf.data(), N, d);
  result.logits.resize(static_cast<std::size_t>(N) * V);
  MapM<T> logits(result.logits.data(), N, V);
  logits.noalias() = ws.y * W(layout.head);
  return result;
}

template <typename T>
LossAndGrads<T> ModelRunner<T>::loss_and_grads(const ModelState<T>& state, const Batch& batch) {
  const ModelConfig& c = state.config;
  for (int r = 0; r < batch.rows; ++r) {
    bool any = false;
    for (int t = 1; t < batch.cols && !any; ++t) any = batch.loss_mask[static_cast<std::size_t>(r) * batch.cols + t] != 0;
    require(any, ErrorKind::kData, "batch row " + std::to_string(r) + " has no answer positions");
  }
  ForwardResult<T> fwd = forward(state, batch);

  const int B = batch.rows;
  const int Tn = batch.cols;
  const int N = B * Tn;
  const int d = c.model_dim;
  const int H = c.n_heads;
  const int hd = c.head_dim();
  const int hidden = c.hidden();
  const int V = c.vocab_size;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto& P = state.params;
  const auto& layout = state.layout;
  Workspace& ws = *ws_;

  LossAndGrads<T> out;
  out.grads.assign(P.size(), T(0));
  auto W = [&](std::size_t index) {
    const auto& info = layout.tensors[index];
    return CMapM<T>(P.data() + info.offset, info.rows, info.cols);
  };
  auto G = [&](std::size_t index) {
    const auto& info = layout.tensors[index];
    return MapM<T>(out.grads.data() + info.offset, info.rows, info.cols);
  };
  auto ptr = [&](std::size_t index) { return P.data() + layout.tensors[index].offset; };
  auto gptr = [&](std::size_t index) { return out.grads.data() + layout.tensors[index].offset; };

  // Cross-entropy and its gradient with respect to the logits.
  Mat<T> dlogits = Mat<T>::Zero(N, V);
  double total = 0;
  std::size_t count = 0;
  for (int r = 0; r < B; ++r) {
    for (int t = 0; t + 1 < Tn; ++t) {
      if (!batch.loss_mask[static_cast<std::size_t>(r) * Tn + t + 1]) continue;
      const int i = r * Tn + t;
      const T* z = fwd.logits.data() + static_cast<std::size_t>(i) * V;
      const T mx = *std::max_element(z, z + V);
      T sum = 0;
      for (int k = 0; k < V; ++k) {
        const T e = std::exp(z[k] - mx);
        dlogits(i, k) = e;
        sum += e;
      }
      const int target = batch.token(r, t + 1);
      total += static_cast<double>(std::log(sum) + mx - z[target]);
      for (int k = 0; k < V; ++k) dlogits(i, k) /= sum;
      dlogits(i, target) -= T(1);
      ++count;
    }
  }
  out.tokens = count;
  out.loss = static_cast<T>(total / static_cast<double>(count));
  dlogits *= T(1) / static_cast<T>(count);

  G(layout.head).noalias() += ws.y.transpose() * dlogits;
  Mat<T> dy = dlogits * W(layout.head).transpose();
  Mat<T> dx = Mat<T>::Zero(N, d);
  rms_backward(ws.x.data(), ptr(layout.final_norm), ws.rmsf.data(), dy.data(), dx.data(), gptr(layout.final_norm), N, d);

  Mat<T> ds, dgate, dup, dm, dmid, datt, dq, dk, dv, da, dscores(Tn, Tn), dprobs(Tn, Tn);
  for (int l = c.n_layers - 1; l >= 0; --l) {
    auto& lc = ws.layers[static_cast<std::size_t>(l)];
    const auto& ly = layout.layers[static_cast<std::size_t>(l)];

    // Feed-forward branch.
    G(ly.w_down).noalias() += lc.s.transpose() * dx;
    ds.noalias() = dx * W(ly.w_down).transpose();
    dgate.resize(N, hidden);
    dup.resize(N, hidden);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      const T g = lc.gate.data()[i];
      const T sg = sigmoid(g);
      const T silu = g * sg;
      dup.data()[i] = ds.data()[i] * silu;
      dgate.data()[i] = ds.data()[i] * lc.up.data()[i] * sg * (T(1) + g * (T(1) - sg));
    }
    G(ly.w_gate).noalias() += lc.m.transpose() * dgate;
    G(ly.w_up).noalias() += lc.m.transpose() * dup;
    dm.noalias() = dgate * W(ly.w_gate).transpose();
    dm.noalias() += dup * W(ly.w_up).transpose();
    dmid = dx;
    rms_backward(lc.x_mid.data(), ptr(ly.ffn_norm), lc.rms2.data(), dm.data(), dmid.data(), gptr(ly.ffn_norm), N, d);

    // Attention branch.
    G(ly.wo).noalias() += lc.att.transpose() * dmid;
    datt.noalias() = dmid * W(ly.wo).transpose();
    dq.setZero(N, d);
    dk.setZero(N, d);
    dv.setZero(N, d);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto qb = lc.q.block(b * Tn, h * hd, Tn, hd);
        const auto kb = lc.k.block(b * Tn, h * hd, Tn, hd);
        const auto vb = lc.v.block(b * Tn, h * hd, Tn, hd);
        const auto dob = datt.block(b * Tn, h * hd, Tn, hd);
        CMapM<T> probs(lc.probs.data() + (static_cast<std::size_t>(b) * H + h) * Tn * Tn, Tn, Tn);
        dprobs.noalias() = dob * vb.transpose();
        dv.block(b * Tn, h * hd, Tn, hd).noalias() = probs.transpose() * dob;
        for (int i = 0; i < Tn; ++i) {
          T dot = 0;
          for (int j = 0; j <= i; ++j) dot += probs(i, j) * dprobs(i, j);
          for (int j = 0; j < Tn; ++j) dscores(i, j) = j <= i ? probs(i, j) * (dprobs(i, j) - dot) * scale : T(0);
        }
        dq.block(b * Tn, h * hd, Tn, hd).noalias() = dscores * kb;
        dk.block(b * Tn, h * hd, Tn, hd).noalias() = dscores.transpose() * qb;
      }
    }
    rope_rows(dq.data(), B, Tn, d, hd, ws.rope, true);
    rope_rows(dk.data(), B, Tn, d, hd, ws.rope, true);
    G(ly.wq).noalias() += lc.a.transpose() * dq;
    G(ly.wk).noalias() += lc.a.transpose() * dk;
    G(ly.wv).noalias() += lc.a.transpose() * dv;
    da.noalias() = dq * W(ly.wq).transpose();
    da.noalias() += dk * W(ly.wk).transpose();
    da.noalias() += dv * W(ly.wv).transpose();
    dx = dmid;
    rms_backward(lc.x_pre.data(), ptr(ly.attn_norm), lc.rms1.data(), da.data(), dx.data(), gptr(ly.attn_norm), N, d);
  }

  auto dembed = G(layout.embed);
  for (int i = 0; i < N; ++i) dembed.row(batch.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
  return out;
}

template <typename T>
double masked_cross_entropy(const ForwardResult<T>& result, const Batch& batch) {
  double total = 0;
  std::size_t count = 0;
  const int V = result.vocab;
  for (int r = 0; r < batch.rows; ++r) {
    for (int t = 0; t + 1 < batch.cols; ++t) {
      if (!batch.loss_mask[static_cast<std::size_t>(r) * batch.cols + t + 1]) continue;
      const T* z = result.logits_at(r, t);
      const double mx = static_cast<double>(*std::max_element(z, z + V));
      double sum = 0;
      for (int k = 0; k < V; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
      total += std::log(sum) + mx - static_cast<double>(z[batch.token(r, t + 1)]);
      ++count;
    }
  }
  require(count > 0, ErrorKind::kData, "batch has no answer positions");
  return total / static_cast<double>(count);
}

template ModelState<float> init_model<float>(const ModelConfig&, std::uint64_t);
template ModelState<double> init_model<double>(const ModelConfig&, std::uint64_t);
template class ModelRunner<float>;
template class ModelRunner<double>;
template double masked_cross_entropy<float>(const ForwardResult<float>&, const Batch&);
template double masked_cross_entropy<double>(const ForwardResult<double>&, const Batch&);
template void rms_norm_rows<float>(const float*, const float*, float*, int, int);
template void rms_norm_rows<double>(const double*, const double*, double*, int, int);
template void apply_rope<float>(float*, int, int, int, int, double, bool);
template void apply_rope<double>(double*, int, int, int, int, double, bool);

}  // namespace qf
