#pragma once

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tabsynth/codec.hpp"

namespace tabsynth {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t context_length = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  double dropout = 0.0;

  void validate() const {
    if (vocab_size == 0) throw Error("lm: vocab size must be positive");
    if (context_length == 0) throw Error("lm: context length must be positive");
    if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0) {
      throw Error("lm: all architecture sizes must be positive");
    }
    if (d_model % n_heads != 0) throw Error("lm: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("lm: dropout must lie in [0,1)");
  }

  // Output projection is weight-tied to the token embedding, so there is no
  // separate head matrix.
  std::size_t parameter_count() const {
    std::size_t d = d_model, f = d_ff;
    return vocab_size * d + context_length * d +
           n_layers * (4 * d * d + 2 * d * f + f + 9 * d) + 2 * d;
  }

  bool same_architecture(const LmConfig& o) const {
    return context_length == o.context_length && n_layers == o.n_layers &&
           n_heads == o.n_heads && d_model == o.d_model && d_ff == o.d_ff;
  }
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

namespace detail {

inline double gelu_scalar(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  double u = c * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_scalar(double x) {
  constexpr double c = 0.7978845608028654;
  double u = c * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace detail

// Decoder-only causal transformer (pre-norm, learned positional embeddings,
// GELU MLP, tied input/output embedding) with explicit forward and backward
// passes. Scalar is float for training and double for finite-difference
// verification.
template <class Scalar>
class LmModel {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;

  explicit LmModel(LmConfig config) : cfg_(config) {
    cfg_.validate();
    build_layout();
    params_.assign(total_params_, Scalar(0));
    grads_.assign(total_params_, Scalar(0));
  }

  static LmModel random_init(LmConfig config, std::uint64_t seed) {
    LmModel m(config);
    m.init_random_weights(seed);
    return m;
  }

  const LmConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return total_params_; }
  const std::vector<Scalar>& parameters() const { return params_; }
  std::vector<Scalar>& parameters() { return params_; }
  const std::vector<Scalar>& gradients() const { return grads_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  MatMap tensor(const TensorInfo& info) {
    return MatMap(params_.data() + info.offset, info.rows, info.cols);
  }
  MatMap tensor(const std::string& name) { return tensor(find_tensor(name)); }

  const TensorInfo& find_tensor(const std::string& name) const {
    for (const TensorInfo& t : tensors_) {
      if (t.name == name) return t;
    }
    throw Error("lm: no tensor named '" + name + "'");
  }

  void zero_gradients() { std::fill(grads_.begin(), grads_.end(), Scalar(0)); }

  bool parameters_finite() const {
    for (Scalar p : params_) {
      if (!std::isfinite(double(p))) return false;
    }
    return true;
  }

  // Copies weights from a model with the same architecture and a vocabulary
  // that is a prefix of this one; the new embedding rows are drawn fresh.
  // This is the mechanism behind fine-tuning with a grown registry.
  void adopt_weights(const LmModel& source, std::uint64_t seed) {
    if (!cfg_.same_architecture(source.cfg_)) {
      throw Error("lm: cannot adopt weights across different architectures");
    }
    if (source.cfg_.vocab_size > cfg_.vocab_size) {
      throw Error("lm: vocabulary may only grow");
    }
    init_random_weights(seed);  // covers the new rows deterministically
    for (const TensorInfo& t : tensors_) {
      const TensorInfo& s = source.find_tensor(t.name);
      MatMap dst(params_.data() + t.offset, t.rows, t.cols);
      ConstMatMap src(source.params_.data() + s.offset, s.rows, s.cols);
      dst.topRows(s.rows) = src;
    }
  }

  // Forward pass over B sequences of uniform length T (flat, row-major).
  // Returns (B*T) x V logits; position p only sees tokens at positions <= p.
  const Matrix& forward(const std::vector<TokenId>& tokens, std::size_t B, std::size_t T,
                        std::mt19937_64* dropout_rng = nullptr) {
    if (B == 0 || T == 0) throw Error("lm: empty batch");
    if (T > cfg_.context_length) {
      throw Error("lm: sequence length " + std::to_string(T) + " exceeds context " +
                  std::to_string(cfg_.context_length));
    }
    if (tokens.size() != B * T) throw Error("lm: token buffer has wrong size");
    for (TokenId t : tokens) {
      if (t >= cfg_.vocab_size) throw Error("lm: token id out of vocabulary");
    }
    B_ = B;
    T_ = T;
    tokens_ = tokens;
    const std::size_t BT = B * T;
    const std::size_t d = cfg_.d_model;
    const std::size_t H = cfg_.n_heads;
    const std::size_t hd = d / H;
    const Scalar att_scale = Scalar(1.0 / std::sqrt(double(hd)));

    ConstMatMap wte(params_.data() + off_wte_, cfg_.vocab_size, d);
    ConstMatMap wpe(params_.data() + off_wpe_, cfg_.context_length, d);

    acts_.resize(cfg_.n_layers);
    x0_.resize(BT, d);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        x0_.row(b * T + t) = wte.row(tokens[b * T + t]) + wpe.row(t);
      }
    }
    apply_dropout(x0_, emb_drop_, dropout_rng);

    Matrix* x = &x0_;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      LayerCache& c = acts_[l];
      c.res_in = *x;

      layernorm_forward(c.res_in, param(l, "ln1_g"), param(l, "ln1_b"), c.ln1_out, c.ln1_xhat,
                        c.ln1_rstd);
      c.qkv.resize(BT, 3 * d);
      c.qkv.noalias() = c.ln1_out * weight(l, "w_qkv");
      c.qkv.rowwise() += bias_row(l, "b_qkv");

      c.att.resize(B * H * T, T);
      c.atty.resize(BT, d);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          auto q = c.qkv.block(b * T, h * hd, T, hd);
          auto k = c.qkv.block(b * T, d + h * hd, T, hd);
          auto v = c.qkv.block(b * T, 2 * d + h * hd, T, hd);
          auto p = c.att.block((b * H + h) * T, 0, T, T);
          p.noalias() = q * k.transpose() * att_scale;
          causal_softmax_rows(p);
          c.atty.block(b * T, h * hd, T, hd).noalias() = p * v;
        }
      }

      c.attn_proj.resize(BT, d);
      c.attn_proj.noalias() = c.atty * weight(l, "w_proj");
      c.attn_proj.rowwise() += bias_row(l, "b_proj");
      apply_dropout(c.attn_proj, c.proj_drop, dropout_rng);

      c.res_mid = c.res_in + c.attn_proj;

      layernorm_forward(c.res_mid, param(l, "ln2_g"), param(l, "ln2_b"), c.ln2_out, c.ln2_xhat,
                        c.ln2_rstd);
      c.fc1.resize(BT, cfg_.d_ff);
      c.fc1.noalias() = c.ln2_out * weight(l, "w_fc1");
      c.fc1.rowwise() += bias_row(l, "b_fc1");
      c.gelu = c.fc1.unaryExpr([](Scalar v) { return Scalar(detail::gelu_scalar(double(v))); });

      c.fc2.resize(BT, d);
      c.fc2.noalias() = c.gelu * weight(l, "w_fc2");
      c.fc2.rowwise() += bias_row(l, "b_fc2");
      apply_dropout(c.fc2, c.fc2_drop, dropout_rng);

      c.res_out = c.res_mid + c.fc2;
      x = &c.res_out;
    }

    layernorm_forward(*x, param_final("lnf_g"), param_final("lnf_b"), xf_, lnf_xhat_, lnf_rstd_);
    logits_.resize(BT, cfg_.vocab_size);
    logits_.noalias() = xf_ * wte.transpose();
    return logits_;
  }

  // Mean cross-entropy over unmasked target positions, and (optionally) the
  // matching dlogits for the backward pass.
  static double masked_cross_entropy(const Matrix& logits, const std::vector<TokenId>& targets,
                                     const std::vector<std::uint8_t>& mask,
                                     Matrix* dlogits = nullptr) {
    if (std::size_t(logits.rows()) != targets.size() || targets.size() != mask.size()) {
      throw Error("loss: shape mismatch between logits, targets and mask");
    }
    std::size_t n_active = 0;
    for (std::uint8_t m : mask) n_active += (m != 0);
    if (n_active == 0) throw Error("loss: every position is masked out");

    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    double total = 0.0;
    const double inv_n = 1.0 / double(n_active);
    ArrayX probs;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      if (!mask[std::size_t(i)]) continue;
      ArrayX row = logits.row(i).transpose().array().template cast<Scalar>();
      Scalar mx = row.maxCoeff();
      probs = (row - mx).exp();
      Scalar sum = probs.sum();
      total += -std::log(double(probs[targets[std::size_t(i)]]) / double(sum));
      if (dlogits) {
        probs /= sum;
        dlogits->row(i) = (probs * Scalar(inv_n)).matrix().transpose();
        (*dlogits)(i, targets[std::size_t(i)]) -= Scalar(inv_n);
      }
    }
    return total * inv_n;
  }

  // Full training step math: forward + loss + parameter gradients.
  // Gradients accumulate into gradients(); call zero_gradients() first.
  double loss_and_gradients(const std::vector<TokenId>& inputs, std::size_t B, std::size_t T,
                            const std::vector<TokenId>& targets,
                            const std::vector<std::uint8_t>& mask,
                            std::mt19937_64* dropout_rng = nullptr) {
    const Matrix& logits = forward(inputs, B, T, dropout_rng);
    Matrix dlogits;
    double loss = masked_cross_entropy(logits, targets, mask, &dlogits);
    backward(dlogits);
    return loss;
  }

  double loss_only(const std::vector<TokenId>& inputs, std::size_t B, std::size_t T,
                   const std::vector<TokenId>& targets, const std::vector<std::uint8_t>& mask) {
    return masked_cross_entropy(forward(inputs, B, T), targets, mask, nullptr);
  }

 private:
  struct LayerCache {
    Matrix res_in, ln1_out, ln1_xhat, qkv, att, atty, attn_proj, res_mid;
    Matrix ln2_out, ln2_xhat, fc1, gelu, fc2, res_out;
    ArrayX ln1_rstd, ln2_rstd;
    Matrix proj_drop, fc2_drop;
  };

  void build_layout() {
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    std::size_t cursor = 0;
    auto put = [&](const std::string& name, std::size_t rows, std::size_t cols) {
      tensors_.push_back({name, cursor, rows, cols});
      cursor += rows * cols;
    };
    put("wte", cfg_.vocab_size, d);
    put("wpe", cfg_.context_length, d);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      put(p + "ln1_g", 1, d);
      put(p + "ln1_b", 1, d);
      put(p + "w_qkv", d, 3 * d);
      put(p + "b_qkv", 1, 3 * d);
      put(p + "w_proj", d, d);
      put(p + "b_proj", 1, d);
      put(p + "ln2_g", 1, d);
      put(p + "ln2_b", 1, d);
      put(p + "w_fc1", d, f);
      put(p + "b_fc1", 1, f);
      put(p + "w_fc2", f, d);
      put(p + "b_fc2", 1, d);
    }
    put("lnf_g", 1, d);
    put("lnf_b", 1, d);
    total_params_ = cursor;
    off_wte_ = tensors_[0].offset;
    off_wpe_ = tensors_[1].offset;
    if (total_params_ != cfg_.parameter_count()) {
      throw Error("lm: parameter layout does not match the closed-form count");
    }
  }

  void init_random_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    const double resid_scale = 1.0 / std::sqrt(2.0 * double(cfg_.n_layers));
    for (const TensorInfo& t : tensors_) {
      MatMap view(params_.data() + t.offset, t.rows, t.cols);
      std::string leaf = t.name.substr(t.name.rfind('.') + 1);
      bool is_gain = leaf.ends_with("_g");
      bool is_bias = leaf.starts_with("b_") || leaf.ends_with("_b");
      bool is_resid = leaf == "w_proj" || leaf == "w_fc2";
      if (is_gain) {
        view.setConstant(Scalar(1));
      } else if (is_bias) {
        view.setZero();
      } else {
        double scale = is_resid ? resid_scale : 1.0;
        for (Eigen::Index i = 0; i < view.rows(); ++i) {
          for (Eigen::Index j = 0; j < view.cols(); ++j) {
            view(i, j) = Scalar(normal(rng) * scale);
          }
        }
      }
    }
  }

  ConstMatMap weight(std::size_t layer, const std::string& name) const {
    const TensorInfo& t = find_tensor("layer" + std::to_string(layer) + "." + name);
    return ConstMatMap(params_.data() + t.offset, t.rows, t.cols);
  }
  MatMap weight_grad(std::size_t layer, const std::string& name) {
    const TensorInfo& t = find_tensor("layer" + std::to_string(layer) + "." + name);
    return MatMap(grads_.data() + t.offset, t.rows, t.cols);
  }
  ConstMatMap param(std::size_t layer, const std::string& name) const {
    return weight(layer, name);
  }
  ConstMatMap param_final(const std::string& name) const {
    const TensorInfo& t = find_tensor(name);
    return ConstMatMap(params_.data() + t.offset, t.rows, t.cols);
  }
  MatMap grad_final(const std::string& name) {
    const TensorInfo& t = find_tensor(name);
    return MatMap(grads_.data() + t.offset, t.rows, t.cols);
  }
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> bias_row(std::size_t layer,
                                                    const std::string& name) const {
    auto v = weight(layer, name);
    return v.row(0);
  }

  void layernorm_forward(const Matrix& x, ConstMatMap gain, ConstMatMap bias, Matrix& out,
                         Matrix& xhat, ArrayX& rstd) const {
    const Scalar eps = Scalar(1e-5);
    out.resize(x.rows(), x.cols());
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows());
    const Scalar inv_d = Scalar(1) / Scalar(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Scalar mean = x.row(i).sum() * inv_d;
      auto centered = (x.row(i).array() - mean);
      Scalar var = centered.square().sum() * inv_d;
      Scalar r = Scalar(1) / std::sqrt(var + eps);
      rstd[i] = r;
      xhat.row(i) = (centered * r).matrix();
      out.row(i) = (xhat.row(i).array() * gain.row(0).array() + bias.row(0).array()).matrix();
    }
  }

  void layernorm_backward(const Matrix& dout, const Matrix& xhat, const ArrayX& rstd,
                          ConstMatMap gain, MatMap dgain, MatMap dbias, Matrix& dx) const {
    dx.resize(dout.rows(), dout.cols());
    const Scalar inv_d = Scalar(1) / Scalar(dout.cols());
    for (Eigen::Index i = 0; i < dout.rows(); ++i) {
      auto dy = dout.row(i).array();
      auto xh = xhat.row(i).array();
      dgain.row(0).array() += (dy * xh);
      dbias.row(0).array() += dy;
      auto dxhat = dy * gain.row(0).array();
      Scalar m1 = dxhat.sum() * inv_d;
      Scalar m2 = (dxhat * xh).sum() * inv_d;
      dx.row(i) = ((dxhat - m1 - xh * m2) * rstd[i]).matrix();
    }
  }

  void causal_softmax_rows(Eigen::Block<Matrix> p) const {
    const Eigen::Index T = p.rows();
    for (Eigen::Index i = 0; i < T; ++i) {
      auto row = p.row(i).segment(0, i + 1);
      Scalar mx = row.maxCoeff();
      row = (row.array() - mx).exp().matrix();
      row /= row.sum();
      if (i + 1 < T) p.row(i).segment(i + 1, T - i - 1).setZero();
    }
  }

  void apply_dropout(Matrix& x, Matrix& keep_mask, std::mt19937_64* rng) {
    if (!rng || cfg_.dropout <= 0.0) {
      keep_mask.resize(0, 0);
      return;
    }
    const Scalar keep_scale = Scalar(1.0 / (1.0 - cfg_.dropout));
    std::bernoulli_distribution drop(cfg_.dropout);
    keep_mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        keep_mask(i, j) = drop(*rng) ? Scalar(0) : keep_scale;
      }
    }
    x.array() *= keep_mask.array();
  }

  static void backprop_dropout(Matrix& dx, const Matrix& keep_mask) {
    if (keep_mask.size() == 0) return;
    dx.array() *= keep_mask.array();
  }

  void backward(const Matrix& dlogits) {
    const std::size_t d = cfg_.d_model;
    const std::size_t H = cfg_.n_heads;
    const std::size_t hd = d / H;
    const std::size_t BT = B_ * T_;
    const Scalar att_scale = Scalar(1.0 / std::sqrt(double(hd)));

    ConstMatMap wte(params_.data() + off_wte_, cfg_.vocab_size, d);
    MatMap dwte(grads_.data() + off_wte_, cfg_.vocab_size, d);
    MatMap dwpe(grads_.data() + off_wpe_, cfg_.context_length, d);

    // tied output projection: logits = xf * wte^T
    Matrix dxf(BT, d);
    dxf.noalias() = dlogits * wte;
    dwte.noalias() += dlogits.transpose() * xf_;

    Matrix dx;
    layernorm_backward(dxf, lnf_xhat_, lnf_rstd_, param_final("lnf_g"), grad_final("lnf_g"),
                       grad_final("lnf_b"), dx);

    Matrix datty(BT, d), dqkv, dln, dmid, dfc;
    for (std::size_t l = cfg_.n_layers; l-- > 0;) {
      LayerCache& c = acts_[l];

      // res_out = res_mid + fc2(gelu(fc1(ln2(res_mid))))
      Matrix dfc2 = dx;
      backprop_dropout(dfc2, c.fc2_drop);
      weight_grad(l, "b_fc2").row(0) += dfc2.colwise().sum();
      weight_grad(l, "w_fc2").noalias() += c.gelu.transpose() * dfc2;
      Matrix dgelu(BT, cfg_.d_ff);
      dgelu.noalias() = dfc2 * weight(l, "w_fc2").transpose();
      Matrix dfc1 = dgelu.binaryExpr(c.fc1, [](Scalar g, Scalar x) {
        return Scalar(double(g) * detail::gelu_grad_scalar(double(x)));
      });
      weight_grad(l, "b_fc1").row(0) += dfc1.colwise().sum();
      weight_grad(l, "w_fc1").noalias() += c.ln2_out.transpose() * dfc1;
      dln.resize(BT, d);
      dln.noalias() = dfc1 * weight(l, "w_fc1").transpose();
      layernorm_backward(dln, c.ln2_xhat, c.ln2_rstd, param(l, "ln2_g"), weight_grad(l, "ln2_g"),
                         weight_grad(l, "ln2_b"), dmid);
      dmid += dx;  // residual branch

      // res_mid = res_in + proj(attention(ln1(res_in)))
      Matrix dproj = dmid;
      backprop_dropout(dproj, c.proj_drop);
      weight_grad(l, "b_proj").row(0) += dproj.colwise().sum();
      weight_grad(l, "w_proj").noalias() += c.atty.transpose() * dproj;
      datty.noalias() = dproj * weight(l, "w_proj").transpose();

      dqkv.setZero(BT, 3 * d);
      for (std::size_t b = 0; b < B_; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          auto q = c.qkv.block(b * T_, h * hd, T_, hd);
          auto k = c.qkv.block(b * T_, d + h * hd, T_, hd);
          auto v = c.qkv.block(b * T_, 2 * d + h * hd, T_, hd);
          auto p = c.att.block((b * H + h) * T_, 0, T_, T_);
          auto dO = datty.block(b * T_, h * hd, T_, hd);

          Matrix dP(T_, T_);
          dP.noalias() = dO * v.transpose();
          dqkv.block(b * T_, 2 * d + h * hd, T_, hd).noalias() += p.transpose() * dO;

          // softmax backward; masked entries have p == 0, so dS vanishes there
          Matrix dS(T_, T_);
          for (Eigen::Index i = 0; i < Eigen::Index(T_); ++i) {
            Scalar dot = (dP.row(i).array() * p.row(i).array()).sum();
            dS.row(i) = (p.row(i).array() * (dP.row(i).array() - dot)).matrix();
          }
          dqkv.block(b * T_, h * hd, T_, hd).noalias() += dS * k * att_scale;
          dqkv.block(b * T_, d + h * hd, T_, hd).noalias() += dS.transpose() * q * att_scale;
        }
      }

      weight_grad(l, "b_qkv").row(0) += dqkv.colwise().sum();
      weight_grad(l, "w_qkv").noalias() += c.ln1_out.transpose() * dqkv;
      dln.noalias() = dqkv * weight(l, "w_qkv").transpose();
      layernorm_backward(dln, c.ln1_xhat, c.ln1_rstd, param(l, "ln1_g"), weight_grad(l, "ln1_g"),
                         weight_grad(l, "ln1_b"), dx);
      dx += dmid;  // residual branch
    }

    backprop_dropout(dx, emb_drop_);
    for (std::size_t b = 0; b < B_; ++b) {
      for (std::size_t t = 0; t < T_; ++t) {
        dwte.row(tokens_[b * T_ + t]) += dx.row(b * T_ + t);
        dwpe.row(t) += dx.row(b * T_ + t);
      }
    }
  }

  LmConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::size_t total_params_ = 0;
  std::size_t off_wte_ = 0, off_wpe_ = 0;
  std::vector<Scalar> params_, grads_;

  // forward caches
  std::size_t B_ = 0, T_ = 0;
  std::vector<TokenId> tokens_;
  Matrix x0_, xf_, lnf_xhat_, logits_;
  Matrix emb_drop_;
  ArrayX lnf_rstd_;
  std::vector<LayerCache> acts_;
};

// ---------------------------------------------------------------------------
// Batching

template <class Scalar>
struct LmBatch {
  std::vector<TokenId> inputs;   // B*T
  std::vector<TokenId> targets;  // B*T, shifted by one
  std::vector<std::uint8_t> mask;
  std::size_t B = 0, T = 0;
};

// Pads the selected sequences to a common length on the requested side and
// slices them into next-token (input, target) pairs. Batch filler introduced
// here is never a target.
template <class Scalar>
LmBatch<Scalar> assemble_batch(const std::vector<TrainingSequence>& sequences,
                               const std::vector<std::size_t>& index,
                               PaddingStrategy batch_padding) {
  if (index.empty()) throw Error("lm: empty batch");
  std::size_t max_len = 0;
  for (std::size_t i : index) max_len = std::max(max_len, sequences[i].ids.size());
  if (max_len < 2) throw Error("lm: sequences must have at least two tokens");

  LmBatch<Scalar> batch;
  batch.B = index.size();
  batch.T = max_len - 1;
  batch.inputs.resize(batch.B * batch.T, TokenRegistry::kPad);
  batch.targets.resize(batch.B * batch.T, TokenRegistry::kPad);
  batch.mask.assign(batch.B * batch.T, 0);

  for (std::size_t b = 0; b < index.size(); ++b) {
    const TrainingSequence& seq = sequences[index[b]];
    std::size_t len = seq.ids.size();
    std::size_t shift = 0;
    if (batch_padding == PaddingStrategy::Left && len < max_len) shift = max_len - len;
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t pos = t + shift;
      if (pos < batch.T) batch.inputs[b * batch.T + pos] = seq.ids[t];
      if (pos >= 1) {
        batch.targets[b * batch.T + pos - 1] = seq.ids[t];
        batch.mask[b * batch.T + pos - 1] = seq.target_mask[t];
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.05;  // linear warmup over the first steps
  std::uint64_t seed = 0;
  PaddingStrategy batch_padding = PaddingStrategy::Right;
};

struct EpochReport {
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::size_t tokens = 0;  // input tokens processed
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  bool warm_start = false;

  double final_loss() const {
    if (epochs.empty()) throw Error("train report is empty");
    return epochs.back().mean_loss;
  }

  std::string to_csv() const {
    std::string out = "epoch,loss,seconds,tokens\n";
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      char line[128];
      std::snprintf(line, sizeof line, "%zu,%.6f,%.4f,%zu\n", i + 1, epochs[i].mean_loss,
                    epochs[i].seconds, epochs[i].tokens);
      out += line;
    }
    return out;
  }
};

template <class Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n_params, const TrainOptions& opts, std::size_t total_steps)
      : opts_(opts),
        warmup_steps_(std::max<std::size_t>(1, std::size_t(opts.warmup_fraction *
                                                           double(total_steps)))) {
    m_.assign(n_params, Scalar(0));
    v_.assign(n_params, Scalar(0));
  }

  double current_lr() const {
    double warm = step_ < warmup_steps_ ? double(step_ + 1) / double(warmup_steps_) : 1.0;
    return opts_.learning_rate * warm;
  }

  void step(std::vector<Scalar>& params, const std::vector<Scalar>& grads) {
    const double lr = current_lr();
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(step_ + 1));
    const double c2 = 1.0 - std::pow(b2, double(step_ + 1));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double g = double(grads[i]);
      m_[i] = Scalar(b1 * double(m_[i]) + (1.0 - b1) * g);
      v_[i] = Scalar(b2 * double(v_[i]) + (1.0 - b2) * g * g);
      double mhat = double(m_[i]) / c1;
      double vhat = double(v_[i]) / c2;
      params[i] -= Scalar(lr * mhat / (std::sqrt(vhat) + opts_.adam_eps));
    }
    ++step_;
  }

 private:
  TrainOptions opts_;
  std::size_t warmup_steps_;
  std::size_t step_ = 0;
  std::vector<Scalar> m_, v_;
};

// Minibatch training. `provider(epoch)` supplies that epoch's sequences (the
// hook for per-epoch feature-order permutation); shuffling and batching are
// deterministic for a fixed seed and single-threaded execution.
template <class Scalar, class Provider>
TrainReport train(LmModel<Scalar>& model, Provider&& provider, const TrainOptions& opts) {
  if (opts.epochs == 0) return {};
  if (opts.batch_size == 0) throw Error("train: batch size must be positive");

  const std::vector<TrainingSequence>& probe = provider(0);
  if (probe.empty()) throw Error("train: no training sequences");
  const std::size_t n = probe.size();
  const std::size_t batches_per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
  const std::size_t total_steps = batches_per_epoch * opts.epochs;

  AdamOptimizer<Scalar> adam(model.parameter_count(), opts, total_steps);
  TrainReport report;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    const std::vector<TrainingSequence>& sequences = provider(epoch);
    if (sequences.size() != n) throw Error("train: provider changed the dataset size");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(opts.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(mix_seed(opts.seed ^ 0x5eed, epoch));
    std::mt19937_64* drop = model.config().dropout > 0.0 ? &dropout_rng : nullptr;

    double loss_sum = 0.0;
    std::size_t active_sum = 0;
    std::size_t token_sum = 0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      std::size_t end = std::min(n, start + opts.batch_size);
      std::vector<std::size_t> index(order.begin() + long(start), order.begin() + long(end));
      LmBatch<Scalar> batch = assemble_batch<Scalar>(sequences, index, opts.batch_padding);

      model.zero_gradients();
      double loss = model.loss_and_gradients(batch.inputs, batch.B, batch.T, batch.targets,
                                             batch.mask, drop);
      if (!std::isfinite(loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                    ", batch " + std::to_string(start / opts.batch_size) + " (lr " +
                    std::to_string(adam.current_lr()) + ")");
      }
      adam.step(model.parameters(), model.gradients());

      std::size_t active = 0;
      for (std::uint8_t m : batch.mask) active += (m != 0);
      loss_sum += loss * double(active);
      active_sum += active;
      token_sum += batch.B * batch.T;
    }

    auto t1 = std::chrono::steady_clock::now();
    EpochReport er;
    er.mean_loss = active_sum ? loss_sum / double(active_sum) : 0.0;
    er.seconds = std::chrono::duration<double>(t1 - t0).count();
    er.tokens = token_sum;
    report.epochs.push_back(er);
  }
  return report;
}

template <class Scalar>
TrainReport train_fixed(LmModel<Scalar>& model, const std::vector<TrainingSequence>& sequences,
                        const TrainOptions& opts) {
  return train(model, [&](std::size_t) -> const std::vector<TrainingSequence>& {
    return sequences;
  }, opts);
}

// Grows the vocabulary in place (fine-tuning with an extended registry).
template <class Scalar>
LmModel<Scalar> with_extended_vocab(const LmModel<Scalar>& model, std::size_t new_vocab,
                                    std::uint64_t seed) {
  if (new_vocab < model.config().vocab_size) {
    throw Error("lm: vocabulary may only grow (had " +
                std::to_string(model.config().vocab_size) + ", asked for " +
                std::to_string(new_vocab) + ")");
  }
  LmConfig cfg = model.config();
  cfg.vocab_size = new_vocab;
  LmModel<Scalar> grown(cfg);
  grown.adopt_weights(model, seed);
  return grown;
}

}  // namespace tabsynth
