#include <algorithm>
#include <cmath>
#include <numbers>

#include "kopa/binary_io.hpp"
#include "kopa/error.hpp"
#include "kopa/toylm.hpp"

namespace kopa {

std::size_t ParamStore::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  tensors_.push_back({std::move(name), std::move(shape), data_.size(), n});
  data_.resize(data_.size() + n, 0.0);
  return tensors_.size() - 1;
}

namespace {

constexpr double kLnEps = 1e-5;

// out = A * W, W is (A.cols x n) row-major.
Matrix matmul(const Matrix& a, std::span<const double> w, std::size_t n) {
  Matrix out(a.rows, n);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * n;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double x = a.data[i * a.cols + k];
      if (x == 0.0) continue;
      const double* wr = w.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * wr[j];
    }
  }
  return out;
}

// dW += A^T dY
void accumulate_weight_grad(const Matrix& a, const Matrix& dy, std::span<double> dw) {
  const std::size_t n = dy.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* d = dy.data.data() + i * n;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double x = a.data[i * a.cols + k];
      if (x == 0.0) continue;
      double* g = dw.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) g[j] += x * d[j];
    }
  }
}

// dA = dY W^T, W is (in x dY.cols).
Matrix input_grad(const Matrix& dy, std::span<const double> w, std::size_t in) {
  Matrix out(dy.rows, in);
  const std::size_t n = dy.cols;
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const double* d = dy.data.data() + i * n;
    for (std::size_t k = 0; k < in; ++k) {
      const double* wr = w.data() + k * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += d[j] * wr[j];
      out.data[i * in + k] = s;
    }
  }
  return out;
}

void add_bias(Matrix& m, std::span<const double> b) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m.data[i * m.cols + j] += b[j];
  }
}

void accumulate_bias_grad(const Matrix& dy, std::span<double> db) {
  for (std::size_t i = 0; i < dy.rows; ++i) {
    for (std::size_t j = 0; j < dy.cols; ++j) db[j] += dy.data[i * dy.cols + j];
  }
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

Matrix layer_norm(const Matrix& x, std::span<const double> g, std::span<const double> b, NormCache& c) {
  const std::size_t d = x.cols;
  Matrix y(x.rows, d);
  c.xhat = Matrix(x.rows, d);
  c.rstd.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= double(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= double(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    c.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      c.xhat.data[i * d + j] = xh;
      y.data[i * d + j] = g[j] * xh + b[j];
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, std::span<const double> g, const NormCache& c,
                           std::span<double> dg, std::span<double> db) {
  const std::size_t d = dy.cols;
  Matrix dx(dy.rows, d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double sum = 0.0, sum_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double gy = dy.data[i * d + j];
      const double xh = c.xhat.data[i * d + j];
      dg[j] += gy * xh;
      db[j] += gy;
      dxhat[j] = gy * g[j];
      sum += dxhat[j];
      sum_xh += dxhat[j] * xh;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = c.xhat.data[i * d + j];
      dx.data[i * d + j] = c.rstd[i] / double(d) * (double(d) * dxhat[j] - sum - xh * sum_xh);
    }
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void add_into(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace

struct ToyLM::Cache {
  struct LayerCache {
    NormCache n1, n2;
    Matrix a, q, k, v, o, b, u, g;
    std::vector<Matrix> probs;  // per head, T x T (lower triangle used)
  };
  std::size_t t = 0;
  std::vector<LayerCache> layers;
  NormCache nf;
  Matrix f;  // final normalized hidden states
};

ToyLM::ToyLM(const ToyLMConfig& config, Tokenizer tokenizer, Rng& rng)
    : config_(config), tokenizer_(std::move(tokenizer)) {
  if (config_.d_model == 0 || config_.n_heads == 0 || config_.d_model % config_.n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (config_.context_len == 0) throw ConfigError("context length must be positive");
  define_params();
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& t : params_.tensors()) {
    auto v = std::span<double>(params_.data()).subspan(t.offset, t.size);
    const bool gain = t.name.ends_with("_g");
    const bool bias = t.name.ends_with("_b") || t.name.ends_with(".b1") || t.name.ends_with(".b2") ||
                      t.name == "b_out";
    for (auto& x : v) x = gain ? 1.0 : bias ? 0.0 : normal(rng);
  }
}

void ToyLM::define_params() {
  const std::size_t d = config_.d_model, h = config_.d_model * config_.mlp_mult, vsz = vocab_size();
  tok_emb_ = params_.add("tok_emb", {vsz, d});
  pos_emb_ = params_.add("pos_emb", {config_.context_len, d});
  layers_.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer{};
    layer.ln1_g = params_.add(p + "ln1_g", {d});
    layer.ln1_b = params_.add(p + "ln1_b", {d});
    layer.wq = params_.add(p + "wq", {d, d});
    layer.wk = params_.add(p + "wk", {d, d});
    layer.wv = params_.add(p + "wv", {d, d});
    layer.wo = params_.add(p + "wo", {d, d});
    layer.ln2_g = params_.add(p + "ln2_g", {d});
    layer.ln2_b = params_.add(p + "ln2_b", {d});
    layer.w1 = params_.add(p + "w1", {d, h});
    layer.b1 = params_.add(p + "b1", {h});
    layer.w2 = params_.add(p + "w2", {h, d});
    layer.b2 = params_.add(p + "b2", {d});
    layers_.push_back(layer);
  }
  lnf_g_ = params_.add("lnf_g", {d});
  lnf_b_ = params_.add("lnf_b", {d});
  w_out_ = params_.add("w_out", {d, vsz});
  b_out_ = params_.add("b_out", {vsz});
}

void ToyLM::forward_impl(std::span<const Slot> seq, const VirtualVectors& virtual_vectors,
                         Cache& c) const {
  const std::size_t t = seq.size(), d = config_.d_model, nh = config_.n_heads, dh = d / nh;
  if (t == 0) throw DataError("empty sequence");
  if (t > config_.context_len) {
    throw DataError("sequence length " + std::to_string(t) + " exceeds context " +
                    std::to_string(config_.context_len));
  }
  c.t = t;
  Matrix x(t, d);
  auto tok = params_.view(tok_emb_);
  auto pos = params_.view(pos_emb_);
  for (std::size_t i = 0; i < t; ++i) {
    auto xr = x.row(i);
    if (seq[i].is_virtual()) {
      const auto& v = virtual_vectors.at(static_cast<std::size_t>(seq[i].virtual_index));
      if (v.size() != d) throw DataError("virtual token width does not match d_model");
      for (std::size_t j = 0; j < d; ++j) xr[j] = v[j];
    } else {
      if (seq[i].token < 0 || std::size_t(seq[i].token) >= vocab_size()) throw DataError("token id out of range");
      for (std::size_t j = 0; j < d; ++j) xr[j] = tok[std::size_t(seq[i].token) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) xr[j] += pos[i * d + j];
  }

  const double scale = 1.0 / std::sqrt(double(dh));
  c.layers.assign(layers_.size(), {});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    auto& lc = c.layers[l];
    lc.a = layer_norm(x, params_.view(L.ln1_g), params_.view(L.ln1_b), lc.n1);
    lc.q = matmul(lc.a, params_.view(L.wq), d);
    lc.k = matmul(lc.a, params_.view(L.wk), d);
    lc.v = matmul(lc.a, params_.view(L.wv), d);
    lc.o = Matrix(t, d);
    lc.probs.assign(nh, Matrix(t, t));
    for (std::size_t h = 0; h < nh; ++h) {
      Matrix& p = lc.probs[h];
      for (std::size_t i = 0; i < t; ++i) {
        double peak = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += lc.q.data[i * d + h * dh + e] * lc.k.data[j * d + h * dh + e];
          s *= scale;
          p.data[i * t + j] = s;
          peak = std::max(peak, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (p.data[i * t + j] = std::exp(p.data[i * t + j] - peak));
        for (std::size_t j = 0; j <= i; ++j) p.data[i * t + j] /= z;
        for (std::size_t j = 0; j <= i; ++j) {
          const double w = p.data[i * t + j];
          for (std::size_t e = 0; e < dh; ++e) lc.o.data[i * d + h * dh + e] += w * lc.v.data[j * d + h * dh + e];
        }
      }
    }
    add_into(x, matmul(lc.o, params_.view(L.wo), d));

    lc.b = layer_norm(x, params_.view(L.ln2_g), params_.view(L.ln2_b), lc.n2);
    lc.u = matmul(lc.b, params_.view(L.w1), d * config_.mlp_mult);
    add_bias(lc.u, params_.view(L.b1));
    lc.g = lc.u;
    for (auto& z : lc.g.data) z = gelu(z);
    Matrix m = matmul(lc.g, params_.view(L.w2), d);
    add_bias(m, params_.view(L.b2));
    add_into(x, m);
  }
  c.f = layer_norm(x, params_.view(lnf_g_), params_.view(lnf_b_), c.nf);
}

Matrix ToyLM::forward_rows(std::span<const Slot> seq, const VirtualVectors& virtual_vectors,
                           std::span<const std::size_t> rows) const {
  Cache c;
  forward_impl(seq, virtual_vectors, c);
  const std::size_t d = config_.d_model, vsz = vocab_size();
  Matrix f(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = c.f.row(rows[r]);
    std::copy(src.begin(), src.end(), f.row(r).begin());
  }
  Matrix logits = matmul(f, params_.view(w_out_), vsz);
  add_bias(logits, params_.view(b_out_));
  return logits;
}

Matrix ToyLM::forward(std::span<const Slot> seq, const VirtualVectors& virtual_vectors) const {
  std::vector<std::size_t> rows(seq.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return forward_rows(seq, virtual_vectors, rows);
}

double ToyLM::loss_and_grad(std::span<const Slot> seq, const VirtualVectors& virtual_vectors,
                            const LossRows& loss, std::span<double> grad,
                            VirtualVectors* dvirtual) const {
  if (loss.rows.empty()) throw DataError("loss selects no positions");
  if (grad.size() != params_.size()) throw DataError("gradient buffer size mismatch");
  Cache c;
  forward_impl(seq, virtual_vectors, c);
  const std::size_t t = c.t, d = config_.d_model, nh = config_.n_heads, dh = d / nh,
                    vsz = vocab_size(), hid = d * config_.mlp_mult;
  auto gview = [&](std::size_t tensor) {
    const auto& info = params_.tensors()[tensor];
    return grad.subspan(info.offset, info.size);
  };

  // Output head on the selected rows only.
  Matrix f(loss.rows.size(), d);
  for (std::size_t r = 0; r < loss.rows.size(); ++r) {
    auto src = c.f.row(loss.rows[r]);
    std::copy(src.begin(), src.end(), f.row(r).begin());
  }
  Matrix logits = matmul(f, params_.view(w_out_), vsz);
  add_bias(logits, params_.view(b_out_));
  const double inv_n = 1.0 / double(loss.rows.size());
  double total = 0.0;
  Matrix dlogits(loss.rows.size(), vsz);
  for (std::size_t r = 0; r < loss.rows.size(); ++r) {
    auto lr = logits.row(r);
    const double peak = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (double v : lr) z += std::exp(v - peak);
    const double log_z = peak + std::log(z);
    const auto target = static_cast<std::size_t>(loss.targets[r]);
    total += log_z - lr[target];
    auto dr = dlogits.row(r);
    for (std::size_t j = 0; j < vsz; ++j) dr[j] = std::exp(lr[j] - log_z) * inv_n;
    dr[target] -= inv_n;
  }
  accumulate_weight_grad(f, dlogits, gview(w_out_));
  accumulate_bias_grad(dlogits, gview(b_out_));
  Matrix df_rows = input_grad(dlogits, params_.view(w_out_), d);
  Matrix df(t, d);
  for (std::size_t r = 0; r < loss.rows.size(); ++r) {
    auto dst = df.row(loss.rows[r]);
    auto src = df_rows.row(r);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  Matrix dx = layer_norm_backward(df, params_.view(lnf_g_), c.nf, gview(lnf_g_), gview(lnf_b_));

  const double scale = 1.0 / std::sqrt(double(dh));
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& L = layers_[li];
    auto& lc = c.layers[li];
    // MLP branch
    accumulate_weight_grad(lc.g, dx, gview(L.w2));
    accumulate_bias_grad(dx, gview(L.b2));
    Matrix du = input_grad(dx, params_.view(L.w2), hid);
    for (std::size_t i = 0; i < du.data.size(); ++i) du.data[i] *= gelu_grad(lc.u.data[i]);
    accumulate_weight_grad(lc.b, du, gview(L.w1));
    accumulate_bias_grad(du, gview(L.b1));
    Matrix db = input_grad(du, params_.view(L.w1), d);
    add_into(dx, layer_norm_backward(db, params_.view(L.ln2_g), lc.n2, gview(L.ln2_g), gview(L.ln2_b)));

    // Attention branch
    accumulate_weight_grad(lc.o, dx, gview(L.wo));
    Matrix dout = input_grad(dx, params_.view(L.wo), d);
    Matrix dq(t, d), dk(t, d), dv(t, d);
    std::vector<double> dp(t);
    for (std::size_t h = 0; h < nh; ++h) {
      const Matrix& p = lc.probs[h];
      for (std::size_t i = 0; i < t; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += dout.data[i * d + h * dh + e] * lc.v.data[j * d + h * dh + e];
          dp[j] = s;
          dot += p.data[i * t + j] * s;
          const double w = p.data[i * t + j];
          for (std::size_t e = 0; e < dh; ++e) dv.data[j * d + h * dh + e] += w * dout.data[i * d + h * dh + e];
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = p.data[i * t + j] * (dp[j] - dot) * scale;
          for (std::size_t e = 0; e < dh; ++e) {
            dq.data[i * d + h * dh + e] += ds * lc.k.data[j * d + h * dh + e];
            dk.data[j * d + h * dh + e] += ds * lc.q.data[i * d + h * dh + e];
          }
        }
      }
    }
    accumulate_weight_grad(lc.a, dq, gview(L.wq));
    accumulate_weight_grad(lc.a, dk, gview(L.wk));
    accumulate_weight_grad(lc.a, dv, gview(L.wv));
    Matrix da = input_grad(dq, params_.view(L.wq), d);
    add_into(da, input_grad(dk, params_.view(L.wk), d));
    add_into(da, input_grad(dv, params_.view(L.wv), d));
    add_into(dx, layer_norm_backward(da, params_.view(L.ln1_g), lc.n1, gview(L.ln1_g), gview(L.ln1_b)));
  }

  auto dtok = gview(tok_emb_);
  auto dpos = gview(pos_emb_);
  for (std::size_t i = 0; i < t; ++i) {
    auto g = dx.row(i);
    for (std::size_t j = 0; j < d; ++j) dpos[i * d + j] += g[j];
    if (seq[i].is_virtual()) {
      if (dvirtual) {
        auto& dvv = (*dvirtual)[std::size_t(seq[i].virtual_index)];
        dvv.resize(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) dvv[j] += g[j];
      }
    } else {
      for (std::size_t j = 0; j < d; ++j) dtok[std::size_t(seq[i].token) * d + j] += g[j];
    }
  }
  return total * inv_n;
}

double lm_loss(const Matrix& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  if (targets.size() != logits.rows || mask.size() != logits.rows) {
    throw DataError("targets/mask length must equal the number of logit rows");
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || std::size_t(targets[i]) >= logits.cols) throw DataError("masked position lacks a valid target");
    auto row = logits.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    total += peak + std::log(z) - row[std::size_t(targets[i])];
    ++n;
  }
  if (n == 0) throw DataError("loss mask selects no positions");
  return total / double(n);
}

void ToyLM::save(const std::filesystem::path& path) const {
  io::Writer w(path);
  w.magic("TLM1");
  w.u32(static_cast<std::uint32_t>(config_.d_model));
  w.u32(static_cast<std::uint32_t>(config_.n_layers));
  w.u32(static_cast<std::uint32_t>(config_.n_heads));
  w.u32(static_cast<std::uint32_t>(config_.context_len));
  w.u32(static_cast<std::uint32_t>(config_.mlp_mult));
  w.u32(static_cast<std::uint32_t>(tokenizer_.size()));
  for (const auto& tok : tokenizer_.tokens()) w.string(tok);
  w.u32(static_cast<std::uint32_t>(params_.tensors().size()));
  for (std::size_t i = 0; i < params_.tensors().size(); ++i) {
    const auto& t = params_.tensors()[i];
    w.string(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) w.u32(static_cast<std::uint32_t>(dim));
    w.as_f32(params_.view(i));
  }
  w.close();
}

ToyLM ToyLM::load(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("TLM1");
  ToyLMConfig cfg;
  cfg.d_model = r.u32();
  cfg.n_layers = r.u32();
  cfg.n_heads = r.u32();
  cfg.context_len = r.u32();
  cfg.mlp_mult = r.u32();
  const auto n_tokens = r.u32();
  if (n_tokens > r.remaining()) throw FormatError(r.path() + ": truncated vocabulary");
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(r.string());

  ToyLM lm;
  lm.config_ = cfg;
  lm.tokenizer_ = Tokenizer::from_tokens(std::move(tokens));
  if (cfg.d_model == 0 || cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
    throw FormatError(r.path() + ": invalid model dimensions");
  }
  lm.define_params();
  const auto n_tensors = r.u32();
  if (n_tensors != lm.params_.tensors().size()) {
    throw FormatError(r.path() + ": expected " + std::to_string(lm.params_.tensors().size()) +
                      " tensors, found " + std::to_string(n_tensors));
  }
  for (std::size_t i = 0; i < n_tensors; ++i) {
    const auto& t = lm.params_.tensors()[i];
    auto name = r.string();
    if (name != t.name) throw FormatError(r.path() + ": expected tensor " + t.name + ", found " + name);
    const auto rank = r.u32();
    if (rank != t.shape.size()) throw FormatError(r.path() + ": rank mismatch for " + name);
    for (auto dim : t.shape) {
      if (r.u32() != dim) throw FormatError(r.path() + ": shape mismatch for " + name);
    }
    if (r.remaining() < t.size * sizeof(float)) throw FormatError(r.path() + ": truncated tensor " + name);
    std::vector<float> buf(t.size);
    r.f32s(buf);
    auto dst = lm.params_.view(i);
    std::copy(buf.begin(), buf.end(), dst.begin());
  }
  r.expect_end();
  return lm;
}

}  // namespace kopa
