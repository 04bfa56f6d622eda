#ifndef MODALSURV_DEEPHIT_HPP
#define MODALSURV_DEEPHIT_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "modalsurv/common.hpp"
#include "modalsurv/datamodel.hpp"
#include "modalsurv/survcore.hpp"

namespace modalsurv {

// Probabilities are clamped here before entering a log.
inline constexpr double kProbClamp = 1e-7;

struct TrainConfig {
  double learning_rate = 1e-3;
  int time_bins = 30;
  double dropout = 0.25;
  double l2_projection = 1e-4;
  double alpha_rank = 0.5;
  double sigma_rank = 0.1;
  int max_epochs = 200;
  int patience = 10;
  std::vector<int> hidden_widths{128, 64};
  int embed_dim = 128;
  std::uint64_t seed = 1;
};

// All learnable tensors: per-modality projections into the shared embedding
// space, the shared single-head attention maps, and the FC head ending in K
// logits.
struct ModelParams {
  std::vector<Eigen::MatrixXd> proj_w;  // per modality, E x d_m
  std::vector<Eigen::VectorXd> proj_b;  // E
  Eigen::MatrixXd w_q, w_k, w_v;        // E x E
  std::vector<Eigen::MatrixXd> fc_w;    // hidden layers then output layer (K x last width)
  std::vector<Eigen::VectorXd> fc_b;

  Eigen::Index n_modalities() const { return static_cast<Eigen::Index>(proj_w.size()); }
  Eigen::Index embed_dim() const { return proj_b.empty() ? 0 : proj_b.front().size(); }
  Eigen::Index n_bins() const { return fc_b.empty() ? 0 : fc_b.back().size(); }

  bool all_finite() const {
    bool ok = true;
    for (const auto& w : proj_w) ok = ok && w.allFinite();
    for (const auto& b : proj_b) ok = ok && b.allFinite();
    ok = ok && w_q.allFinite() && w_k.allFinite() && w_v.allFinite();
    for (const auto& w : fc_w) ok = ok && w.allFinite();
    for (const auto& b : fc_b) ok = ok && b.allFinite();
    return ok;
  }
};

// Visits every tensor as a contiguous span, in a fixed order. Used by the
// optimizer, serialization, and the finite-difference tests.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  for (std::size_t m = 0; m < p.proj_w.size(); ++m) {
    fn("proj_w[" + std::to_string(m) + "]", p.proj_w[m].data(), p.proj_w[m].size());
    fn("proj_b[" + std::to_string(m) + "]", p.proj_b[m].data(), p.proj_b[m].size());
  }
  fn("w_q", p.w_q.data(), p.w_q.size());
  fn("w_k", p.w_k.data(), p.w_k.size());
  fn("w_v", p.w_v.data(), p.w_v.size());
  for (std::size_t l = 0; l < p.fc_w.size(); ++l) {
    fn("fc_w[" + std::to_string(l) + "]", p.fc_w[l].data(), p.fc_w[l].size());
    fn("fc_b[" + std::to_string(l) + "]", p.fc_b[l].data(), p.fc_b[l].size());
  }
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  for (const auto& w : p.proj_w) z.proj_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : p.proj_b) z.proj_b.push_back(Eigen::VectorXd::Zero(b.size()));
  z.w_q = Eigen::MatrixXd::Zero(p.w_q.rows(), p.w_q.cols());
  z.w_k = Eigen::MatrixXd::Zero(p.w_k.rows(), p.w_k.cols());
  z.w_v = Eigen::MatrixXd::Zero(p.w_v.rows(), p.w_v.cols());
  for (const auto& w : p.fc_w) z.fc_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : p.fc_b) z.fc_b.push_back(Eigen::VectorXd::Zero(b.size()));
  return z;
}

namespace detail {

inline void fill_uniform(Eigen::MatrixXd& w, double bound, Rng& rng) {
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
  }
}

inline double glorot_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline Eigen::VectorXd stable_softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

}  // namespace detail

// Uniform fan-based initialization, biases zero, fully determined by seed.
inline ModelParams init_params(const std::vector<Eigen::Index>& modality_dims,
                               const TrainConfig& cfg, std::uint64_t seed) {
  if (modality_dims.empty()) throw ValidationError("init_params: no modalities");
  for (Eigen::Index d : modality_dims) {
    if (d < 1) throw ValidationError("init_params: modality dims must be >= 1");
  }
  if (cfg.embed_dim < 1) throw ValidationError("init_params: embed_dim must be >= 1");
  if (cfg.time_bins < 2) throw ValidationError("init_params: time_bins must be >= 2");

  const Eigen::Index e = cfg.embed_dim;
  const auto m_count = static_cast<Eigen::Index>(modality_dims.size());
  Rng rng(seed);

  ModelParams p;
  for (Eigen::Index m = 0; m < m_count; ++m) {
    Eigen::MatrixXd w(e, modality_dims[static_cast<std::size_t>(m)]);
    detail::fill_uniform(w, detail::glorot_bound(w.cols(), w.rows()), rng);
    p.proj_w.push_back(std::move(w));
    p.proj_b.push_back(Eigen::VectorXd::Zero(e));
  }
  p.w_q.resize(e, e);
  p.w_k.resize(e, e);
  p.w_v.resize(e, e);
  detail::fill_uniform(p.w_q, detail::glorot_bound(e, e), rng);
  detail::fill_uniform(p.w_k, detail::glorot_bound(e, e), rng);
  detail::fill_uniform(p.w_v, detail::glorot_bound(e, e), rng);

  Eigen::Index prev = m_count * e;
  for (int width : cfg.hidden_widths) {
    if (width < 1) throw ValidationError("init_params: hidden widths must be >= 1");
    Eigen::MatrixXd w(width, prev);
    detail::fill_uniform(w, detail::glorot_bound(prev, width), rng);
    p.fc_w.push_back(std::move(w));
    p.fc_b.push_back(Eigen::VectorXd::Zero(width));
    prev = width;
  }
  Eigen::MatrixXd w_out(cfg.time_bins, prev);
  detail::fill_uniform(w_out, detail::glorot_bound(prev, cfg.time_bins), rng);
  p.fc_w.push_back(std::move(w_out));
  p.fc_b.push_back(Eigen::VectorXd::Zero(cfg.time_bins));
  return p;
}

// relu(W x + b)
inline Eigen::VectorXd project_modality(const Eigen::VectorXd& x, const Eigen::MatrixXd& w,
                                        const Eigen::VectorXd& b) {
  if (x.size() != w.cols()) {
    throw ValidationError("project_modality: input length " + std::to_string(x.size()) +
                          " does not match projection columns " + std::to_string(w.cols()));
  }
  return ((w * x + b).array().max(0.0)).matrix();
}

// Single-head scaled dot-product attention over the M modality embeddings
// with shared W_Q/W_K/W_V; the attended rows are concatenated.
inline Eigen::VectorXd cross_attention_fuse(const Eigen::MatrixXd& embeddings, const ModelParams& p,
                                            Eigen::MatrixXd* attention_out = nullptr) {
  const Eigen::Index m = embeddings.rows();
  const Eigen::Index e = embeddings.cols();
  if (m < 1) throw ValidationError("cross_attention_fuse: need at least one modality");
  if (e != p.w_q.rows()) throw ValidationError("cross_attention_fuse: embedding width mismatch");

  const Eigen::MatrixXd q = embeddings * p.w_q;
  const Eigen::MatrixXd k = embeddings * p.w_k;
  const Eigen::MatrixXd v = embeddings * p.w_v;
  const Eigen::MatrixXd logits = q * k.transpose() / std::sqrt(static_cast<double>(e));

  Eigen::MatrixXd attn(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    attn.row(r) = detail::stable_softmax(logits.row(r).transpose()).transpose();
  }
  if (attention_out) *attention_out = attn;

  const Eigen::MatrixXd out = attn * v;
  Eigen::VectorXd fused(m * e);
  for (Eigen::Index r = 0; r < m; ++r) fused.segment(r * e, e) = out.row(r).transpose();
  return fused;
}

// Everything the backward pass needs from one sample's forward pass.
struct ForwardCache {
  Eigen::MatrixXd z;        // M x E pre-activation
  Eigen::MatrixXd emb;      // M x E
  Eigen::MatrixXd q, k, v;  // M x E
  Eigen::MatrixXd attn;     // M x M, row-stochastic
  Eigen::VectorXd fused;    // M*E
  std::vector<Eigen::VectorXd> fc_pre;  // hidden pre-activations
  std::vector<Eigen::VectorXd> fc_act;  // hidden activations after relu and dropout
  Eigen::VectorXd logits;
  Eigen::VectorXd pmf;
};

// Per-sample, per-hidden-layer masks with entries in {0, 1/(1-rate)}
// (inverted dropout; the scale is folded into the mask).
using DropoutMasks = std::vector<std::vector<Eigen::VectorXd>>;

inline DropoutMasks draw_dropout_masks(Eigen::Index n_samples, const std::vector<int>& hidden_widths,
                                       double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must be in [0, 1)");
  DropoutMasks masks(static_cast<std::size_t>(n_samples));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& per_sample : masks) {
    per_sample.reserve(hidden_widths.size());
    for (int width : hidden_widths) {
      Eigen::VectorXd mask(width);
      for (int u = 0; u < width; ++u) mask[u] = rng.uniform() < rate ? 0.0 : keep_scale;
      per_sample.push_back(std::move(mask));
    }
  }
  return masks;
}

namespace detail {

inline PmfPrediction forward_cached(const std::vector<Eigen::VectorXd>& inputs,
                                    const ModelParams& p,
                                    const std::vector<Eigen::VectorXd>* masks,
                                    ForwardCache* cache) {
  const Eigen::Index m = p.n_modalities();
  const Eigen::Index e = p.embed_dim();
  if (static_cast<Eigen::Index>(inputs.size()) != m) {
    throw ValidationError("forward: expected " + std::to_string(m) + " modality inputs, got " +
                          std::to_string(inputs.size()));
  }

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  c.z.resize(m, e);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& x = inputs[static_cast<std::size_t>(i)];
    const auto& w = p.proj_w[static_cast<std::size_t>(i)];
    if (x.size() != w.cols()) {
      throw ValidationError("forward: modality " + std::to_string(i) + " input length " +
                            std::to_string(x.size()) + " does not match projection columns " +
                            std::to_string(w.cols()));
    }
    c.z.row(i) = (w * x + p.proj_b[static_cast<std::size_t>(i)]).transpose();
  }
  c.emb = c.z.cwiseMax(0.0);

  c.q = c.emb * p.w_q;
  c.k = c.emb * p.w_k;
  c.v = c.emb * p.w_v;
  const Eigen::MatrixXd att_logits = c.q * c.k.transpose() / std::sqrt(static_cast<double>(e));
  c.attn.resize(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    c.attn.row(r) = stable_softmax(att_logits.row(r).transpose()).transpose();
  }
  const Eigen::MatrixXd att_out = c.attn * c.v;
  c.fused.resize(m * e);
  for (Eigen::Index r = 0; r < m; ++r) c.fused.segment(r * e, e) = att_out.row(r).transpose();

  const std::size_t n_hidden = p.fc_w.size() - 1;
  c.fc_pre.assign(n_hidden, {});
  c.fc_act.assign(n_hidden, {});
  const Eigen::VectorXd* h = &c.fused;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    c.fc_pre[l] = p.fc_w[l] * (*h) + p.fc_b[l];
    c.fc_act[l] = c.fc_pre[l].cwiseMax(0.0);
    if (masks) c.fc_act[l] = c.fc_act[l].cwiseProduct((*masks)[l]);
    h = &c.fc_act[l];
  }
  c.logits = p.fc_w.back() * (*h) + p.fc_b.back();
  c.pmf = stable_softmax(c.logits);
  return PmfPrediction{c.pmf};
}

}  // namespace detail

// Forward pass: project each modality, fuse with cross-attention, run the FC
// head (inverted dropout in training mode only), softmax into a PMF over the
// K time bins. Inference is deterministic; training mode with dropout > 0
// needs an Rng for the masks.
inline PmfPrediction forward(const std::vector<Eigen::VectorXd>& inputs, const ModelParams& p,
                             const TrainConfig& cfg, bool training_mode, Rng* rng = nullptr) {
  if (training_mode && cfg.dropout > 0.0) {
    if (!rng) throw ValidationError("forward: training with dropout needs an rng");
    std::vector<int> widths;
    for (std::size_t l = 0; l + 1 < p.fc_w.size(); ++l) widths.push_back(static_cast<int>(p.fc_b[l].size()));
    DropoutMasks masks = draw_dropout_masks(1, widths, cfg.dropout, *rng);
    return detail::forward_cached(inputs, p, &masks[0], nullptr);
  }
  return detail::forward_cached(inputs, p, nullptr, nullptr);
}

// -log pmf[bin] for events; -log of the strict tail sum_{j>bin} pmf[j] for
// censored patients (a patient censored inside bin b is assumed to survive
// past it). Probabilities are clamped at 1e-7, which also covers censoring in
// the final bin where the strict tail is empty.
inline double nll_loss(const PmfPrediction& pmf, int bin, bool event) {
  validate_pmf(pmf);
  const auto k = static_cast<int>(pmf.probs.size());
  if (bin < 0 || bin >= k) throw ValidationError("nll_loss: bin out of range");
  const double p = event ? pmf.probs[bin] : pmf.probs.tail(k - 1 - bin).sum();
  return -std::log(std::max(p, kProbClamp));
}

// Pairwise concordance penalty: over pairs with events[i] and bins[i] <
// bins[j], mean of exp(-(F_i(b_i) - F_j(b_i)) / sigma) where F is the PMF's
// CDF. Zero when no such pairs exist.
inline double ranking_loss(const std::vector<PmfPrediction>& pmfs, const std::vector<int>& bins,
                           const std::vector<char>& events, double sigma) {
  if (sigma <= 0.0) throw ValidationError("ranking_loss: sigma must be positive");
  const std::size_t n = pmfs.size();
  if (bins.size() != n || events.size() != n) {
    throw ValidationError("ranking_loss: pmfs, bins, events must have equal length");
  }
  if (n == 0) throw ValidationError("ranking_loss: need at least one sample");

  std::vector<Eigen::VectorXd> cdf(n);
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i].resize(pmfs[i].probs.size());
    double acc = 0.0;
    for (Eigen::Index b = 0; b < pmfs[i].probs.size(); ++b) {
      acc += pmfs[i].probs[b];
      cdf[i][b] = acc;
    }
  }

  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (bins[i] >= bins[j]) continue;
      sum += std::exp(-(cdf[i][bins[i]] - cdf[j][bins[i]]) / sigma);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
}

// Full-cohort training batch: per-modality feature matrices aligned with the
// survival labels and their grid bins.
struct SurvivalBatch {
  std::vector<Eigen::MatrixXd> features;  // per modality, n x d_m
  std::vector<double> times;
  std::vector<char> events;
  std::vector<int> bins;

  Eigen::Index size() const { return features.empty() ? 0 : features.front().rows(); }

  std::vector<Eigen::VectorXd> sample(Eigen::Index i) const {
    std::vector<Eigen::VectorXd> x;
    x.reserve(features.size());
    for (const auto& f : features) x.push_back(f.row(i).transpose());
    return x;
  }
};

inline SurvivalBatch make_batch(const std::vector<Eigen::MatrixXd>& features,
                                const std::vector<double>& times, const std::vector<char>& events,
                                const TimeGrid& grid) {
  SurvivalBatch b;
  b.features = features;
  b.times = times;
  b.events = events;
  b.bins.resize(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) b.bins[i] = bin_index(times[i], grid);
  return b;
}

// mean NLL + alpha_rank * ranking loss + l2_projection * sum ||W_m||^2
// (projection weights only, biases excluded). Pass masks to evaluate the
// dropout-regularized training objective; without masks the head runs
// deterministically.
inline double total_loss(const SurvivalBatch& batch, const ModelParams& p, const TrainConfig& cfg,
                         const DropoutMasks* masks = nullptr) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw ValidationError("total_loss: empty batch");

  std::vector<PmfPrediction> pmfs;
  pmfs.reserve(static_cast<std::size_t>(n));
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    PmfPrediction pmf = detail::forward_cached(batch.sample(i), p,
                                               masks ? &(*masks)[static_cast<std::size_t>(i)] : nullptr,
                                               nullptr);
    nll += nll_loss(pmf, batch.bins[static_cast<std::size_t>(i)], batch.events[static_cast<std::size_t>(i)]);
    pmfs.push_back(std::move(pmf));
  }
  double loss = nll / static_cast<double>(n);
  if (cfg.alpha_rank > 0.0) {
    loss += cfg.alpha_rank * ranking_loss(pmfs, batch.bins, batch.events, cfg.sigma_rank);
  }
  if (cfg.l2_projection > 0.0) {
    double sq = 0.0;
    for (const auto& w : p.proj_w) sq += w.squaredNorm();
    loss += cfg.l2_projection * sq;
  }
  return loss;
}

// Exact analytic gradient of total_loss with respect to every tensor,
// by reverse accumulation through the softmax head, the FC stack, the
// attention block, and the projections. With masks given, the same masks are
// used here as in the matching total_loss evaluation.
inline ModelParams gradient(const SurvivalBatch& batch, const ModelParams& p, const TrainConfig& cfg,
                            const DropoutMasks* masks = nullptr, double* loss_out = nullptr) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw ValidationError("gradient: empty batch");
  const Eigen::Index m = p.n_modalities();
  const Eigen::Index e = p.embed_dim();
  const Eigen::Index k = p.n_bins();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<ForwardCache> caches(static_cast<std::size_t>(n));
  double nll_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    detail::forward_cached(batch.sample(i), p, masks ? &(*masks)[idx] : nullptr, &caches[idx]);
    const double pe = batch.events[idx]
                          ? caches[idx].pmf[batch.bins[idx]]
                          : caches[idx].pmf.tail(k - 1 - batch.bins[idx]).sum();
    nll_sum += -std::log(std::max(pe, kProbClamp));
  }

  // dL/dpmf per sample, accumulated from the NLL and ranking terms
  std::vector<Eigen::VectorXd> dpmf(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const int b = batch.bins[idx];
    if (batch.events[idx]) {
      const double pb = caches[idx].pmf[b];
      if (pb > kProbClamp) dpmf[idx][b] -= inv_n / pb;
    } else {
      const double tail = caches[idx].pmf.tail(k - 1 - b).sum();
      if (tail > kProbClamp) {
        for (Eigen::Index j = b + 1; j < k; ++j) dpmf[idx][j] -= inv_n / tail;
      }
    }
  }

  double rank_value = 0.0;
  if (cfg.alpha_rank > 0.0) {
    if (cfg.sigma_rank <= 0.0) throw ValidationError("gradient: sigma_rank must be positive");
    std::vector<Eigen::VectorXd> cdf(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      cdf[idx].resize(k);
      double acc = 0.0;
      for (Eigen::Index b = 0; b < k; ++b) {
        acc += caches[idx].pmf[b];
        cdf[idx][b] = acc;
      }
    }
    std::size_t pairs = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!batch.events[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (batch.bins[static_cast<std::size_t>(i)] < batch.bins[static_cast<std::size_t>(j)]) ++pairs;
      }
    }
    if (pairs > 0) {
      // An exp term's derivative spreads uniformly over the CDF prefix
      // 0..b_i, so accumulate per-sample markers at b_i and suffix-sum once.
      std::vector<Eigen::VectorXd> marker(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(k));
      const double scale = cfg.alpha_rank / (cfg.sigma_rank * static_cast<double>(pairs));
      double sum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        if (!batch.events[ii]) continue;
        const int bi = batch.bins[ii];
        for (Eigen::Index j = 0; j < n; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          if (bi >= batch.bins[jj]) continue;
          const double term = std::exp(-(cdf[ii][bi] - cdf[jj][bi]) / cfg.sigma_rank);
          sum += term;
          marker[ii][bi] -= scale * term;
          marker[jj][bi] += scale * term;
        }
      }
      rank_value = sum / static_cast<double>(pairs);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        double running = 0.0;
        for (Eigen::Index b = k - 1; b >= 0; --b) {
          running += marker[idx][b];
          dpmf[idx][b] += running;
        }
      }
    }
  }

  // reverse pass per sample
  ModelParams grads = zeros_like(p);
  const std::size_t n_hidden = p.fc_w.size() - 1;
  const double sqrt_e = std::sqrt(static_cast<double>(e));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const ForwardCache& c = caches[idx];
    const Eigen::VectorXd& g = dpmf[idx];

    // softmax: dlogits = pmf .* (g - <g, pmf>)
    const double inner = g.dot(c.pmf);
    Eigen::VectorXd dvec = (c.pmf.array() * (g.array() - inner)).matrix();

    const Eigen::VectorXd& h_last = n_hidden == 0 ? c.fused : c.fc_act.back();
    grads.fc_w.back().noalias() += dvec * h_last.transpose();
    grads.fc_b.back() += dvec;
    Eigen::VectorXd dh = p.fc_w.back().transpose() * dvec;

    for (std::size_t l = n_hidden; l-- > 0;) {
      Eigen::VectorXd da = masks ? dh.cwiseProduct((*masks)[idx][l]) : dh;
      Eigen::VectorXd du = da.cwiseProduct((c.fc_pre[l].array() > 0.0).cast<double>().matrix());
      const Eigen::VectorXd& prev = l == 0 ? c.fused : c.fc_act[l - 1];
      grads.fc_w[l].noalias() += du * prev.transpose();
      grads.fc_b[l] += du;
      dh = p.fc_w[l].transpose() * du;
    }

    // attention backward
    Eigen::MatrixXd dout(m, e);
    for (Eigen::Index r = 0; r < m; ++r) dout.row(r) = dh.segment(r * e, e).transpose();
    const Eigen::MatrixXd dattn = dout * c.v.transpose();
    const Eigen::MatrixXd dv = c.attn.transpose() * dout;
    Eigen::MatrixXd dlog(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double row_inner = dattn.row(r).dot(c.attn.row(r));
      dlog.row(r) = (c.attn.row(r).array() * (dattn.row(r).array() - row_inner)).matrix();
    }
    const Eigen::MatrixXd dq = dlog * c.k / sqrt_e;
    const Eigen::MatrixXd dk = dlog.transpose() * c.q / sqrt_e;
    grads.w_q.noalias() += c.emb.transpose() * dq;
    grads.w_k.noalias() += c.emb.transpose() * dk;
    grads.w_v.noalias() += c.emb.transpose() * dv;
    Eigen::MatrixXd demb = dq * p.w_q.transpose();
    demb.noalias() += dk * p.w_k.transpose();
    demb.noalias() += dv * p.w_v.transpose();

    // projections
    const auto inputs = batch.sample(i);
    for (Eigen::Index mm = 0; mm < m; ++mm) {
      const auto mi = static_cast<std::size_t>(mm);
      const Eigen::VectorXd relu_mask = (c.z.row(mm).transpose().array() > 0.0).cast<double>();
      const Eigen::VectorXd dz = demb.row(mm).transpose().cwiseProduct(relu_mask);
      grads.proj_w[mi].noalias() += dz * inputs[mi].transpose();
      grads.proj_b[mi] += dz;
    }
  }

  if (cfg.l2_projection > 0.0) {
    for (std::size_t mm = 0; mm < grads.proj_w.size(); ++mm) {
      grads.proj_w[mm] += 2.0 * cfg.l2_projection * p.proj_w[mm];
    }
  }

  if (loss_out) {
    double sq = 0.0;
    for (const auto& w : p.proj_w) sq += w.squaredNorm();
    *loss_out = nll_sum * inv_n + cfg.alpha_rank * rank_value + cfg.l2_projection * sq;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  ModelParams m;
  ModelParams v;
  long timestep = 0;
};

inline AdamState init_adam(const ModelParams& p) { return {zeros_like(p), zeros_like(p), 0}; }

namespace detail {

template <class Params>
auto tensor_spans(Params& p) {
  using Ptr = decltype(p.w_q.data());
  std::vector<std::pair<Ptr, Eigen::Index>> spans;
  for_each_tensor(p, [&](const std::string&, Ptr data, Eigen::Index sz) { spans.emplace_back(data, sz); });
  return spans;
}

}  // namespace detail

// Standard Adam update, beta1 = 0.9, beta2 = 0.999, eps = 1e-8,
// bias-corrected moments.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  state.timestep += 1;
  const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(state.timestep));
  const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(state.timestep));

  auto ps = detail::tensor_spans(params);
  auto gs = detail::tensor_spans(grads);
  auto ms = detail::tensor_spans(state.m);
  auto vs = detail::tensor_spans(state.v);
  for (std::size_t t = 0; t < ps.size(); ++t) {
    double* p = ps[t].first;
    const double* g = gs[t].first;
    double* m = ms[t].first;
    double* v = vs[t].first;
    for (Eigen::Index i = 0; i < ps[t].second; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / corr1) / (std::sqrt(v[i] / corr2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Risk score used everywhere: negative expected survival time from the
// inference-mode forward pass.
inline std::vector<double> model_risks(const SurvivalBatch& batch, const ModelParams& p,
                                       const TrainConfig& cfg, const TimeGrid& grid) {
  std::vector<double> risks(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const PmfPrediction pmf = forward(batch.sample(i), p, cfg, false);
    risks[static_cast<std::size_t>(i)] = -expected_time(pmf, grid);
  }
  return risks;
}

struct EpochStats {
  double train_loss = 0.0;
  double val_c = 0.0;
};

struct TrainResult {
  ModelParams params;  // checkpoint with the best validation C-index
  std::vector<EpochStats> history;
  double best_val_c = 0.0;
  int best_epoch = 0;  // 1-based
};

// Full-batch epochs with Adam; after each epoch the validation C-index is
// computed and the best parameters are kept. Stops after `patience` epochs
// without improvement or at max_epochs.
inline TrainResult train_fold(const SurvivalBatch& train, const SurvivalBatch& val,
                              const TimeGrid& grid, const TrainConfig& cfg) {
  if (train.size() == 0 || val.size() == 0) {
    throw ValidationError("train_fold: train and validation cohorts must be nonempty");
  }
  if (!has_comparable_pair(val.times, val.events)) {
    throw NumericError("train_fold: validation C-index undefined (no comparable pairs)");
  }

  std::vector<Eigen::Index> dims;
  for (const auto& f : train.features) dims.push_back(f.cols());
  ModelParams params = init_params(dims, cfg, cfg.seed);
  AdamState adam = init_adam(params);
  Rng mask_rng(combine_seeds(cfg.seed, 0x6d61736bULL));

  TrainResult result;
  result.best_val_c = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss = 0.0;
    ModelParams grads;
    if (cfg.dropout > 0.0) {
      const DropoutMasks masks = draw_dropout_masks(train.size(), cfg.hidden_widths, cfg.dropout, mask_rng);
      grads = gradient(train, params, cfg, &masks, &loss);
    } else {
      grads = gradient(train, params, cfg, nullptr, &loss);
    }
    adam_step(params, grads, adam, cfg.learning_rate);

    const double val_c = c_index(model_risks(val, params, cfg, grid), val.times, val.events);
    result.history.push_back({loss, val_c});

    if (val_c > result.best_val_c) {
      result.best_val_c = val_c;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) break;
    }
  }
  return result;
}

}  // namespace modalsurv

#endif  // MODALSURV_DEEPHIT_HPP
