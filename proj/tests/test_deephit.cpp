#include <catch2/catch_amalgamated.hpp>

#include "modalsurv/deephit.hpp"

using namespace modalsurv;
using Catch::Approx;

namespace {

SurvivalBatch random_batch(std::uint64_t seed, Eigen::Index n, const std::vector<Eigen::Index>& dims,
                           int bins) {
  Rng rng(seed);
  SurvivalBatch b;
  for (Eigen::Index d : dims) {
    Eigen::MatrixXd f(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) f(i, j) = rng.normal();
    }
    b.features.push_back(std::move(f));
  }
  b.times.resize(static_cast<std::size_t>(n));
  b.events.resize(static_cast<std::size_t>(n));
  b.bins.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    b.bins[idx] = static_cast<int>(rng.below(static_cast<std::uint64_t>(bins)));
    b.times[idx] = b.bins[idx] + rng.uniform(0.1, 0.9);
    b.events[idx] = rng.uniform() < 0.6 ? 1 : 0;
  }
  return b;
}

struct Span {
  std::string name;
  double* data;
  Eigen::Index size;
};

std::vector<Span> mutable_spans(ModelParams& p) {
  std::vector<Span> spans;
  for_each_tensor(p, [&](const std::string& n, double* d, Eigen::Index s) { spans.push_back({n, d, s}); });
  return spans;
}

// central finite differences over every parameter entry; relative tolerance
// with an absolute guard for entries where the h^2 truncation noise dominates
double max_gradient_error(SurvivalBatch& batch, ModelParams& params, const TrainConfig& cfg,
                          const DropoutMasks* masks) {
  const ModelParams grads = gradient(batch, params, cfg, masks);
  std::vector<const double*> grad_ptrs;
  ModelParams& grads_mut = const_cast<ModelParams&>(grads);
  for_each_tensor(grads_mut, [&](const std::string&, double* d, Eigen::Index) { grad_ptrs.push_back(d); });

  const double h = 1e-5;
  double worst = 0.0;
  auto spans = mutable_spans(params);
  for (std::size_t t = 0; t < spans.size(); ++t) {
    for (Eigen::Index i = 0; i < spans[t].size; ++i) {
      double* x = spans[t].data + i;
      const double orig = *x;
      *x = orig + h;
      const double up = total_loss(batch, params, cfg, masks);
      *x = orig - h;
      const double down = total_loss(batch, params, cfg, masks);
      *x = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = grad_ptrs[t][i];
      const double abs_err = std::abs(an - fd);
      if (abs_err <= 1e-7) continue;
      worst = std::max(worst, abs_err / std::max(std::abs(an), std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("init_params: seed determinism and fan-based bounds") {
  TrainConfig cfg;
  cfg.embed_dim = 8;
  cfg.time_bins = 5;
  cfg.hidden_widths = {6};
  const std::vector<Eigen::Index> dims{3, 7};

  ModelParams a = init_params(dims, cfg, 42);
  ModelParams b = init_params(dims, cfg, 42);
  ModelParams c = init_params(dims, cfg, 43);

  bool identical = true, any_diff = false;
  auto sa = mutable_spans(a), sb = mutable_spans(b), sc = mutable_spans(c);
  for (std::size_t t = 0; t < sa.size(); ++t) {
    for (Eigen::Index i = 0; i < sa[t].size; ++i) {
      identical = identical && sa[t].data[i] == sb[t].data[i];
      any_diff = any_diff || sa[t].data[i] != sc[t].data[i];
    }
  }
  CHECK(identical);
  CHECK(any_diff);

  // biases zero, weights within the fan bound
  CHECK(a.proj_b[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.fc_b[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.proj_w[0].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (3 + 8)));
  CHECK(a.proj_w[1].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (7 + 8)));
  CHECK(a.w_q.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 16));
  CHECK(a.fc_w[0].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (16 + 6)));
  CHECK(a.fc_w[1].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (6 + 5)));
  CHECK(a.all_finite());

  CHECK_THROWS_AS(init_params({}, cfg, 1), ValidationError);
  CHECK_THROWS_AS(init_params({0}, cfg, 1), ValidationError);
}

TEST_CASE("project_modality: rectifier and recomputation") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 3);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd x(3);
  x << 1, -2, 3;
  CHECK(project_modality(x, w, bias).cwiseAbs().maxCoeff() == 0.0);

  w.setConstant(-1.0);  // all pre-activations negative for positive-sum input
  Eigen::VectorXd positive(3);
  positive << 1, 1, 1;
  CHECK(project_modality(positive, w, bias).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(6);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    bias[i] = rng.normal();
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
  }
  const Eigen::VectorXd out = project_modality(x, w, bias);
  for (Eigen::Index i = 0; i < 4; ++i) {
    double acc = bias[i];
    for (Eigen::Index j = 0; j < 3; ++j) acc += w(i, j) * x[j];
    CHECK(out[i] == Approx(std::max(0.0, acc)).margin(1e-12));
  }

  CHECK_THROWS_AS(project_modality(Eigen::VectorXd::Zero(2), w, bias), ValidationError);
}

TEST_CASE("cross_attention_fuse: single modality reduces to the value projection") {
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.time_bins = 3;
  cfg.hidden_widths = {};
  ModelParams p = init_params({4}, cfg, 9);

  Rng rng(10);
  Eigen::MatrixXd emb(1, 6);
  for (Eigen::Index j = 0; j < 6; ++j) emb(0, j) = rng.normal();

  Eigen::MatrixXd attn;
  const Eigen::VectorXd fused = cross_attention_fuse(emb, p, &attn);
  CHECK(attn.rows() == 1);
  CHECK(attn(0, 0) == Approx(1.0));
  const Eigen::VectorXd expected = (emb * p.w_v).row(0).transpose();
  CHECK((fused - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross_attention_fuse: zero query/key weights give uniform attention") {
  TrainConfig cfg;
  cfg.embed_dim = 5;
  cfg.time_bins = 3;
  ModelParams p = init_params({4, 4, 4}, cfg, 12);
  p.w_q.setZero();
  p.w_k.setZero();

  Rng rng(13);
  Eigen::MatrixXd emb(3, 5);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) emb(i, j) = rng.normal();
  }
  Eigen::MatrixXd attn;
  const Eigen::VectorXd fused = cross_attention_fuse(emb, p, &attn);
  CHECK((attn.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);

  const Eigen::MatrixXd v = emb * p.w_v;
  const Eigen::VectorXd mean_row = v.colwise().mean().transpose();
  for (Eigen::Index m = 0; m < 3; ++m) {
    CHECK((fused.segment(m * 5, 5) - mean_row).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cross_attention_fuse: rows are stochastic and match a dense recomputation") {
  TrainConfig cfg;
  cfg.embed_dim = 7;
  cfg.time_bins = 3;
  ModelParams p = init_params({4, 4, 4}, cfg, 21);
  Rng rng(22);
  Eigen::MatrixXd emb(3, 7);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 7; ++j) emb(i, j) = rng.normal();
  }

  Eigen::MatrixXd attn;
  const Eigen::VectorXd fused = cross_attention_fuse(emb, p, &attn);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(attn.row(r).sum() == Approx(1.0).margin(1e-9));

  // dense recomputation with a hand-rolled softmax
  const Eigen::MatrixXd q = emb * p.w_q;
  const Eigen::MatrixXd kk = emb * p.w_k;
  const Eigen::MatrixXd v = emb * p.w_v;
  for (Eigen::Index r = 0; r < 3; ++r) {
    Eigen::VectorXd logits(3);
    for (Eigen::Index cidx = 0; cidx < 3; ++cidx) {
      logits[cidx] = q.row(r).dot(kk.row(cidx)) / std::sqrt(7.0);
    }
    Eigen::VectorXd weights = (logits.array() - logits.maxCoeff()).exp();
    weights /= weights.sum();
    Eigen::VectorXd row_out = Eigen::VectorXd::Zero(7);
    for (Eigen::Index cidx = 0; cidx < 3; ++cidx) row_out += weights[cidx] * v.row(cidx).transpose();
    CHECK((fused.segment(r * 7, 7) - row_out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward: deterministic inference emitting valid pmfs") {
  TrainConfig cfg;
  cfg.embed_dim = 8;
  cfg.time_bins = 6;
  cfg.hidden_widths = {10, 7};
  ModelParams p = init_params({5, 3}, cfg, 31);

  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::VectorXd> x{Eigen::VectorXd(5), Eigen::VectorXd(3)};
    for (auto& v : x) {
      for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
    }
    const PmfPrediction a = forward(x, p, cfg, false);
    const PmfPrediction b = forward(x, p, cfg, false);
    CHECK(is_valid_pmf(a.probs));
    CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() == 0.0);

    Rng drop_rng(trial);
    const PmfPrediction t = forward(x, p, cfg, true, &drop_rng);
    CHECK(is_valid_pmf(t.probs));
  }

  // dropout 0: training and inference passes coincide
  TrainConfig no_drop = cfg;
  no_drop.dropout = 0.0;
  std::vector<Eigen::VectorXd> x{Eigen::VectorXd::Ones(5), Eigen::VectorXd::Ones(3)};
  const PmfPrediction train_mode = forward(x, no_drop.dropout > 0 ? p : p, no_drop, true);
  const PmfPrediction eval_mode = forward(x, p, no_drop, false);
  CHECK((train_mode.probs - eval_mode.probs).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(forward({Eigen::VectorXd::Zero(4)}, p, cfg, false), ValidationError);
  CHECK_THROWS_AS(forward({Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(3)}, p, cfg, false),
                  ValidationError);
  CHECK_THROWS_AS(forward(x, p, cfg, true), ValidationError);  // dropout needs an rng
}

TEST_CASE("nll_loss: event, censored tail, and clamp") {
  PmfPrediction one_hot{Eigen::VectorXd::Zero(5)};
  one_hot.probs[2] = 1.0;
  CHECK(nll_loss(one_hot, 2, true) == Approx(0.0).margin(1e-12));

  // censored in the final bin: empty strict tail clamps at 1e-7
  PmfPrediction any{Eigen::VectorXd::Constant(5, 0.2)};
  CHECK(nll_loss(any, 4, false) == Approx(-std::log(1e-7)));

  // uniform over 30 bins, censored at bin 14: tail holds 15/30
  PmfPrediction uniform{Eigen::VectorXd::Constant(30, 1.0 / 30.0)};
  CHECK(nll_loss(uniform, 14, false) == Approx(std::log(2.0)));

  CHECK(nll_loss(one_hot, 0, true) == Approx(-std::log(1e-7)));  // event mass elsewhere
  CHECK_THROWS_AS(nll_loss(one_hot, 5, true), ValidationError);
  CHECK_THROWS_AS(nll_loss(one_hot, -1, true), ValidationError);
}

TEST_CASE("ranking_loss: no pairs, extreme separation, brute-force oracle") {
  const int k = 4;
  std::vector<PmfPrediction> pmfs;
  std::vector<int> bins{0, 1, 2};
  std::vector<char> censored{0, 0, 0};
  for (int i = 0; i < 3; ++i) pmfs.push_back(PmfPrediction{Eigen::VectorXd::Constant(k, 0.25)});
  CHECK(ranking_loss(pmfs, bins, censored, 0.1) == 0.0);

  // F_i(b_i) = 1 vs F_j(b_i) = 0 with sigma = 1 -> exp(-1)
  PmfPrediction early{Eigen::VectorXd::Zero(k)};
  early.probs[0] = 1.0;
  PmfPrediction late{Eigen::VectorXd::Zero(k)};
  late.probs[k - 1] = 1.0;
  CHECK(ranking_loss({early, late}, {0, k - 1}, {1, 0}, 1.0) == Approx(std::exp(-1.0)));

  Rng rng(55);
  std::vector<PmfPrediction> rand_pmfs;
  std::vector<int> rand_bins;
  std::vector<char> rand_events;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd p(k);
    for (int j = 0; j < k; ++j) p[j] = rng.uniform(0.01, 1.0);
    p /= p.sum();
    rand_pmfs.push_back(PmfPrediction{p});
    rand_bins.push_back(static_cast<int>(rng.below(k)));
    rand_events.push_back(rng.uniform() < 0.7 ? 1 : 0);
  }
  const double sigma = 0.3;
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      if (!rand_events[static_cast<std::size_t>(i)]) continue;
      if (!(rand_bins[static_cast<std::size_t>(i)] < rand_bins[static_cast<std::size_t>(j)])) continue;
      double fi = 0.0, fj = 0.0;
      for (int b = 0; b <= rand_bins[static_cast<std::size_t>(i)]; ++b) {
        fi += rand_pmfs[static_cast<std::size_t>(i)].probs[b];
        fj += rand_pmfs[static_cast<std::size_t>(j)].probs[b];
      }
      sum += std::exp(-(fi - fj) / sigma);
      ++pairs;
    }
  }
  const double oracle = pairs ? sum / pairs : 0.0;
  CHECK(ranking_loss(rand_pmfs, rand_bins, rand_events, sigma) == Approx(oracle).margin(1e-12));
}

TEST_CASE("total_loss: decomposes into its published terms") {
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.time_bins = 4;
  cfg.hidden_widths = {5};
  cfg.dropout = 0.0;
  const std::vector<Eigen::Index> dims{3, 4};
  ModelParams p = init_params(dims, cfg, 77);
  SurvivalBatch batch = random_batch(78, 7, dims, 4);

  // alpha = 0, l2 = 0: exactly the mean nll
  TrainConfig bare = cfg;
  bare.alpha_rank = 0.0;
  bare.l2_projection = 0.0;
  double mean_nll = 0.0;
  std::vector<PmfPrediction> pmfs;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    pmfs.push_back(forward(batch.sample(i), p, bare, false));
    mean_nll += nll_loss(pmfs.back(), batch.bins[static_cast<std::size_t>(i)],
                         batch.events[static_cast<std::size_t>(i)]);
  }
  mean_nll /= static_cast<double>(batch.size());
  CHECK(total_loss(batch, p, bare) == Approx(mean_nll).margin(1e-12));

  // l2 term equals the hand-summed squared projection norms
  TrainConfig with_l2 = bare;
  with_l2.l2_projection = 0.37;
  double sq = 0.0;
  for (const auto& w : p.proj_w) sq += w.squaredNorm();
  CHECK(total_loss(batch, p, with_l2) == Approx(mean_nll + 0.37 * sq).margin(1e-10));

  // full decomposition
  const double rank = ranking_loss(pmfs, batch.bins, batch.events, cfg.sigma_rank);
  CHECK(total_loss(batch, p, cfg) ==
        Approx(mean_nll + cfg.alpha_rank * rank + cfg.l2_projection * sq).margin(1e-10));

  SurvivalBatch empty;
  CHECK_THROWS_AS(total_loss(empty, p, cfg), ValidationError);
}

TEST_CASE("gradient: matches central finite differences on the toy model") {
  for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    TrainConfig cfg;
    cfg.embed_dim = 8;
    cfg.time_bins = 4;
    cfg.hidden_widths = {8};
    cfg.dropout = 0.0;
    cfg.alpha_rank = 0.5;
    cfg.sigma_rank = 0.1;
    cfg.l2_projection = 1e-3;
    const std::vector<Eigen::Index> dims{3, 4};
    ModelParams p = init_params(dims, cfg, seed);
    SurvivalBatch batch = random_batch(seed ^ 0xabcdULL, 6, dims, 4);
    CHECK(max_gradient_error(batch, p, cfg, nullptr) < 1e-4);
  }
}

TEST_CASE("gradient: fixed dropout masks differentiate exactly") {
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.time_bins = 4;
  cfg.hidden_widths = {6, 5};
  cfg.dropout = 0.35;
  cfg.alpha_rank = 0.4;
  cfg.sigma_rank = 0.2;
  cfg.l2_projection = 1e-3;
  const std::vector<Eigen::Index> dims{3, 2};
  ModelParams p = init_params(dims, cfg, 5);
  // move off the exact relu kinks that zero biases + dropped units create
  Rng jitter(31);
  for (auto& span : mutable_spans(p)) {
    for (Eigen::Index i = 0; i < span.size; ++i) span.data[i] += jitter.uniform(-0.05, 0.05);
  }
  SurvivalBatch batch = random_batch(77, 5, dims, 4);
  Rng mask_rng(123);
  const DropoutMasks masks = draw_dropout_masks(batch.size(), cfg.hidden_widths, cfg.dropout, mask_rng);
  CHECK(max_gradient_error(batch, p, cfg, &masks) < 1e-4);
}

TEST_CASE("gradient: near-zero at a zero-loss configuration") {
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.time_bins = 3;
  cfg.hidden_widths = {};
  cfg.dropout = 0.0;
  cfg.alpha_rank = 0.0;
  cfg.l2_projection = 0.0;
  ModelParams p = init_params({2}, cfg, 1);
  // zero the network so the fc bias alone sets the logits, then saturate bin 1
  for (auto& span : mutable_spans(p)) {
    for (Eigen::Index i = 0; i < span.size; ++i) span.data[i] = 0.0;
  }
  p.fc_b.back()[1] = 60.0;

  SurvivalBatch batch;
  batch.features = {Eigen::MatrixXd::Ones(4, 2)};
  batch.times = {1, 1, 1, 1};
  batch.events = {1, 1, 1, 1};
  batch.bins = {1, 1, 1, 1};
  CHECK(total_loss(batch, p, cfg) < 1e-12);
  const ModelParams g = gradient(batch, p, cfg);
  double max_abs = 0.0;
  ModelParams& gm = const_cast<ModelParams&>(g);
  for_each_tensor(gm, [&](const std::string&, double* d, Eigen::Index s) {
    for (Eigen::Index i = 0; i < s; ++i) max_abs = std::max(max_abs, std::abs(d[i]));
  });
  CHECK(max_abs < 1e-8);
}

TEST_CASE("gradient: doubling l2 doubles the penalty component") {
  TrainConfig cfg;
  cfg.embed_dim = 5;
  cfg.time_bins = 4;
  cfg.hidden_widths = {4};
  cfg.dropout = 0.0;
  cfg.l2_projection = 0.01;
  const std::vector<Eigen::Index> dims{3, 4};
  ModelParams p = init_params(dims, cfg, 8);
  SurvivalBatch batch = random_batch(9, 6, dims, 4);

  TrainConfig doubled = cfg;
  doubled.l2_projection = 0.02;
  const ModelParams g1 = gradient(batch, p, cfg);
  const ModelParams g2 = gradient(batch, p, doubled);
  for (std::size_t m = 0; m < p.proj_w.size(); ++m) {
    const Eigen::MatrixXd diff = g2.proj_w[m] - g1.proj_w[m];
    const Eigen::MatrixXd expected = 2.0 * 0.01 * p.proj_w[m];
    CHECK((diff - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  // non-penalized tensors are untouched by the l2 change
  CHECK((g2.w_q - g1.w_q).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g2.proj_b[0] - g1.proj_b[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam_step: hand-computed first step, zero-gradient fixpoint, determinism") {
  TrainConfig cfg;
  cfg.embed_dim = 1;
  cfg.time_bins = 2;
  cfg.hidden_widths = {};
  ModelParams p = init_params({1}, cfg, 3);
  ModelParams snapshot = p;

  ModelParams g = zeros_like(p);
  g.proj_w[0](0, 0) = 0.25;
  g.w_q(0, 0) = -1.5;

  AdamState state = init_adam(p);
  const double lr = 1e-3;
  adam_step(p, g, state, lr);
  CHECK(state.timestep == 1);
  // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
  const double expected_w = snapshot.proj_w[0](0, 0) - lr * 0.25 / (0.25 + 1e-8);
  const double expected_q = snapshot.w_q(0, 0) - lr * (-1.5) / (1.5 + 1e-8);
  CHECK(p.proj_w[0](0, 0) == Approx(expected_w).margin(1e-15));
  CHECK(p.w_q(0, 0) == Approx(expected_q).margin(1e-15));
  // untouched entries only move where the gradient is nonzero
  CHECK(p.w_k(0, 0) == snapshot.w_k(0, 0));

  // zero gradient forever: parameters unchanged
  ModelParams frozen = snapshot;
  AdamState zero_state = init_adam(frozen);
  const ModelParams zero_grad = zeros_like(frozen);
  for (int it = 0; it < 5; ++it) adam_step(frozen, zero_grad, zero_state, lr);
  auto sf = mutable_spans(frozen);
  auto ss = mutable_spans(snapshot);
  for (std::size_t t = 0; t < sf.size(); ++t) {
    for (Eigen::Index i = 0; i < sf[t].size; ++i) CHECK(sf[t].data[i] == ss[t].data[i]);
  }
}

TEST_CASE("train_fold: patience boundary, checkpoint consistency, determinism") {
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.time_bins = 4;
  cfg.hidden_widths = {4};
  cfg.dropout = 0.0;
  cfg.seed = 11;
  const std::vector<Eigen::Index> dims{3};
  SurvivalBatch train = random_batch(100, 24, dims, 4);
  SurvivalBatch val = random_batch(101, 12, dims, 4);

  // lr = 0 keeps the model constant: epoch 1 is the first best, epoch 2 fails
  // to improve, patience 0 stops there
  TrainConfig frozen = cfg;
  frozen.learning_rate = 0.0;
  frozen.patience = 0;
  frozen.max_epochs = 50;
  const TrainResult r0 = train_fold(train, val, build_time_grid(train.times, 4), frozen);
  CHECK(r0.history.size() == 2);
  CHECK(r0.best_epoch == 1);

  TrainConfig live = cfg;
  live.max_epochs = 30;
  live.patience = 5;
  const TimeGrid grid = build_time_grid(train.times, 4);
  const TrainResult a = train_fold(train, val, grid, live);
  const TrainResult b = train_fold(train, val, grid, live);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_c == b.history[e].val_c);
  }

  // the returned checkpoint reproduces its recorded validation C
  const double recheck = c_index(model_risks(val, a.params, live, grid), val.times, val.events);
  CHECK(recheck == a.best_val_c);

  // undefined validation C fails before training starts
  SurvivalBatch all_censored = val;
  std::fill(all_censored.events.begin(), all_censored.events.end(), char(0));
  CHECK_THROWS_AS(train_fold(train, all_censored, grid, live), NumericError);
  SurvivalBatch empty;
  CHECK_THROWS_AS(train_fold(empty, val, grid, live), ValidationError);
}

TEST_CASE("train_fold: learns a strongly signaled cohort") {
  // single modality whose first feature is the risk driver
  Rng rng(500);
  const Eigen::Index n = 200;
  Eigen::MatrixXd x(n, 6);
  std::vector<double> times(static_cast<std::size_t>(n));
  std::vector<char> events(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) x(i, j) = rng.normal();
    const double risk = 2.0 * x(i, 0) - 1.2 * x(i, 1);
    times[static_cast<std::size_t>(i)] = rng.exponential(std::exp(risk)) * 20.0;
    events[static_cast<std::size_t>(i)] = rng.uniform() < 0.75 ? 1 : 0;
  }
  std::vector<Eigen::Index> train_idx, val_idx;
  for (Eigen::Index i = 0; i < n; ++i) (i % 4 == 0 ? val_idx : train_idx).push_back(i);

  auto take = [&](const std::vector<Eigen::Index>& idx) {
    SurvivalBatch b;
    Eigen::MatrixXd f(static_cast<Eigen::Index>(idx.size()), 6);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      f.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
      b.times.push_back(times[static_cast<std::size_t>(idx[r])]);
      b.events.push_back(events[static_cast<std::size_t>(idx[r])]);
    }
    b.features = {f};
    return b;
  };
  SurvivalBatch train = take(train_idx);
  SurvivalBatch val = take(val_idx);
  const TimeGrid grid = build_time_grid(times, 10);
  for (double t : train.times) train.bins.push_back(bin_index(t, grid));
  for (double t : val.times) val.bins.push_back(bin_index(t, grid));

  TrainConfig cfg;
  cfg.embed_dim = 16;
  cfg.hidden_widths = {16, 8};
  cfg.time_bins = 10;
  cfg.max_epochs = 120;
  cfg.patience = 15;
  cfg.seed = 7;
  const TrainResult result = train_fold(train, val, grid, cfg);
  CHECK(result.best_val_c > 0.75);
  CHECK(result.history.size() <= 120);
}

TEST_CASE("reduction: single modality, no regularizers, trains to the loss floor") {
  TrainConfig cfg;
  cfg.embed_dim = 6;
  cfg.time_bins = 3;
  cfg.hidden_widths = {6};
  cfg.dropout = 0.0;
  cfg.alpha_rank = 0.0;
  cfg.l2_projection = 0.0;
  cfg.learning_rate = 0.05;
  cfg.seed = 2;

  // two separable inputs mapping to two distinct bins: one-hot achievable
  SurvivalBatch batch;
  Eigen::MatrixXd f(2, 2);
  f << 1, 0, 0, 1;
  batch.features = {f};
  batch.times = {1.0, 3.0};
  batch.events = {1, 1};
  batch.bins = {0, 2};

  ModelParams p = init_params({2}, cfg, cfg.seed);
  AdamState adam = init_adam(p);
  double loss = total_loss(batch, p, cfg);
  for (int step = 0; step < 1500; ++step) {
    const ModelParams g = gradient(batch, p, cfg, nullptr, &loss);
    adam_step(p, g, adam, cfg.learning_rate);
  }
  CHECK(total_loss(batch, p, cfg) < 0.01);
}
