#include "latlink/jepa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "latlink/diagnostics.hpp"
#include "latlink/matrix_io.hpp"
#include "latlink/util.hpp"

namespace latlink::jepa {

namespace {

void check_batch(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                 const Eigen::MatrixXd& targets, Eigen::Index target_rows) {
  if (contexts.cols() < 1) throw std::invalid_argument("empty batch");
  if (contexts.cols() != targets.cols()) {
    throw std::invalid_argument("context and target batch sizes differ");
  }
  if (contexts.rows() != model.obs_dim() || targets.rows() != target_rows) {
    throw std::invalid_argument("batch dimensions do not match the model");
  }
}

Eigen::MatrixXd affine(const AffineLayer& l, const Eigen::MatrixXd& x) {
  return (l.weight * x).colwise() + l.bias;
}

struct Forward {
  Eigen::MatrixXd s1;    // encoder hidden activations on contexts
  Eigen::MatrixXd zc;    // context embeddings
  Eigen::MatrixXd t1;    // predictor hidden activations
  Eigen::MatrixXd pred;  // predicted target embeddings
  Eigen::MatrixXd s1t;   // encoder hidden activations on targets
  Eigen::MatrixXd zt;    // target embeddings
  Eigen::MatrixXd resid;
  double loss = 0.0;
};

Forward run_forward(const ToyJepaModel& m, const Eigen::MatrixXd& xc,
                    const Eigen::MatrixXd& xt) {
  Forward f;
  f.s1 = affine(m.encoder.first, xc).array().tanh().matrix();
  f.zc = affine(m.encoder.second, f.s1);
  f.t1 = affine(m.predictor.first, f.zc).array().tanh().matrix();
  f.pred = affine(m.predictor.second, f.t1);
  f.s1t = affine(m.encoder.first, xt).array().tanh().matrix();
  f.zt = affine(m.encoder.second, f.s1t);
  f.resid = f.pred - f.zt;
  f.loss = f.resid.squaredNorm() / static_cast<double>(xc.cols());
  return f;
}

// Backpropagation of the stop-gradient loss: the residual flows through the
// predictor and the context branch of the encoder only.
GradientResult run_backward(const ToyJepaModel& m, const Forward& f, const Eigen::MatrixXd& xc,
                            const Eigen::MatrixXd* extra_dzc) {
  const double b = static_cast<double>(xc.cols());
  GradientResult g;
  g.loss = f.loss;

  const Eigen::MatrixXd dp = (2.0 / b) * f.resid;
  g.predictor.second.weight = dp * f.t1.transpose();
  g.predictor.second.bias = dp.rowwise().sum();
  const Eigen::MatrixXd dt1 = m.predictor.second.weight.transpose() * dp;
  const Eigen::MatrixXd dg1 = (dt1.array() * (1.0 - f.t1.array().square())).matrix();
  g.predictor.first.weight = dg1 * f.zc.transpose();
  g.predictor.first.bias = dg1.rowwise().sum();

  Eigen::MatrixXd dzc = m.predictor.first.weight.transpose() * dg1;
  if (extra_dzc) {
    if (extra_dzc->rows() != dzc.rows() || extra_dzc->cols() != dzc.cols()) {
      throw std::invalid_argument("extra encoder-output gradient has the wrong shape");
    }
    dzc += *extra_dzc;
  }
  g.encoder.second.weight = dzc * f.s1.transpose();
  g.encoder.second.bias = dzc.rowwise().sum();
  const Eigen::MatrixXd ds1 = m.encoder.second.weight.transpose() * dzc;
  const Eigen::MatrixXd dh1 = (ds1.array() * (1.0 - f.s1.array().square())).matrix();
  g.encoder.first.weight = dh1 * xc.transpose();
  g.encoder.first.bias = dh1.rowwise().sum();
  return g;
}

void apply_update(Mlp& layer, const Mlp& grad, double lr) {
  layer.first.weight -= lr * grad.first.weight;
  layer.first.bias -= lr * grad.first.bias;
  layer.second.weight -= lr * grad.second.weight;
  layer.second.bias -= lr * grad.second.bias;
}

double mean_dim_variance(const Eigen::MatrixXd& z) {
  const Eigen::VectorXd mean = z.rowwise().mean();
  return (z.colwise() - mean).squaredNorm() /
         static_cast<double>(z.rows() * z.cols());
}

AffineLayer init_layer(Eigen::Index out, Eigen::Index in, double scale, Rng& rng) {
  const Eigen::MatrixXd q = synth::random_orthogonal(std::max(out, in), rng);
  AffineLayer l;
  l.weight = scale * q.topLeftCorner(out, in);
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

void check_layer(const AffineLayer& l, Eigen::Index out, Eigen::Index in,
                 const char* name) {
  if (l.weight.rows() != out || l.weight.cols() != in || l.bias.size() != out) {
    throw std::invalid_argument(std::string("inconsistent shapes in ") + name);
  }
  if (!l.weight.allFinite() || !l.bias.allFinite()) {
    throw std::invalid_argument(std::string("non-finite parameters in ") + name);
  }
}

}  // namespace

Eigen::MatrixXd mlp_forward(const Mlp& m, const Eigen::MatrixXd& x) {
  if (x.rows() != m.in_dim()) throw std::invalid_argument("input dimension mismatch");
  return affine(m.second, affine(m.first, x).array().tanh().matrix());
}

void validate(const ToyJepaModel& model) {
  const Eigen::Index d = model.encoder.second.weight.rows();
  check_layer(model.encoder.first, model.encoder.first.weight.rows(),
              model.encoder.first.weight.cols(), "encoder first layer");
  check_layer(model.encoder.second, d, model.encoder.first.weight.rows(),
              "encoder second layer");
  check_layer(model.predictor.first, model.predictor.first.weight.rows(), d,
              "predictor first layer");
  check_layer(model.predictor.second, d, model.predictor.first.weight.rows(),
              "predictor second layer");
}

ToyJepaModel init_model(Eigen::Index obs_dim, Eigen::Index latent_dim,
                        Eigen::Index hidden_dim, double scale1, double scale2,
                        std::uint64_t seed) {
  if (obs_dim < 1 || latent_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (scale1 <= 0.0 || scale2 <= 0.0) {
    throw std::invalid_argument("init scales must be positive");
  }
  Rng rng_enc(derive_seed(seed, 0));
  Rng rng_pred(derive_seed(seed, 1));
  ToyJepaModel model;
  model.encoder.first = init_layer(hidden_dim, obs_dim, scale1, rng_enc);
  model.encoder.second = init_layer(latent_dim, hidden_dim, scale2, rng_enc);
  model.predictor.first = init_layer(hidden_dim, latent_dim, scale1, rng_pred);
  model.predictor.second = init_layer(latent_dim, hidden_dim, scale2, rng_pred);
  return model;
}

Eigen::MatrixXd encode(const ToyJepaModel& model, const Eigen::MatrixXd& obs) {
  return mlp_forward(model.encoder, obs);
}

double jepa_loss(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                 const Eigen::MatrixXd& targets) {
  check_batch(model, contexts, targets, model.obs_dim());
  return run_forward(model, contexts, targets).loss;
}

double loss_with_frozen_targets(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                const Eigen::MatrixXd& frozen_targets) {
  check_batch(model, contexts, frozen_targets, model.latent_dim());
  const Eigen::MatrixXd pred = mlp_forward(model.predictor, encode(model, contexts));
  return (pred - frozen_targets).squaredNorm() / static_cast<double>(contexts.cols());
}

GradientResult loss_and_gradients(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                  const Eigen::MatrixXd& targets) {
  check_batch(model, contexts, targets, model.obs_dim());
  const Forward f = run_forward(model, contexts, targets);
  return run_backward(model, f, contexts, nullptr);
}

GradientResult both_branch_gradients(const ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                                     const Eigen::MatrixXd& targets) {
  check_batch(model, contexts, targets, model.obs_dim());
  const Forward f = run_forward(model, contexts, targets);
  GradientResult g = run_backward(model, f, contexts, nullptr);

  const double b = static_cast<double>(contexts.cols());
  const Eigen::MatrixXd dzt = (-2.0 / b) * f.resid;
  g.encoder.second.weight += dzt * f.s1t.transpose();
  g.encoder.second.bias += dzt.rowwise().sum();
  const Eigen::MatrixXd ds1t = model.encoder.second.weight.transpose() * dzt;
  const Eigen::MatrixXd dh1t = (ds1t.array() * (1.0 - f.s1t.array().square())).matrix();
  g.encoder.first.weight += dh1t * targets.transpose();
  g.encoder.first.bias += dh1t.rowwise().sum();
  return g;
}

void validate(const TrainConfig& config) {
  if (config.learning_rate < 0.0) {
    throw std::invalid_argument("learning_rate must be non-negative");
  }
  if (config.steps < 1) throw std::invalid_argument("steps must be at least 1");
  if (config.batch_size < 0) throw std::invalid_argument("batch_size must be non-negative");
  if (config.latent_dim < 1 || config.hidden_dim < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (config.init_scale1 <= 0.0 || config.init_scale2 <= 0.0) {
    throw std::invalid_argument("init scales must be positive");
  }
  if (config.jitter_std < 0.0) throw std::invalid_argument("jitter_std must be non-negative");
  for (int s : config.checkpoint_steps) {
    if (s < 0 || s > config.steps) {
      throw std::invalid_argument("checkpoint step outside [0, steps]");
    }
  }
}

JepaData make_view_data(const synth::SyntheticWorldSpec& spec, int view, double jitter_std,
                        bool shuffle_coords) {
  if (view != 1 && view != 2) throw std::invalid_argument("view must be 1 or 2");
  if (jitter_std < 0.0) throw std::invalid_argument("jitter_std must be non-negative");

  JepaData data;
  data.states = synth::draw_states(spec);
  const Eigen::MatrixXd& mix = view == 1 ? spec.mix1 : spec.mix2;
  data.clean = mix * data.states;
  data.contexts = data.clean;
  data.targets = data.clean;

  const Eigen::Index d = data.clean.rows();
  const Eigen::Index n = data.clean.cols();
  if (jitter_std > 0.0) {
    Rng rc(derive_seed(spec.seed, 1000 + 2 * static_cast<std::uint64_t>(view)));
    Rng rt(derive_seed(spec.seed, 1001 + 2 * static_cast<std::uint64_t>(view)));
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) data.contexts(i, j) += jitter_std * rc.normal();
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) data.targets(i, j) += jitter_std * rt.normal();
    }
  }

  if (shuffle_coords) {
    // One permutation per sample, shared by its clean/context/target columns:
    // destroys the coordinate structure across samples, keeps pairing intact.
    Rng rp(derive_seed(spec.seed, 3000 + static_cast<std::uint64_t>(view)));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < n; ++j) {
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      rp.shuffle(perm);
      const Eigen::VectorXd cl = data.clean.col(j);
      const Eigen::VectorXd cx = data.contexts.col(j);
      const Eigen::VectorXd tg = data.targets.col(j);
      for (Eigen::Index i = 0; i < d; ++i) {
        data.clean(i, j) = cl(perm[static_cast<std::size_t>(i)]);
        data.contexts(i, j) = cx(perm[static_cast<std::size_t>(i)]);
        data.targets(i, j) = tg(perm[static_cast<std::size_t>(i)]);
      }
    }
  }

  data.state_ids.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    data.state_ids[static_cast<std::size_t>(j)] = "s" + std::to_string(j);
  }
  return data;
}

std::vector<Eigen::Index> draw_batch(Rng& rng, Eigen::Index n, int batch_size) {
  if (batch_size <= 0 || batch_size >= n) return {};
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  return idx;
}

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t t = 0; t < idx.size(); ++t) {
    out.col(static_cast<Eigen::Index>(t)) = m.col(idx[t]);
  }
  return out;
}

StepResult sgd_step(ToyJepaModel& model, const Eigen::MatrixXd& contexts,
                    const Eigen::MatrixXd& targets, double learning_rate,
                    const Eigen::MatrixXd* extra_dzc) {
  check_batch(model, contexts, targets, model.obs_dim());
  const Forward f = run_forward(model, contexts, targets);
  const GradientResult g = run_backward(model, f, contexts, extra_dzc);
  if (learning_rate != 0.0) {
    apply_update(model.encoder, g.encoder, learning_rate);
    apply_update(model.predictor, g.predictor, learning_rate);
  }
  StepResult r;
  r.loss = f.loss;
  r.encoder_variance = mean_dim_variance(f.zc);
  return r;
}

TrainResult train(ToyJepaModel model, const JepaData& data, const TrainConfig& config) {
  validate(config);
  validate(model);
  const Eigen::Index n = data.contexts.cols();
  if (n < 1) throw std::invalid_argument("empty training data");

  std::set<int> snapshots(config.checkpoint_steps.begin(), config.checkpoint_steps.end());

  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(config.steps));
  result.encoder_variance.reserve(static_cast<std::size_t>(config.steps));
  if (snapshots.count(0)) result.checkpoints.emplace_back(0, model);

  Rng batch_rng(derive_seed(config.seed, 2));
  for (int step = 0; step < config.steps; ++step) {
    const std::vector<Eigen::Index> idx = draw_batch(batch_rng, n, config.batch_size);
    StepResult s;
    if (idx.empty()) {
      s = sgd_step(model, data.contexts, data.targets, config.learning_rate, nullptr);
    } else {
      s = sgd_step(model, take_columns(data.contexts, idx), take_columns(data.targets, idx),
                   config.learning_rate, nullptr);
    }
    if (!std::isfinite(s.loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at step " +
                               std::to_string(step));
    }
    result.losses.push_back(s.loss);
    result.encoder_variance.push_back(s.encoder_variance);
    if (snapshots.count(step + 1)) result.checkpoints.emplace_back(step + 1, model);
  }
  result.model = std::move(model);
  return result;
}

ToyJepaModel reparameterize(const ToyJepaModel& model, const Eigen::MatrixXd& a) {
  validate(model);
  const Eigen::Index d = model.latent_dim();
  if (a.rows() != d || a.cols() != d) {
    throw std::invalid_argument("reparameterization matrix must be latent_dim x latent_dim");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(d - 1);
  if (!(smin > 0.0) || smax / smin > 1e12) {
    throw std::invalid_argument("reparameterization matrix is effectively singular");
  }
  const Eigen::MatrixXd ainv = a.partialPivLu().inverse();

  ToyJepaModel out = model;
  out.encoder.second.weight = a * model.encoder.second.weight;
  out.encoder.second.bias = a * model.encoder.second.bias;
  out.predictor.first.weight = model.predictor.first.weight * ainv;
  out.predictor.second.weight = a * model.predictor.second.weight;
  out.predictor.second.bias = a * model.predictor.second.bias;
  return out;
}

SymmetryCheck symmetry_bounds_check(const ToyJepaModel& model, const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& contexts,
                                    const Eigen::MatrixXd& targets) {
  SymmetryCheck check;
  check.loss = jepa_loss(model, contexts, targets);
  check.loss_reparam = jepa_loss(reparameterize(model, a), contexts, targets);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double smax = svd.singularValues()(0);
  check.lower = smin * smin * check.loss;
  check.upper = smax * smax * check.loss;
  constexpr double kRel = 1e-9;
  constexpr double kAbs = 1e-18;
  check.pass = check.loss_reparam >= check.lower * (1.0 - kRel) - kAbs &&
               check.loss_reparam <= check.upper * (1.0 + kRel) + kAbs;
  return check;
}

EmergenceResult emergence_experiment(const synth::SyntheticWorldSpec& spec,
                                     const EmergenceConfig& config) {
  validate(config.train);
  synth::validate(spec);

  std::set<int> steps_set;
  for (double frac : config.checkpoint_fractions) {
    if (frac <= 0.0 || frac > 1.0) {
      throw std::invalid_argument("checkpoint fractions must lie in (0, 1]");
    }
    steps_set.insert(std::max(1, static_cast<int>(std::llround(frac * config.train.steps))));
  }
  const std::vector<int> snapshot_steps(steps_set.begin(), steps_set.end());

  const JepaData data1 = make_view_data(spec, 1, config.train.jitter_std, false);
  const JepaData data2 = make_view_data(spec, 2, config.train.jitter_std, config.shuffle_view2);

  TrainConfig c1 = config.train;
  c1.seed = config.seed1;
  c1.checkpoint_steps = snapshot_steps;
  TrainConfig c2 = config.train;
  c2.seed = config.seed2;
  c2.checkpoint_steps = snapshot_steps;

  const Eigen::Index obs_dim = data1.clean.rows();
  ToyJepaModel m1 = init_model(obs_dim, config.train.latent_dim, config.train.hidden_dim,
                               config.train.init_scale1, config.train.init_scale2,
                               config.seed1);
  ToyJepaModel m2 = init_model(obs_dim, config.train.latent_dim, config.train.hidden_dim,
                               config.train.init_scale1, config.train.init_scale2,
                               config.seed2);

  EmergenceResult result;
  result.run1 = train(std::move(m1), data1, c1);
  result.run2 = train(std::move(m2), data2, c2);

  const auto score = [&](const ToyJepaModel& a, const ToyJepaModel& b) {
    auto v1 = latents::make_latent_set(encode(a, data1.clean), data1.state_ids, "jepa_view1");
    auto v2 = latents::make_latent_set(encode(b, data2.clean), data2.state_ids, "jepa_view2");
    const latents::PairedDataset paired =
        latents::pair_by_state(v1, v2, config.split_fraction, spec.seed);
    diagnostics::AlignmentOptions opts;
    opts.metrics = config.metrics;
    return diagnostics::run_alignment(paired, opts).report;
  };

  for (std::size_t t = 0; t < snapshot_steps.size(); ++t) {
    result.checkpoint_reports.emplace_back(
        snapshot_steps[t],
        score(result.run1.checkpoints[t].second, result.run2.checkpoints[t].second));
  }
  result.report = score(result.run1.model, result.run2.model);
  return result;
}

void save_model(const ToyJepaModel& model, const std::string& path) {
  validate(model);
  std::vector<matio::NamedMatrix> entries;
  entries.push_back({"encoder_w1", model.encoder.first.weight});
  entries.push_back({"encoder_b1", model.encoder.first.bias});
  entries.push_back({"encoder_w2", model.encoder.second.weight});
  entries.push_back({"encoder_b2", model.encoder.second.bias});
  entries.push_back({"predictor_w1", model.predictor.first.weight});
  entries.push_back({"predictor_b1", model.predictor.first.bias});
  entries.push_back({"predictor_w2", model.predictor.second.weight});
  entries.push_back({"predictor_b2", model.predictor.second.bias});
  matio::save_container(path, "TJPA", entries);
}

ToyJepaModel load_model(const std::string& path) {
  const auto entries = matio::load_container(path, "TJPA");
  const auto vec = [&](const char* name) -> Eigen::VectorXd {
    const Eigen::MatrixXd m = matio::find_matrix(entries, name);
    if (m.cols() != 1) {
      throw std::runtime_error(std::string("expected a column vector for ") + name +
                               " in " + path);
    }
    return m.col(0);
  };
  ToyJepaModel model;
  model.encoder.first.weight = matio::find_matrix(entries, "encoder_w1");
  model.encoder.first.bias = vec("encoder_b1");
  model.encoder.second.weight = matio::find_matrix(entries, "encoder_w2");
  model.encoder.second.bias = vec("encoder_b2");
  model.predictor.first.weight = matio::find_matrix(entries, "predictor_w1");
  model.predictor.first.bias = vec("predictor_b1");
  model.predictor.second.weight = matio::find_matrix(entries, "predictor_w2");
  model.predictor.second.bias = vec("predictor_b2");
  validate(model);
  return model;
}

void write_loss_csv(const TrainResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "step,loss,encoder_variance\n";
  for (std::size_t t = 0; t < result.losses.size(); ++t) {
    out << t << ',' << format_double(result.losses[t]) << ','
        << format_double(result.encoder_variance[t]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace latlink::jepa
