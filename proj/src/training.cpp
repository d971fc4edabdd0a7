#include "tfgu/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tfgu/pseudolabels.hpp"

namespace tfgu {

namespace {

double luminance(const Image& img, int i, int j) {
  return 0.299 * img.channels[0](i, j) + 0.587 * img.channels[1](i, j) + 0.114 * img.channels[2](i, j);
}

void clamp_unit(Image& img) {
  for (auto& c : img.channels) c = c.cwiseMax(0.0).cwiseMin(1.0);
}

void adjust_brightness(Image& img, double f) {
  for (auto& c : img.channels) c *= f;
}

void adjust_contrast(Image& img, double f) {
  double mean = 0.0;
  for (int i = 0; i < img.height(); ++i)
    for (int j = 0; j < img.width(); ++j) mean += luminance(img, i, j);
  mean /= static_cast<double>(img.height()) * img.width();
  for (auto& c : img.channels) c = (c.array() - mean) * f + mean;
}

void adjust_saturation(Image& img, double f) {
  Grid gray(img.height(), img.width());
  for (int i = 0; i < img.height(); ++i)
    for (int j = 0; j < img.width(); ++j) gray(i, j) = luminance(img, i, j);
  for (auto& c : img.channels) c = gray + f * (c - gray);
}

void to_grayscale(Image& img) {
  Grid gray(img.height(), img.width());
  for (int i = 0; i < img.height(); ++i)
    for (int j = 0; j < img.width(); ++j) gray(i, j) = luminance(img, i, j);
  for (auto& c : img.channels) c = gray;
}

// Per-sample targets on the augmented view's token grid.
Stack view_targets(const TrainSample& s, const AugmentedView& view, int patch, int rows, int cols,
                   const TrainConfig& config) {
  const RectF grid_rect{view.rect.x / patch, view.rect.y / patch, view.rect.width / patch, view.rect.height / patch};
  Stack m = roi_align_label(s.targets, grid_rect, rows, cols);
  if (view.flipped) {
    for (Grid& g : m) g = flip_horizontal(g);
  }
  if (s.fg_prior && !config.channel_roles.empty()) {
    if (config.channel_roles.size() != m.size()) throw ShapeError("channel_roles does not match the target channels");
    const Grid fg = roi_align(s.fg_prior->cast<double>(), grid_rect, rows, cols);
    const double fg_frac = fg.mean();
    std::optional<ConceptRole> drop;
    if (fg_frac > config.fg_threshold) {
      drop = ConceptRole::bg;
    } else if (1.0 - fg_frac > config.bg_threshold) {
      drop = ConceptRole::fg;
    }
    if (drop) {
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (config.channel_roles[k] == *drop) m[k].setZero();
      }
    }
  }
  return m;
}

}  // namespace

AugmentedView augment(const Image& image, const AugmentConfig& config, Rng& rng) {
  const int H = image.height(), W = image.width();
  if (H < 2 || W < 2) throw ShapeError("augment: image too small");
  AugmentedView v;
  const double scale = rng.uniform(config.min_scale, 1.0);
  v.rect.width = scale * W;
  v.rect.height = scale * H;
  v.rect.x = rng.uniform() * (W - v.rect.width);
  v.rect.y = rng.uniform() * (H - v.rect.height);
  v.image = crop_bilinear(image, v.rect, H / 2, W / 2);

  v.flipped = rng.uniform() < config.flip_prob;
  if (v.flipped) v.image = flip_horizontal(v.image);

  if (rng.uniform() < config.jitter_prob) {
    const double b = rng.uniform(1.0 - config.brightness, 1.0 + config.brightness);
    const double c = rng.uniform(1.0 - config.contrast, 1.0 + config.contrast);
    const double s = rng.uniform(1.0 - config.saturation, 1.0 + config.saturation);
    adjust_brightness(v.image, b);
    adjust_contrast(v.image, c);
    adjust_saturation(v.image, s);
    clamp_unit(v.image);
  }
  if (rng.uniform() < config.grayscale_prob) to_grayscale(v.image);
  if (rng.uniform() < config.blur_prob) {
    v.image = gaussian_blur(v.image, rng.uniform(config.blur_sigma_min, config.blur_sigma_max));
  }
  return v;
}

LabelGrid bootstrap_labels(const Stack& responses, const Stack& teacher, int out_rows, int out_cols) {
  if (responses.empty() || responses.size() != teacher.size()) {
    throw ShapeError("bootstrap_labels: responses and teacher differ in channel count");
  }
  const auto h = responses[0].rows(), w = responses[0].cols();
  Stack avg;
  avg.reserve(responses.size());
  for (std::size_t k = 0; k < responses.size(); ++k) {
    if (responses[k].rows() != h || responses[k].cols() != w || teacher[k].rows() != h || teacher[k].cols() != w) {
      throw ShapeError("bootstrap_labels: geometry mismatch");
    }
    avg.push_back(0.5 * (responses[k] + teacher[k]));
  }
  LabelGrid label = argmax_channels(avg);
  if (out_rows > 0 && out_cols > 0 && (out_rows != h || out_cols != w)) label = resize_nearest(label, out_rows, out_cols);
  return label;
}

void Adam::step(nn::ParamSet& params, const nn::ParamSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("Adam: unknown parameter " + name);
    Matrix& p = it->second;
    auto [mi, m_new] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [vi, v_new] = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = mi->second;
    Matrix& v = vi->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

RoundResult train_round(const EncoderModel& encoder, const DecoderModel* teacher, const DecoderConfig& student_config,
                        std::span<const TrainSample> samples, const TrainConfig& config, int round) {
  if (samples.empty()) throw ConfigError("train_round: no training samples");
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  const int K = student_config.classes;
  const int patch = encoder.config().patch_size;

  RoundResult result{DecoderModel::init(student_config), {}, 0};
  Adam adam(config.lr);
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(round)));

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double alpha = config.weights.alpha_at(epoch, config.epochs);
    rng.shuffle(order.begin(), order.end());
    LossStats sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto perm = loss::draw_permutation(K, rng);

      ad::Tape tape;
      nn::Binding params(tape, result.student.params(), true);
      std::vector<ad::Var> peers, uncs;
      for (std::size_t b = start; b < end; ++b) {
        const TrainSample& s = samples[order[b]];
        if (static_cast<int>(s.targets.size()) != K) throw ShapeError("sample " + s.id + ": target channels != classes");
        AugmentedView view = augment(s.image, config.augment, rng);
        const FeatureBundle f = encoder.encode(view.image);
        const Stack m = view_targets(s, view, patch, f.grid_h, f.grid_w, config);
        const Stack p_hat = teacher ? to_stack(teacher->probabilities(f.patch), f.grid_h, f.grid_w)
                                    : uniform_probabilities(K, f.grid_h, f.grid_w);
        const LabelGrid label = bootstrap_labels(m, p_hat);
        std::vector<int> labels(label.size());
        for (Eigen::Index i = 0; i < label.size(); ++i) labels[i] = label(i / label.cols(), i % label.cols());
        const auto shuffled = loss::permute_labels(labels, perm);

        ad::Var probs = DecoderModel::forward(student_config, params, tape.constant(f.patch));
        peers.push_back(loss::peer(probs, labels, shuffled, alpha));
        uncs.push_back(loss::uncertainty(probs));
      }
      const double inv_b = 1.0 / static_cast<double>(peers.size());
      ad::Var peer = peers[0], unc = uncs[0];
      for (std::size_t i = 1; i < peers.size(); ++i) {
        peer = ad::add(peer, peers[i]);
        unc = ad::add(unc, uncs[i]);
      }
      peer = ad::scale(peer, inv_b);
      unc = ad::scale(unc, inv_b);
      ad::Var div = loss::diversity(params["cls_emb"]);
      ad::Var total = ad::add(ad::add(peer, ad::scale(div, config.weights.omega1)), ad::scale(unc, config.weights.omega2));

      if (!std::isfinite(total.scalar())) {
        throw NumericError("non-finite loss in round " + std::to_string(round) + " at step " +
                           std::to_string(result.steps + 1));
      }
      tape.backward(total);
      adam.step(result.student.params(), params.gradients());
      ++result.steps;
      ++batches;
      sum.total += total.scalar();
      sum.peer += peer.scalar();
      sum.diversity += div.scalar();
      sum.uncertainty += unc.scalar();
    }
    const double n = static_cast<double>(batches);
    result.epochs.push_back({sum.total / n, sum.peer / n, sum.diversity / n, sum.uncertainty / n});
  }
  // keep the in-memory student identical to its persisted form
  for (auto& [name, m] : result.student.params()) m = m.unaryExpr([](double v) { return round_to(DType::f32, v); });
  return result;
}

std::string RoundMetrics::to_jsonl() const {
  nlohmann::ordered_json j;
  j["round"] = round;
  if (evaluated) {
    j["miou"] = miou;
    j["pixel_acc"] = pixel_acc;
  }
  j["loss_total"] = losses.total;
  j["loss_peer"] = losses.peer;
  j["loss_diversity"] = losses.diversity;
  j["loss_uncertainty"] = losses.uncertainty;
  return j.dump();
}

BootstrapResult run_bootstrap(const EncoderModel& encoder, const DecoderConfig& decoder_config,
                              std::span<const TrainSample> samples, const TrainConfig& config, int rounds,
                              const RoundEvaluator& evaluate, const RoundCallback& on_round) {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  BootstrapResult out;
  BootstrapState state;
  for (int r = 1; r <= rounds; ++r) {
    state.round = r;
    if (state.student) state.teacher = *state.student;
    RoundResult rr = train_round(encoder, state.teacher ? &*state.teacher : nullptr, decoder_config, samples, config, r);
    state.student = rr.student;

    RoundMetrics m;
    m.round = r;
    if (!rr.epochs.empty()) m.losses = rr.epochs.back();
    if (evaluate) {
      const EvalReport rep = evaluate(*state.student);
      m.miou = rep.miou;
      m.pixel_acc = rep.pixel_acc;
      m.evaluated = true;
    }
    if (on_round) on_round(m, *state.student);
    out.rounds.push_back(m);
    out.students.push_back(std::move(rr.student));
  }
  return out;
}

}  // namespace tfgu
