#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfgu/concepts.hpp"
#include "tfgu/decoder.hpp"
#include "tfgu/encoder.hpp"
#include "tfgu/evaluation.hpp"
#include "tfgu/image_ops.hpp"
#include "tfgu/losses.hpp"

namespace tfgu {

struct AugmentConfig {
  double min_scale = 0.6;  // crop extent as a fraction of each image side
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.2, contrast = 0.2, saturation = 0.2;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1, blur_sigma_max = 1.0;
};

struct AugmentedView {
  Image image;  // (H/2)×(W/2)
  RectF rect;   // crop window in source pixels
  bool flipped = false;
};

/// Random resized crop to half resolution, then flip, colour jitter, colour
/// drop and Gaussian blur, each drawn from `rng` in that order.
AugmentedView augment(const Image& image, const AugmentConfig& config, Rng& rng);

/// argmax over 0.5·(M + P̂) per location (ties to the lower index), nearest
/// upsampled to out_rows×out_cols (0 keeps the grid).
LabelGrid bootstrap_labels(const Stack& responses, const Stack& teacher, int out_rows = 0, int out_cols = 0);

/// Adam with a fixed learning rate.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(nn::ParamSet& params, const nn::ParamSet& grads);
  int steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  nn::ParamSet m_, v_;
};

/// One training image with its pseudo-label targets.
struct TrainSample {
  std::string id;
  Image image;    // working resolution H×W
  Stack targets;  // normalized responses in label order on the h×w patch grid
  std::optional<LabelGrid> fg_prior;  // h×w, enables the role override
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  loss::LossWeights weights;
  AugmentConfig augment;
  /// Role of each target channel. With a foreground prior, crops classified
  /// as foreground zero the background-role channels and vice versa.
  std::vector<ConceptRole> channel_roles;
  double fg_threshold = 0.5, bg_threshold = 0.8;
  std::uint64_t seed = 0;
};

struct LossStats {
  double total = 0, peer = 0, diversity = 0, uncertainty = 0;
};

struct RoundResult {
  DecoderModel student;
  std::vector<LossStats> epochs;  // mean over the epoch's batches
  int steps = 0;
};

/// Trains a freshly initialized student against bootstrapped labels. A null
/// teacher acts as the uniform predictor. Throws NumericError on a
/// non-finite loss.
RoundResult train_round(const EncoderModel& encoder, const DecoderModel* teacher, const DecoderConfig& student_config,
                        std::span<const TrainSample> samples, const TrainConfig& config, int round);

struct RoundMetrics {
  int round = 0;
  double miou = 0, pixel_acc = 0;
  LossStats losses;  // final epoch
  bool evaluated = false;

  std::string to_jsonl() const;
};

/// Teacher, student and round counter between rounds.
struct BootstrapState {
  int round = 0;
  std::optional<DecoderModel> teacher;
  std::optional<DecoderModel> student;
};

struct BootstrapResult {
  std::vector<DecoderModel> students;  // one per round
  std::vector<RoundMetrics> rounds;
  const DecoderModel& final_student() const { return students.back(); }
};

using RoundEvaluator = std::function<EvalReport(const DecoderModel&)>;
using RoundCallback = std::function<void(const RoundMetrics&, const DecoderModel&)>;

/// Round 1 trains against a uniform teacher; each later round copies the
/// previous student into the teacher and retrains the student from its
/// initial state.
BootstrapResult run_bootstrap(const EncoderModel& encoder, const DecoderConfig& decoder_config,
                              std::span<const TrainSample> samples, const TrainConfig& config, int rounds,
                              const RoundEvaluator& evaluate = {}, const RoundCallback& on_round = {});

}  // namespace tfgu
