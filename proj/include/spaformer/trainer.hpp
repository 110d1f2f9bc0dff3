#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spaformer/data.hpp"
#include "spaformer/losses.hpp"
#include "spaformer/metrics.hpp"
#include "spaformer/model.hpp"
#include "spaformer/optim.hpp"

namespace spaformer {

struct TrainConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 200;
  int batch_size = 1;
  std::int64_t max_steps = 0;  // > 0 stops early
  losses::LossWeights weights;
  std::vector<double> channel_weights{1.0, 1.0, 1.0};
  double l1_divisor = 4.0;
  losses::GeneratorGanForm gan_form = losses::GeneratorGanForm::non_saturating;
  bool attention_all_steps = true;  // supervise every progressive map, not just the last
  bool attention_mean = true;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  // steps; 0 writes only the final checkpoint
  std::size_t image_size = 256;          // square resize when loading from disk; 0 keeps native size
  std::size_t eval_images = 0;           // held-out images scored after each epoch

  void validate() const;
  AdamConfig adam() const { return AdamConfig{learning_rate, beta1, beta2, 1e-8}; }
};

struct EpochEval {
  int epoch = 0;
  metrics::MetricsReport report;
};

struct TrainLog {
  std::vector<losses::LossBreakdown> history;  // one entry per completed step
  std::vector<EpochEval> evals;
  std::vector<double> step_seconds;
  double total_seconds = 0.0;
};

/// Random-access supply of triplets, so in-memory sets and on-disk indexes
/// train through the same loop.
struct TripletSource {
  std::size_t size = 0;
  std::function<ShadowTriplet(std::size_t)> get;
};

TripletSource in_memory(std::vector<ShadowTriplet> triplets);
TripletSource from_index(const DatasetIndex& index, const std::vector<std::string>& ids, std::size_t image_size);

struct TrainHooks {
  std::function<void(std::int64_t step, const losses::LossBreakdown&)> on_step;
  std::string checkpoint_path;  // empty: no checkpoints
};

struct Optimizers {
  AdamState<float> generator, discriminator;
  explicit Optimizers(const Model<float>& model)
      : generator(model.generator_set), discriminator(model.discriminator_set) {}
};

/// One discriminator step on (x, y) real vs (x, fake) with fake detached.
/// Returns the discriminator loss. Touches only discriminator parameters.
double discriminator_update(Model<float>& model, Optimizers& opt, const AdamConfig& adam, const Var<float>& x,
                            const Var<float>& y, const Var<float>& fake, std::int64_t step = 0);

/// One generator step on l1 + adversarial + attention. Gradients that reach
/// the discriminator during backward are left in its buffers but never applied.
losses::LossBreakdown generator_update(Model<float>& model, Optimizers& opt, const TrainConfig& config,
                                       const Var<float>& x, const Var<float>& y, const Var<float>& mask,
                                       const GeneratorOutput<float>& out, double d_loss, std::int64_t step = 0);

/// Alternating conditional-GAN training: per step one discriminator update on
/// (shadow, free) vs (shadow, detached restored), then one generator update on
/// the weighted sum of L1, adversarial and attention losses.
TrainLog train(Model<float>& model, const TripletSource& data, const TrainConfig& config,
               const TripletSource* held_out = nullptr, const TrainHooks& hooks = {});

struct InferResult {
  Tensor<float> restored;                  // (1, 3, H, W) in [0, 255], integral
  std::vector<Tensor<float>> attention;    // per step, (1, 1, H, W) in [0, 255], integral
};

/// image: (1, 3, H, W) in [0, 255]. Dropout off, output clamped.
InferResult infer(const Model<float>& model, const Tensor<float>& image);

struct InferFileOptions {
  bool resize_to_fit = false;  // otherwise indivisible sizes are an error
};

/// Writes <out_dir>/<stem>.png and <out_dir>/<stem>_att<k>.png for k = 1..steps.
/// Returns the written paths, restored image first.
std::vector<std::string> infer_file(const Model<float>& model, const std::string& in_path, const std::string& out_dir,
                                    const InferFileOptions& options = {});

}  // namespace spaformer
