#include "spaformer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "spaformer/checkpoint.hpp"
#include "spaformer/errors.hpp"
#include "spaformer/png_io.hpp"

namespace spaformer {
namespace {

Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& items) {
  const Shape s0 = items.front()->shape();
  Tensor<float> out(Shape{items.size(), s0.c, s0.h, s0.w});
  std::size_t off = 0;
  for (const Tensor<float>* t : items) {
    const Shape s = t->shape();
    if (s.n != 1 || s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw ContractViolation("train: batch items differ in shape, " + s0.str() + " vs " + s.str());
    }
    std::copy(t->data(), t->data() + t->size(), out.data() + off);
    off += t->size();
  }
  return out;
}

double scalar(const Var<float>& v) { return static_cast<double>(v.value()[0]); }

void require_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw NonFiniteError(std::string(what) + " is not finite at step " + std::to_string(step));
  }
}

metrics::MetricsReport evaluate_held_out(const Model<float>& model, const TripletSource& data, std::size_t limit) {
  std::vector<metrics::PairSums> sums;
  for (std::size_t i = 0; i < std::min(limit, data.size); ++i) {
    const ShadowTriplet t = data.get(i);
    const InferResult r = infer(model, t.shadow);
    try {
      sums.push_back(metrics::accumulate_pair(r.restored, t.free, t.mask));
    } catch (const EmptyRegionError&) {
      // an image without shadow (or without background) has no region score
    }
  }
  if (sums.empty()) throw EmptyRegionError("held-out evaluation: no image has both regions");
  return metrics::aggregate(sums);
}

}  // namespace

void TrainConfig::validate() const {
  adam().validate();
  if (epochs < 0) throw ContractViolation("epochs must be >= 0");
  if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
  if (max_steps < 0) throw ContractViolation("max_steps must be >= 0");
  if (channel_weights.size() != 3) throw ContractViolation("channel_weights needs 3 values");
  if (!(l1_divisor > 0.0)) throw ContractViolation("l1_divisor must be > 0");
  for (double w : {weights.l1, weights.cgan, weights.attention}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractViolation("loss weights must be finite and >= 0");
  }
  if (checkpoint_interval < 0) throw ContractViolation("checkpoint_interval must be >= 0");
}

TripletSource in_memory(std::vector<ShadowTriplet> triplets) {
  auto shared = std::make_shared<std::vector<ShadowTriplet>>(std::move(triplets));
  return {shared->size(), [shared](std::size_t i) { return shared->at(i); }};
}

TripletSource from_index(const DatasetIndex& index, const std::vector<std::string>& ids, std::size_t image_size) {
  auto idx = std::make_shared<DatasetIndex>(index);
  auto list = std::make_shared<std::vector<std::string>>(ids);
  std::optional<std::pair<std::size_t, std::size_t>> target;
  if (image_size > 0) target = std::make_pair(image_size, image_size);
  return {list->size(), [idx, list, target](std::size_t i) { return load_triplet(*idx, list->at(i), target); }};
}

double discriminator_update(Model<float>& model, Optimizers& opt, const AdamConfig& adam, const Var<float>& x,
                            const Var<float>& y, const Var<float>& fake, std::int64_t step) {
  const Var<float> d_loss =
      losses::discriminator_loss(discriminator_forward(x, y, model), discriminator_forward(x, detach(fake), model));
  require_finite(scalar(d_loss), "discriminator loss", step);
  model.discriminator_set.zero_grad();
  backward(d_loss);
  adam_step(model.discriminator_set, opt.discriminator, adam);
  return scalar(d_loss);
}

losses::LossBreakdown generator_update(Model<float>& model, Optimizers& opt, const TrainConfig& config,
                                       const Var<float>& x, const Var<float>& y, const Var<float>& mask,
                                       const GeneratorOutput<float>& out, double d_loss, std::int64_t step) {
  // scores come from the discriminator as it stands after its own update
  const Var<float> g_adv =
      losses::generator_adversarial_loss(discriminator_forward(x, out.restored, model), config.gan_form);
  const Var<float> l1 = losses::l1_weighted(out.restored, y, config.channel_weights, config.l1_divisor);
  const Var<float> att = config.attention_all_steps
                             ? losses::attention_loss_steps(out.attention_steps, mask, config.attention_mean)
                             : losses::attention_loss(out.attention, mask, config.attention_mean);
  const Var<float> total = losses::total_loss(l1, g_adv, att, config.weights);
  require_finite(scalar(total), "generator loss", step);
  model.generator_set.zero_grad();
  backward(total);
  adam_step(model.generator_set, opt.generator, config.adam());
  return losses::breakdown(scalar(l1), scalar(g_adv), d_loss, scalar(att), config.weights);
}

TrainLog train(Model<float>& model, const TripletSource& data, const TrainConfig& config,
               const TripletSource* held_out, const TrainHooks& hooks) {
  config.validate();
  if (data.size == 0) throw ContractViolation("train: dataset is empty");
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  TrainLog log;
  std::mt19937_64 rng(config.seed);
  Optimizers optimizers(model);
  const AdamConfig adam = config.adam();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  std::int64_t step = 0;
  bool done = config.max_steps > 0 && step >= config.max_steps;

  std::vector<std::size_t> order(data.size);
  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);

    for (std::size_t start = 0; start < order.size() && !done; start += batch) {
      const auto t_step = clock::now();
      std::vector<ShadowTriplet> items;
      for (std::size_t k = start; k < std::min(start + batch, order.size()); ++k) items.push_back(data.get(order[k]));
      std::vector<const Tensor<float>*> sh, fr, ma;
      for (const auto& t : items) {
        sh.push_back(&t.shadow);
        fr.push_back(&t.free);
        ma.push_back(&t.mask);
      }
      const Var<float> x = constant(to_model_range(stack_batch(sh)));
      const Var<float> y = constant(to_model_range(stack_batch(fr)));
      const Var<float> m = constant(stack_batch(ma));

      ForwardOptions<float> fwd;
      fwd.training = true;
      fwd.rng = &rng;
      const GeneratorOutput<float> out = generator_forward(x, model, fwd);
      const double d_loss = discriminator_update(model, optimizers, adam, x, y, out.restored, step);
      const losses::LossBreakdown b = generator_update(model, optimizers, config, x, y, m, out, d_loss, step);

      log.history.push_back(b);
      log.step_seconds.push_back(std::chrono::duration<double>(clock::now() - t_step).count());
      ++step;
      if (!hooks.checkpoint_path.empty() && config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0) {
        save_checkpoint(hooks.checkpoint_path, model);
      }
      if (hooks.on_step) hooks.on_step(step, b);
      done = config.max_steps > 0 && step >= config.max_steps;
    }
    if (held_out != nullptr && config.eval_images > 0) {
      log.evals.push_back({epoch + 1, evaluate_held_out(model, *held_out, config.eval_images)});
    }
  }
  if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model);
  log.total_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return log;
}

InferResult infer(const Model<float>& model, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ContractViolation("infer: expected (1, 3, H, W), got " + s.str());
  NoGradGuard guard;
  const GeneratorOutput<float> out = generator_forward(constant(to_model_range(image)), model);
  InferResult r;
  r.restored = from_model_range(out.restored.value());
  for (const auto& a : out.attention_steps) {
    Tensor<float> t(a.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(std::round(a.value()[i] * 255.0f), 0.0f, 255.0f);
    r.attention.push_back(std::move(t));
  }
  return r;
}

std::vector<std::string> infer_file(const Model<float>& model, const std::string& in_path, const std::string& out_dir,
                                    const InferFileOptions& options) {
  Image8 img = read_png(in_path);
  if (img.channels == 1) {
    Image8 rgb{img.width, img.height, 3, std::vector<std::uint8_t>(img.pixels.size() * 3)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) rgb.pixels[3 * i + c] = img.pixels[i];
    img = std::move(rgb);
  }
  Tensor<float> input = image_to_tensor(img);
  const std::size_t mult = model.config.spatial_multiple();
  const std::size_t h = input.shape().h, w = input.shape().w;
  const bool fits = h % mult == 0 && w % mult == 0;
  if (!fits && !options.resize_to_fit) {
    throw ContractViolation(in_path + ": size " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by " + std::to_string(mult));
  }
  if (!fits) {
    const std::size_t nh = std::max(mult, h / mult * mult), nw = std::max(mult, w / mult * mult);
    std::cerr << "warning: " << in_path << " resized from " << h << "x" << w << " to " << nh << "x" << nw
              << " and back\n";
    input = resize_bilinear(input, nh, nw);
  }
  InferResult r = infer(model, input);
  if (!fits) {
    r.restored = from_model_range(to_model_range(resize_bilinear(r.restored, h, w)));
    for (auto& a : r.attention) a = resize_bilinear(a, h, w);
  }

  std::filesystem::create_directories(out_dir);
  const std::string stem = std::filesystem::path(in_path).stem().string();
  std::vector<std::string> written;
  const std::string main_path = (std::filesystem::path(out_dir) / (stem + ".png")).string();
  write_png(main_path, tensor_to_image(r.restored));
  written.push_back(main_path);
  for (std::size_t k = 0; k < r.attention.size(); ++k) {
    const std::string p = (std::filesystem::path(out_dir) / (stem + "_att" + std::to_string(k + 1) + ".png")).string();
    write_png(p, tensor_to_image(r.attention[k]));
    written.push_back(p);
  }
  return written;
}

}  // namespace spaformer
