// spaformer train | infer | eval

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spaformer/checkpoint.hpp"
#include "spaformer/config_file.hpp"
#include "spaformer/data.hpp"
#include "spaformer/errors.hpp"
#include "spaformer/metrics.hpp"
#include "spaformer/png_io.hpp"
#include "spaformer/trainer.hpp"

namespace fs = std::filesystem;
using namespace spaformer;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kContract = 4, kNonFinite = 5, kEmptyRegion = 6 };

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '"', '\'');
  return s;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << "error kind=" << kind << " message=\"" << one_line(message) << "\"\n";
  return code;
}

std::map<std::string, std::string> pngs_by_stem(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir, "not a directory");
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path().string();
  }
  return out;
}

Tensor<float> load_rgb(const std::string& path) {
  Image8 img = read_png(path);
  if (img.channels == 3) return image_to_tensor(img);
  Tensor<float> gray = image_to_tensor(img);
  Tensor<float> rgb(Shape{1, 3, img.height, img.width});
  for (std::size_t c = 0; c < 3; ++c) std::copy(gray.data(), gray.data() + gray.size(), rgb.plane(0, c));
  return rgb;
}

Tensor<float> load_mask(const std::string& path) {
  Image8 img = read_png(path);
  Tensor<float> t = image_to_tensor(img);
  if (img.channels == 3) {
    Tensor<float> one(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < one.size(); ++i) one[i] = 0.299f * t.plane(0, 0)[i] + 0.587f * t.plane(0, 1)[i] + 0.114f * t.plane(0, 2)[i];
    t = one;
  }
  return binarize(t);
}

int run_train(const std::string& data, const std::string& out, const std::string& config_path, std::int64_t steps) {
  RunConfig rc = config_path.empty() ? RunConfig{} : load_config_file(config_path);
  if (steps > 0) rc.train.max_steps = steps;
  rc.model.validate();
  rc.train.validate();
  ScanOptions scan;
  scan.seed = rc.train.seed;
  const DatasetIndex index = scan_istd(data, scan);
  for (const auto& miss : index.incomplete) {
    std::string what;
    for (const auto& m : miss.missing) what += (what.empty() ? "" : ",") + m;
    std::cerr << "incomplete id=" << miss.id << " missing=" << what << '\n';
  }
  if (index.train_ids.empty()) throw IoError(data, "no training triplets");
  std::cerr << "dataset train=" << index.train_ids.size() << " test=" << index.test_ids.size() << '\n';

  fs::create_directories(out);
  Model<float> model = init_params<float>(rc.model);
  const TripletSource train_src = from_index(index, index.train_ids, rc.train.image_size);
  const TripletSource test_src = from_index(index, index.test_ids, rc.train.image_size);

  std::ofstream log((fs::path(out) / "train_log.csv").string());
  log << "step,l1,cgan_g,cgan_d,attention,total\n";
  TrainHooks hooks;
  hooks.checkpoint_path = (fs::path(out) / "checkpoint.spf").string();
  hooks.on_step = [&](std::int64_t step, const losses::LossBreakdown& b) {
    log << step << ',' << b.l1 << ',' << b.l_cgan_g << ',' << b.l_cgan_d << ',' << b.l_attention << ',' << b.total
        << '\n';
    if (step % 50 == 0) std::cerr << "step " << step << " l1=" << b.l1 << " total=" << b.total << '\n';
  };
  const TrainLog result = train(model, train_src, rc.train, test_src.size > 0 ? &test_src : nullptr, hooks);
  for (const auto& e : result.evals) {
    std::cerr << "epoch " << e.epoch << " rmse=" << e.report.rmse_all << " psnr=" << e.report.psnr_all << '\n';
  }
  std::cout << "steps=" << result.history.size() << " checkpoint=" << hooks.checkpoint_path
            << " seconds=" << result.total_seconds << '\n';
  return kOk;
}

int run_infer(const std::string& ckpt, const std::string& in, const std::string& out, bool resize) {
  const Model<float> model = load_checkpoint(ckpt);
  std::vector<std::string> inputs;
  if (fs::is_directory(in)) {
    for (const auto& [stem, path] : pngs_by_stem(in)) inputs.push_back(path);
  } else {
    inputs.push_back(in);
  }
  if (inputs.empty()) throw IoError(in, "no PNG inputs");
  InferFileOptions opt;
  opt.resize_to_fit = resize;
  std::size_t files = 0;
  for (const auto& path : inputs) files += infer_file(model, path, out, opt).size();
  std::cout << "images=" << inputs.size() << " files=" << files << '\n';
  return kOk;
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& mask, const std::string& report,
             bool pooled) {
  const auto p = pngs_by_stem(pred), g = pngs_by_stem(gt), m = pngs_by_stem(mask);
  if (p.empty()) throw IoError(pred, "no PNG predictions");
  std::vector<metrics::PairSums> sums;
  for (const auto& [stem, path] : p) {
    if (!g.count(stem)) throw IoError(path, "no ground truth named " + stem + ".png");
    if (!m.count(stem)) throw IoError(path, "no mask named " + stem + ".png");
    sums.push_back(metrics::accumulate_pair(load_rgb(path), load_rgb(g.at(stem)), load_mask(m.at(stem))));
  }
  const auto mode = pooled ? metrics::Averaging::pooled : metrics::Averaging::per_image;
  const metrics::MetricsReport r = metrics::aggregate(sums, mode);
  if (!fs::path(report).parent_path().empty()) fs::create_directories(fs::path(report).parent_path());
  std::ofstream csv(report);
  if (!csv) throw IoError(report, "cannot write report");
  csv << metrics::to_csv(r);
  const std::string kv_path = report + ".kv";
  std::ofstream kv(kv_path);
  if (!kv) throw IoError(kv_path, "cannot write report");
  kv << metrics::to_key_values(r, mode);
  std::cout << metrics::to_csv(r);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shadow removal: train, infer and evaluate"};
  app.require_subcommand(1);

  std::string data, out, config_path;
  std::int64_t steps = 0;
  auto* train_cmd = app.add_subcommand("train", "train from an ISTD-style dataset");
  train_cmd->add_option("--data", data, "dataset root")->required();
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--steps", steps, "stop after this many steps (overrides max_steps)");

  std::string ckpt, in, infer_out;
  bool resize = false;
  auto* infer_cmd = app.add_subcommand("infer", "restore images with a checkpoint");
  infer_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--in", in, "PNG file or directory")->required();
  infer_cmd->add_option("--out", infer_out, "output directory")->required();
  infer_cmd->add_flag("--resize-to-fit", resize, "resize indivisible inputs instead of failing");

  std::string pred, gt, mask, report;
  bool pooled = false;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred", pred, "directory of restored PNGs")->required();
  eval_cmd->add_option("--gt", gt, "directory of shadow-free PNGs")->required();
  eval_cmd->add_option("--mask", mask, "directory of shadow masks")->required();
  eval_cmd->add_option("--report", report, "CSV report path; key=value copy goes to <report>.kv")->required();
  eval_cmd->add_flag("--pooled", pooled, "pool pixels over the dataset instead of averaging per image");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*train_cmd) return run_train(data, out, config_path, steps);
    if (*infer_cmd) return run_infer(ckpt, in, infer_out, resize);
    if (*eval_cmd) return run_eval(pred, gt, mask, report, pooled);
  } catch (const IoError& e) {
    return fail("io", e.what(), kIo);
  } catch (const ContractViolation& e) {
    return fail("contract", e.what(), kContract);
  } catch (const NonFiniteError& e) {
    return fail("non_finite", e.what(), kNonFinite);
  } catch (const EmptyRegionError& e) {
    return fail("empty_region", e.what(), kEmptyRegion);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kOther);
  }
  return kUsage;
}
