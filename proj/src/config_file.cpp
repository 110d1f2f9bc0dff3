#include "spaformer/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "spaformer/errors.hpp"

namespace spaformer {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ContractViolation("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ContractViolation("bad value '" + value + "' for " + key + " (expected true/false)");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool set_train_field(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "beta1") c.beta1 = parse_number<double>(key, value);
  else if (key == "beta2") c.beta2 = parse_number<double>(key, value);
  else if (key == "epochs") c.epochs = parse_number<int>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
  else if (key == "max_steps") c.max_steps = parse_number<std::int64_t>(key, value);
  else if (key == "weight_l1") c.weights.l1 = parse_number<double>(key, value);
  else if (key == "weight_cgan") c.weights.cgan = parse_number<double>(key, value);
  else if (key == "weight_attention") c.weights.attention = parse_number<double>(key, value);
  else if (key == "l1_divisor") c.l1_divisor = parse_number<double>(key, value);
  else if (key == "channel_weights") {
    c.channel_weights.clear();
    std::istringstream is(value);
    std::string part;
    while (std::getline(is, part, ',')) c.channel_weights.push_back(parse_number<double>(key, trim(part)));
  } else if (key == "gan_form") {
    if (value == "non_saturating") c.gan_form = losses::GeneratorGanForm::non_saturating;
    else if (value == "literal") c.gan_form = losses::GeneratorGanForm::literal;
    else throw ContractViolation("bad value '" + value + "' for gan_form (expected non_saturating/literal)");
  } else if (key == "attention_all_steps") c.attention_all_steps = parse_bool(key, value);
  else if (key == "attention_mean") c.attention_mean = parse_bool(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "checkpoint_interval") c.checkpoint_interval = parse_number<std::int64_t>(key, value);
  else if (key == "image_size") c.image_size = parse_number<std::size_t>(key, value);
  else if (key == "eval_images") c.eval_images = parse_number<std::size_t>(key, value);
  else return false;
  return true;
}

}  // namespace

bool set_model_field(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "base_channels") c.base_channels = parse_number<int>(key, value);
  else if (key == "encoder_levels") c.encoder_levels = parse_number<int>(key, value);
  else if (key == "n_ftr_blocks") c.n_ftr_blocks = parse_number<int>(key, value);
  else if (key == "twrnn_steps") c.twrnn_steps = parse_number<int>(key, value);
  else if (key == "use_transformer") c.use_transformer = parse_bool(key, value);
  else if (key == "use_ftr") c.use_ftr = parse_bool(key, value);
  else if (key == "model_seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "transformer_blocks_per_level") c.transformer_blocks_per_level = parse_number<int>(key, value);
  else if (key == "normalize_qk") c.normalize_qk = parse_bool(key, value);
  else if (key == "share_wheel_weights") c.share_wheel_weights = parse_bool(key, value);
  else if (key == "decoder_dropout") c.decoder_dropout = parse_number<double>(key, value);
  else if (key == "disc_channels") c.disc_channels = parse_number<int>(key, value);
  else if (key == "disc_levels") c.disc_levels = parse_number<int>(key, value);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> model_fields(const ModelConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"base_channels", std::to_string(c.base_channels)},
      {"encoder_levels", std::to_string(c.encoder_levels)},
      {"n_ftr_blocks", std::to_string(c.n_ftr_blocks)},
      {"twrnn_steps", std::to_string(c.twrnn_steps)},
      {"use_transformer", b(c.use_transformer)},
      {"use_ftr", b(c.use_ftr)},
      {"model_seed", std::to_string(c.seed)},
      {"transformer_blocks_per_level", std::to_string(c.transformer_blocks_per_level)},
      {"normalize_qk", b(c.normalize_qk)},
      {"share_wheel_weights", b(c.share_wheel_weights)},
      {"decoder_dropout", format_double(c.decoder_dropout)},
      {"disc_channels", std::to_string(c.disc_channels)},
      {"disc_levels", std::to_string(c.disc_levels)},
  };
}

RunConfig parse_config(const std::string& text) {
  RunConfig rc;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  bool model_seed_given = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractViolation("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "model_seed") model_seed_given = true;
    try {
      // "seed" drives both initialization and training unless model_seed is set
      if (key == "seed" && !model_seed_given) rc.model.seed = parse_number<std::uint64_t>(key, value);
      if (!set_model_field(rc.model, key, value) && !set_train_field(rc.train, key, value)) {
        throw ContractViolation("unknown key '" + key + "'");
      }
    } catch (const ContractViolation& e) {
      throw ContractViolation("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace spaformer
