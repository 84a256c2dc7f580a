#pragma once

#include "vhvae/key_value.hpp"
#include "vhvae/model.hpp"
#include "vhvae/trainer.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace vhvae {

/// Everything a CLI run can be configured with. Keys are flat and shared
/// between config files and `--set key=value` overrides.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  double holdout_fraction = 0.1;  // 0 disables the held-out split
  int ppq = 480;
  std::uint64_t sample_seed = 42;

  void apply(const std::string& key, const std::string& value) {
    if (model.apply(key, value) || train.apply(key, value)) return;
    if (key == "holdout_fraction") holdout_fraction = kv::to_double(key, value);
    else if (key == "ppq") ppq = static_cast<int>(kv::to_int(key, value));
    else if (key == "sample_seed") sample_seed = kv::to_u64(key, value);
    else throw ConfigError("unknown config key: " + key);
  }

  /// One seed for initialization, training and sampling.
  void set_seed(std::uint64_t s) {
    model.seed = s;
    train.seed = s;
    sample_seed = s;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    for (const auto& [k, v] : kv::parse(buf.str(), path)) {
      try {
        apply(k, v);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
      }
    }
  }

  void validate() const {
    model.validate();
    train.validate();
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) throw ConfigError("holdout_fraction must be in [0, 1)");
    if (ppq <= 0 || ppq % 4 != 0) throw ConfigError("ppq must be a positive multiple of 4");
  }

  /// key=value listing of every setting, usable as a config file.
  std::string to_text() const {
    std::string s = model.to_text();
    auto put = [&s](const char* k, const std::string& v) { s += std::string(k) + "=" + v + "\n"; };
    put("epochs", std::to_string(train.epochs));
    put("batch_size", std::to_string(train.batch_size));
    put("learning_rate", kv::format_double(train.learning_rate));
    put("adam_beta1", kv::format_double(train.adam_beta1));
    put("adam_beta2", kv::format_double(train.adam_beta2));
    put("adam_eps", kv::format_double(train.adam_eps));
    put("grad_clip_norm", kv::format_double(train.grad_clip_norm));
    put("kl_warmup_steps", std::to_string(train.kl_warmup_steps));
    put("kl_max", kv::format_double(train.kl_max));
    put("lambda_pl", kv::format_double(train.lambda_pl));
    put("train_seed", std::to_string(train.seed));
    put("eval_every", std::to_string(train.eval_every));
    put("max_steps", std::to_string(train.max_steps));
    put("permute_keys", train.permute_keys ? "true" : "false");
    put("focal_gamma", kv::format_double(train.focal.gamma));
    put("focal_alpha", kv::format_double(train.focal.alpha));
    put("holdout_fraction", kv::format_double(holdout_fraction));
    put("ppq", std::to_string(ppq));
    put("sample_seed", std::to_string(sample_seed));
    return s;
  }
};

}  // namespace vhvae
