// SPDX-License-Identifier: Apache-2.0
#include "rna/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <sstream>

namespace rna::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"spec", [](auto& c, auto&, auto& v) { c.spec = v; }},
      {"widths", [](auto& c, auto&, auto& v) { c.widths = v; }},
      {"shortcut", [](auto& c, auto& k, auto& v) {
         if (v != "projection" && v != "pad") {
           throw ConfigError(fmt::format("{}: expected projection or pad, got '{}'", k, v));
         }
         c.shortcut = v;
       }},
      {"task", [](auto& c, auto& k, auto& v) {
         if (v == "classify") {
           c.task = Task::kClassify;
         } else if (v == "segment") {
           c.task = Task::kSegment;
         } else {
           throw ConfigError(fmt::format("{}: expected classify or segment, got '{}'", k, v));
         }
       }},
      {"lr_start", [](auto& c, auto& k, auto& v) { c.lr_start = to_double(k, v); }},
      {"lr_end", [](auto& c, auto& k, auto& v) { c.lr_end = to_double(k, v); }},
      {"total_iters", [](auto& c, auto& k, auto& v) { c.total_iters = to_uint(k, v); }},
      {"batch", [](auto& c, auto& k, auto& v) { c.batch = to_uint(k, v); }},
      {"momentum", [](auto& c, auto& k, auto& v) { c.momentum = to_double(k, v); }},
      {"weight_decay", [](auto& c, auto& k, auto& v) { c.weight_decay = to_double(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = to_uint(k, v); }},
      {"precision", [](auto& c, auto&, auto& v) { c.precision = v; }},
      {"init_scale", [](auto& c, auto& k, auto& v) { c.init_scale = to_double(k, v); }},
      {"dataset", [](auto& c, auto&, auto& v) { c.dataset = v; }},
      {"classes", [](auto& c, auto& k, auto& v) { c.classes = to_uint(k, v); }},
      {"image_size", [](auto& c, auto& k, auto& v) { c.image_size = to_uint(k, v); }},
      {"train_examples", [](auto& c, auto& k, auto& v) { c.train_examples = to_uint(k, v); }},
      {"eval_examples", [](auto& c, auto& k, auto& v) { c.eval_examples = to_uint(k, v); }},
      {"noise", [](auto& c, auto& k, auto& v) { c.noise = to_double(k, v); }},
      {"eval_crop", [](auto& c, auto& k, auto& v) { c.eval_crop = to_uint(k, v); }},
      {"out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"log_every", [](auto& c, auto& k, auto& v) { c.log_every = to_uint(k, v); }},
      {"stop_train_acc", [](auto& c, auto& k, auto& v) { c.stop_train_acc = to_double(k, v); }},
      {"check_every", [](auto& c, auto& k, auto& v) { c.check_every = to_uint(k, v); }},
      {"head", [](auto& c, auto& k, auto& v) {
         if (v != "1conv" && v != "2conv") {
           throw ConfigError(fmt::format("{}: expected 1conv or 2conv, got '{}'", k, v));
         }
         c.head = v;
       }},
      {"seg_hidden", [](auto& c, auto& k, auto& v) { c.seg_hidden = to_uint(k, v); }},
      {"crop", [](auto& c, auto& k, auto& v) { c.crop = to_uint(k, v); }},
      {"augment", [](auto& c, auto& k, auto& v) { c.augment = to_bool(k, v); }},
      {"init_weights", [](auto& c, auto&, auto& v) { c.init_weights = v; }},
  };
  return table;
}

}  // namespace

std::size_t TrainConfig::resolved_eval_crop() const {
  if (eval_crop > 0) return eval_crop;
  return static_cast<std::size_t>(std::lround(static_cast<double>(image_size) * 10.0 / 7.0));
}

void set_option(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

TrainConfig parse_config(std::string_view text) {
  TrainConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set_option(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void validate(const TrainConfig& c) {
  if (!(c.lr_end > 0.0)) throw ConfigError("lr_end must be positive");
  if (c.lr_start < c.lr_end) throw ConfigError("lr_start must not be below lr_end");
  if (c.total_iters < 1) throw ConfigError("total_iters must be at least 1");
  if (c.batch < 1) throw ConfigError("batch must be at least 1");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (c.precision != "f64") {
    throw ConfigError("precision '" + c.precision + "' is not supported (only f64)");
  }
  if (c.classes < 1) throw ConfigError("classes must be at least 1");
  if (c.task == Task::kSegment && c.classes > 255) {
    throw ConfigError("segmentation supports at most 255 classes");
  }
  if (c.image_size < 1) throw ConfigError("image_size must be positive");
  if (c.train_examples < 1) throw ConfigError("train_examples must be positive");
  if (c.log_every < 1) throw ConfigError("log_every must be at least 1");
  if (c.check_every < 1) throw ConfigError("check_every must be at least 1");
  if (c.stop_train_acc < 0.0 || c.stop_train_acc > 100.0) {
    throw ConfigError("stop_train_acc is a percentage");
  }
  if (c.init_scale <= 0.0) throw ConfigError("init_scale must be positive");
  if (c.crop < 1) throw ConfigError("crop must be positive");
  if (c.dataset != "blobs" && c.dataset != "segblobs" && !c.dataset.starts_with("cifar10:")) {
    throw ConfigError("unknown dataset '" + c.dataset + "'");
  }
  if ((c.task == Task::kSegment) != (c.dataset == "segblobs")) {
    throw ConfigError("dataset '" + c.dataset + "' does not fit task " + to_string(c.task));
  }
  if (c.dataset.starts_with("cifar10:") && (c.classes != 10 || c.image_size != 32)) {
    throw ConfigError("cifar10 needs classes = 10 and image_size = 32");
  }
  try {
    network_spec(c);
  } catch (const arch::ParseError& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
}

std::string to_text(const TrainConfig& c) {
  std::string s;
  auto put = [&s](std::string_view k, const auto& v) { s += fmt::format("{} = {}\n", k, v); };
  auto num = [&s](std::string_view k, double v) { s += fmt::format("{} = {:.17g}\n", k, v); };
  put("spec", c.spec);
  if (!c.widths.empty()) put("widths", c.widths);
  put("shortcut", c.shortcut);
  put("task", to_string(c.task));
  num("lr_start", c.lr_start);
  num("lr_end", c.lr_end);
  put("total_iters", c.total_iters);
  put("batch", c.batch);
  num("momentum", c.momentum);
  num("weight_decay", c.weight_decay);
  put("seed", c.seed);
  put("precision", c.precision);
  num("init_scale", c.init_scale);
  put("dataset", c.dataset);
  put("classes", c.classes);
  put("image_size", c.image_size);
  put("train_examples", c.train_examples);
  put("eval_examples", c.eval_examples);
  num("noise", c.noise);
  put("eval_crop", c.eval_crop);
  put("out_dir", c.out_dir);
  put("log_every", c.log_every);
  num("stop_train_acc", c.stop_train_acc);
  put("check_every", c.check_every);
  put("head", c.head);
  put("seg_hidden", c.seg_hidden);
  put("crop", c.crop);
  put("augment", c.augment ? "true" : "false");
  if (!c.init_weights.empty()) put("init_weights", c.init_weights);
  return s;
}

double lr_at(const TrainConfig& c, std::size_t iter) {
  if (iter >= c.total_iters) {
    throw std::out_of_range(fmt::format("iteration {} outside [0, {})", iter, c.total_iters));
  }
  if (c.total_iters == 1) return c.lr_start;
  if (iter == c.total_iters - 1) return c.lr_end;
  return c.lr_start + (c.lr_end - c.lr_start) * static_cast<double>(iter) /
                          static_cast<double>(c.total_iters - 1);
}

arch::NetworkSpec network_spec(const TrainConfig& c) {
  auto spec = arch::parse_spec(c.spec);
  if (!c.widths.empty()) {
    try {
      spec.level_widths = arch::parse_widths(c.widths);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("widths: ") + e.what());
    }
  }
  spec.shortcut = c.shortcut == "pad" ? arch::ShortcutPolicy::kPadIdentity
                                      : arch::ShortcutPolicy::kProjection;
  spec.num_classes = c.classes;
  return spec;
}

const char* to_string(Task t) { return t == Task::kClassify ? "classify" : "segment"; }

}  // namespace rna::harness
