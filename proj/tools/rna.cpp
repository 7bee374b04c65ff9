// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rna/arch/stats.hpp"
#include "rna/harness/config.hpp"
#include "rna/harness/train.hpp"
#include "rna/pathprof.hpp"
#include "rna/seg.hpp"
#include "rna/unravel.hpp"

namespace fs = std::filesystem;
using namespace rna;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

struct NetOptions {
  std::string net = "chain:4x8";
  std::string widths;
  std::string weights;
  std::size_t classes = 10;
  std::size_t size = 0;  // input extent, 0 = spec default
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "config file (key = value)");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--set", c.sets, "config override key=value (repeatable)");
}

void add_net(CLI::App* app, NetOptions& n, bool classes = true) {
  app->add_option("--net,--spec", n.net, "architecture string or chain:<units>x<width>");
  app->add_option("--widths", n.widths, "level widths a,b,c,d,e,f,g");
  app->add_option("--weights,--in", n.weights, "weights file to load");
  if (classes) app->add_option("--classes", n.classes, "classifier outputs");
  app->add_option("--size", n.size, "input extent in pixels");
}

// "0..4" or "0,2,4".
std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const auto lo = std::stoul(text.substr(0, dots)), hi = std::stoul(text.substr(dots + 2));
      for (auto k = lo; k <= hi; ++k) ks.push_back(k);
      return ks;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) ks.push_back(std::stoul(item));
  } catch (const std::logic_error&) {
    throw harness::ConfigError("--k expects a..b or a comma list, got '" + text + "'");
  }
  return ks;
}

// Classifier width stored in a weights file, if any.
std::optional<std::size_t> stored_classes(const std::string& weights) {
  const auto state = load_weights(weights);
  const auto it = state.find("head.fc.weight");
  if (it == state.end()) return std::nullopt;
  return it->second.dim(0);
}

harness::TrainConfig load(const Common& c) {
  harness::TrainConfig cfg = c.config.empty() ? harness::TrainConfig{} : harness::load_config(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw harness::ConfigError("--set expects key=value, got '" + kv + "'");
    harness::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  harness::validate(cfg);
  return cfg;
}

struct BuiltNet {
  arch::Network net;
  std::size_t input = 0;
  bool chain = false;
  std::size_t channels = 3;
};

BuiltNet make_net(const NetOptions& n, std::uint64_t seed) {
  BuiltNet b;
  if (n.net.starts_with("chain:")) {
    const auto body = n.net.substr(6);
    const auto x = body.find('x');
    if (x == std::string::npos) throw harness::ConfigError("chain nets are written chain:<units>x<width>");
    unravel::ChainSpec cs;
    try {
      cs.units = std::stoul(body.substr(0, x));
      cs.channels = std::stoul(body.substr(x + 1));
    } catch (const std::logic_error&) {
      throw harness::ConfigError("bad chain description '" + n.net + "'");
    }
    cs.classes = n.classes;
    b.net = unravel::make_chain(cs, {seed});
    b.input = n.size ? n.size : 8;
    b.chain = true;
    b.channels = cs.channels;
  } else {
    auto spec = arch::parse_spec(n.net);
    if (!n.widths.empty()) spec.level_widths = arch::parse_widths(n.widths);
    spec.num_classes = n.classes;
    b.net = arch::build(spec, {seed});
    b.net.init_running_stats_identity();
    b.input = n.size ? n.size : spec.input_size;
  }
  if (!n.weights.empty()) b.net.load_state_dict(load_weights(n.weights));
  return b;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

std::string metric_line(harness::Task task, const harness::MetricRecord& r) {
  if (task == harness::Task::kClassify) return fmt::format("accuracy {:.4f}  loss {:.6g}", r.accuracy, r.loss);
  return fmt::format("pixel_acc {:.4f}  mean_acc {:.4f}  mean_iou {:.4f}", r.pixel_acc, r.mean_acc,
                     r.mean_iou);
}

int cmd_build(const Common& c, const NetOptions& n) {
  auto b = make_net(n, c.seed.value_or(0));
  if (b.net.spec()) {
    const auto st = arch::stats(*b.net.spec());
    std::cout << arch::stats_text(*b.net.spec(), st);
    if (!c.out.empty()) {
      fs::create_directories(c.out);
      write_text(fs::path(c.out) / "stats.csv", arch::stats_csv_header() + arch::stats_csv_row(n.net, st));
    }
  } else {
    std::cout << fmt::format("{}: {} layers, {} parameters\n", n.net, b.net.size(), b.net.param_count());
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    save_weights(fs::path(c.out) / "weights.rnwt", b.net.state_dict());
  }
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = load(c);
  const auto res = harness::train(cfg, cfg.out_dir);
  const auto& last = res.records.back();
  std::cout << fmt::format("{} iterations{}; last batch: {}\n", res.iterations,
                           res.early_stopped ? " (early stop)" : "", metric_line(cfg.task, last));
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& weights) {
  const auto cfg = load(c);
  const auto w = weights.empty() ? fs::path(cfg.out_dir) / "weights.rnwt" : fs::path(weights);
  const auto rec = harness::evaluate(cfg, w);
  std::cout << fmt::format("crop {}: {}\n", cfg.resolved_eval_crop(), metric_line(cfg.task, rec));
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "eval.csv", harness::metrics_csv(cfg.task, {rec}));
  }
  return 0;
}

int cmd_unravel(const Common& c, NetOptions n, std::optional<std::size_t> depth) {
  n.classes = 0;
  auto b = make_net(n, c.seed.value_or(0));
  if (!b.chain) throw harness::ConfigError("unravel needs a chain:<units>x<width> network");
  Rng rng(c.seed.value_or(0) + 1);
  std::vector<double> xs(2 * b.channels * b.input * b.input);
  for (auto& v : xs) v = rng.normal();
  const auto x = Tensor::from({2, b.channels, b.input, b.input}, xs);
  const auto terms = unravel::expand(b.net, x, depth);
  const auto fwd = b.net.forward(x, unravel::analysis_options());
  const double rel = unravel::l2_distance(unravel::sum_terms(terms), fwd) / unravel::l2_norm(fwd.values());
  std::string csv = "term,actual_depth,norm\n";
  for (const auto& t : terms) {
    csv += fmt::format("{},{},{:.17g}\n", t.index, t.actual_depth, unravel::l2_norm(t.value.values()));
  }
  std::cout << csv;
  std::cout << fmt::format("relative gap |sum - forward| / |forward| = {:.3e}\n", rel);
  const auto units = unravel::chain_units(b.net);
  std::vector<double> as(xs.size()), bs(xs.size());
  for (auto& v : as) v = rng.normal();
  for (auto& v : bs) v = rng.normal();
  const auto ta = Tensor::from(x.shape(), as), tb = Tensor::from(x.shape(), bs);
  for (std::size_t i = 0; i < units.size(); ++i) {
    std::cout << fmt::format("unit {} nonlinearity gap {:.6g}\n", i + 1,
                             unravel::nonlinearity_gap(unravel::unit_mapping(b.net, units[i]), ta, tb));
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "unravel.csv", csv);
  }
  return 0;
}

int cmd_profile(const Common& c, const NetOptions& n, std::size_t batch, std::size_t trials,
                const std::string& k_text) {
  std::vector<std::size_t> ks = k_text.empty() ? std::vector<std::size_t>{} : parse_ks(k_text);
  auto b = make_net(n, c.seed.value_or(0));
  Rng rng(c.seed.value_or(0) + 1);
  std::vector<double> xs(batch * b.channels * b.input * b.input);
  for (auto& v : xs) v = rng.normal();
  const auto x = Tensor::from({batch, b.channels, b.input, b.input}, xs);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.below(n.classes));
  pathprof::PathProfiler prof(b.net, x, labels);
  if (ks.empty()) {
    for (std::size_t k = 0; k <= prof.units(); ++k) ks.push_back(k);
  }
  const auto rep = pathprof::profile(prof, ks, trials, c.seed.value_or(0), n.net);
  std::cout << pathprof::summary_csv(rep);
  std::cout << fmt::format("spearman(k, median) = {:.4f}\n", pathprof::median_trend(rep));
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  if (!c.out.empty()) {
    const fs::path out(c.out);
    fs::create_directories(out);
    write_text(out / "profile.csv", pathprof::summary_csv(rep));
    write_text(out / "profile_samples.csv", pathprof::samples_csv(rep));
    write_text(out / "profile.svg", pathprof::median_svg(rep));
  }
  return 0;
}

int cmd_fcn(const Common& c, NetOptions n, const std::string& head_kind, std::size_t hidden,
            std::size_t seg_classes, std::size_t target) {
  if (n.net.starts_with("chain:")) throw harness::ConfigError("fcn-convert needs an architecture string");
  if (!n.weights.empty()) n.classes = stored_classes(n.weights).value_or(n.classes);
  auto b = make_net(n, c.seed.value_or(0));
  const auto& spec = *b.net.spec();
  const auto plan = target ? seg::plan_dilation(b.net, target) : seg::plan_dilation(b.net);
  const seg::SegHead head{head_kind == "1conv" ? arch::SegHeadKind::kOneConv : arch::SegHeadKind::kTwoConv,
                          hidden, seg_classes, 12};
  auto fcn = seg::to_fcn(b.net, plan, head, seg::DropoutPolicy::for_spec(spec), {c.seed.value_or(0)});
  std::string text = fmt::format("output stride {}\n", plan.target_stride);
  for (const auto& s : plan.steps) {
    text += fmt::format("{} {}: stride {} -> {}, dilation {} -> {}\n", s.name, s.part, s.stride_before,
                        s.stride_after, s.dilation_before, s.dilation_after);
  }
  const auto feat = seg::feature_layer(fcn);
  text += fmt::format("feature receptive field {} px, head receptive field {} px\n",
                      arch::receptive_field(fcn, feat),
                      seg::head_receptive_field(head, arch::output_stride(fcn.layers(), feat)));
  std::cout << text;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "plan.txt", text);
    save_weights(fs::path(c.out) / "weights.rnwt", fcn.state_dict());
  }
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const auto rep = harness::report(dirs, c.out.empty() ? fs::path("report") : fs::path(c.out));
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << rep.markdown;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual network analysis toolkit"};
  app.require_subcommand(1);

  Common common;
  NetOptions net;
  std::string weights;
  std::optional<std::size_t> depth;
  std::size_t batch = 8, trials = 20;
  std::string ks;
  std::string head = "2conv";
  std::size_t hidden = 512, seg_classes = 21, target = 0;
  std::vector<std::string> runs;

  auto* build = app.add_subcommand("build", "build a network and print its statistics");
  add_common(build, common);
  add_net(build, net);

  auto* train = app.add_subcommand("train", "train from a config");
  add_common(train, common);

  auto* evaluate = app.add_subcommand("evaluate", "single-crop evaluation of trained weights");
  add_common(evaluate, common);
  evaluate->add_option("--weights", weights, "weights file (default <out_dir>/weights.rnwt)");

  auto* unr = app.add_subcommand("unravel", "expand a residual chain into its terms");
  add_common(unr, common);
  add_net(unr, net);
  unr->add_option("--effective-depth", depth, "truncate terms at this depth");

  auto* prof = app.add_subcommand("profile-paths", "gradient norm by path length");
  add_common(prof, common);
  add_net(prof, net);
  prof->add_option("--batch", batch, "random input batch size");
  prof->add_option("--trials", trials, "paths sampled per k");
  prof->add_option("--k", ks, "path lengths as a..b or a comma list (default 0..units)");

  auto* fcn = app.add_subcommand("fcn-convert", "rewrite a classifier for dense prediction");
  add_common(fcn, common);
  add_net(fcn, net, false);
  fcn->add_option("--head", head, "1conv or 2conv")->check(CLI::IsMember({"1conv", "2conv"}));
  fcn->add_option("--hidden", hidden, "hidden width of the two-conv head");
  fcn->add_option("--classes", seg_classes, "segmentation classes");
  fcn->add_option("--target-stride", target, "output stride (default by input family)");

  auto* rep = app.add_subcommand("report", "tabulate and plot finished runs");
  add_common(rep, common);
  rep->add_option("runs", runs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*build) return cmd_build(common, net);
    if (*train) return cmd_train(common);
    if (*evaluate) return cmd_evaluate(common, weights);
    if (*unr) return cmd_unravel(common, net, depth);
    if (*prof) return cmd_profile(common, net, batch, trials, ks);
    if (*fcn) return cmd_fcn(common, net, head, hidden, seg_classes, target);
    if (*rep) return cmd_report(common, runs);
  } catch (const harness::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericExit;
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
