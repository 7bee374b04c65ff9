// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rna/arch/stats.hpp"
#include "rna/harness/config.hpp"
#include "rna/harness/data.hpp"
#include "rna/harness/metrics.hpp"
#include "rna/harness/train.hpp"

using namespace rna;
using namespace rna::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rna_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

TrainConfig tiny_classify(std::uint64_t seed) {
  TrainConfig c;
  c.spec = "32-1-1-0-0-0-0-0";
  c.widths = "4,4,8,8,8,8,8";
  c.image_size = 12;
  c.train_examples = 64;
  c.eval_examples = 32;
  c.batch = 8;
  c.total_iters = 12;
  c.log_every = 3;
  c.seed = seed;
  return c;
}

TrainConfig tiny_segment(std::uint64_t seed) {
  TrainConfig c;
  c.task = Task::kSegment;
  c.dataset = "segblobs";
  c.spec = "32-1-1-0-0-0-0-0";
  c.widths = "4,4,8,8,8,8,8";
  c.classes = 3;
  c.image_size = 16;
  c.crop = 16;
  c.seg_hidden = 8;
  c.train_examples = 8;
  c.eval_examples = 4;
  c.batch = 2;
  c.total_iters = 4;
  c.log_every = 1;
  c.lr_start = 0.01;
  c.seed = seed;
  return c;
}

// Per-class counts by direct pixel enumeration.
struct BruteScores {
  double pixel, mean_acc, mean_iou;
};

BruteScores brute_force(const std::vector<int>& lab, const std::vector<int>& pred, int classes) {
  std::size_t valid = 0, correct = 0;
  for (std::size_t i = 0; i < lab.size(); ++i) {
    if (lab[i] == 255) continue;
    ++valid;
    correct += lab[i] == pred[i];
  }
  double acc_sum = 0.0, iou_sum = 0.0;
  int acc_n = 0, iou_n = 0;
  for (int c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (lab[i] == 255) continue;
      if (lab[i] == c && pred[i] == c) ++tp;
      if (lab[i] != c && pred[i] == c) ++fp;
      if (lab[i] == c && pred[i] != c) ++fn;
    }
    if (tp + fn > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
      ++acc_n;
    }
    if (tp + fp + fn > 0) {
      iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      ++iou_n;
    }
  }
  return {100.0 * static_cast<double>(correct) / static_cast<double>(valid),
          100.0 * acc_sum / acc_n, 100.0 * iou_sum / iou_n};
}

}  // namespace

TEST_CASE("lr schedule endpoints are exact") {
  TrainConfig c;
  c.total_iters = 1000;
  CHECK(lr_at(c, 0) == 0.1);
  CHECK(lr_at(c, 999) == 1e-6);
  c.total_iters = 1;
  CHECK(lr_at(c, 0) == 0.1);
  c.total_iters = 7;
  CHECK_THROWS_AS(lr_at(c, 7), std::out_of_range);
}

TEST_CASE("lr schedule is affine") {
  TrainConfig c;
  c.total_iters = 1001;
  CHECK(std::abs(lr_at(c, 500) - (0.1 + 1e-6) / 2) <= 1e-15);
  for (std::size_t i = 1; i + 1 < c.total_iters; ++i) {
    const double d2 = lr_at(c, i + 1) - 2 * lr_at(c, i) + lr_at(c, i - 1);
    REQUIRE(std::abs(d2) <= 1e-15);
  }
}

TEST_CASE("config parsing") {
  const auto c = parse_config(
      "# comment\n"
      "spec = 56-1-1-1-1-9-1-1   # trailing\n"
      "\n"
      "  lr_start=0.05\n"
      "total_iters = 20\n"
      "task = classify\n"
      "augment = false\n");
  CHECK(c.spec == "56-1-1-1-1-9-1-1");
  CHECK(c.lr_start == 0.05);
  CHECK(c.total_iters == 20);
  CHECK_FALSE(c.augment);
  CHECK(c.batch == 16);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
}

TEST_CASE("config errors name the line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("batch = 4\nbogus = 1\n").find("line 2") != std::string::npos);
  CHECK(message("lr_start = abc\n").find("line 1") != std::string::npos);
  CHECK(message("no equals sign\n").find("line 1") != std::string::npos);
  CHECK_THROWS_AS(parse_config("lr_start = 1e-7\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr_end = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("total_iters = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("precision = f32\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("spec = 56-1-1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("task = segment\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = cifar10:x.bin\n"), ConfigError);
}

TEST_CASE("config text round trip") {
  TrainConfig c = tiny_segment(9);
  c.lr_end = 3.3e-7;
  c.noise = 0.123456789012345;
  c.init_weights = "w.rnwt";
  const auto back = parse_config(to_text(c));
  CHECK(to_text(back) == to_text(c));
  CHECK(back.noise == c.noise);
  CHECK(back.task == Task::kSegment);
  CHECK(back.init_weights == "w.rnwt");
}

TEST_CASE("metrics match brute-force enumeration") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const int classes = 1 + static_cast<int>(rng.below(4));
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    std::vector<int> lab(h * w), pred(h * w);
    for (std::size_t i = 0; i < lab.size(); ++i) {
      lab[i] = rng.uniform() < 0.1 ? 255 : static_cast<int>(rng.below(classes));
      pred[i] = static_cast<int>(rng.below(classes));
    }
    lab[0] = static_cast<int>(rng.below(classes));
    ConfusionMatrix cm(classes);
    cm.add(lab, pred);
    const auto s = seg_scores(cm);
    const auto b = brute_force(lab, pred, classes);
    REQUIRE(s.pixel_acc == b.pixel);
    REQUIRE(s.mean_acc == b.mean_acc);
    REQUIRE(s.mean_iou == b.mean_iou);
  }
}

TEST_CASE("hand-computed 4x4 IoU") {
  // Labels: rows 0-1 class 0, rows 2-3 class 1. Predictions: rows 0-2 class 0.
  std::vector<int> lab(16), pred(16);
  for (int i = 0; i < 16; ++i) {
    lab[i] = i < 8 ? 0 : 1;
    pred[i] = i < 12 ? 0 : 1;
  }
  ConfusionMatrix cm(2);
  cm.add(lab, pred);
  const auto s = seg_scores(cm);
  // class 0: TP 8, FP 4, FN 0; class 1: TP 4, FP 0, FN 4.
  CHECK(s.iou[0] == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
  CHECK(s.iou[1] == 0.5);
  CHECK(s.mean_iou == doctest::Approx(100.0 * (8.0 / 12.0 + 0.5) / 2).epsilon(1e-15));
  CHECK(s.pixel_acc == 75.0);
  CHECK(s.mean_acc == 75.0);
}

TEST_CASE("all-background predictions score 25 mean IoU") {
  std::vector<int> lab(16), pred(16, 0);
  for (int i = 0; i < 16; ++i) lab[i] = i < 8 ? 0 : 1;
  ConfusionMatrix cm(2);
  cm.add(lab, pred);
  const auto s = seg_scores(cm);
  CHECK(s.iou[0] == 0.5);
  CHECK(s.iou[1] == 0.0);
  CHECK(s.mean_iou == 25.0);
}

TEST_CASE("perfect predictions and empty classes") {
  std::vector<int> lab = {0, 1, 1, 0, 255, 3};
  ConfusionMatrix cm(4);
  cm.add(lab, std::vector<int>{0, 1, 1, 0, 2, 3});
  const auto s = seg_scores(cm);
  CHECK(s.pixel_acc == 100.0);
  CHECK(s.mean_acc == 100.0);
  CHECK(s.mean_iou == 100.0);
  CHECK(std::isnan(s.iou[2]));
  CHECK(cm.total() == 5);
}

TEST_CASE("confusion matrix rejects out-of-range classes") {
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(2, 0), std::out_of_range);
  CHECK_THROWS_AS(cm.add(0, 5), std::out_of_range);
  CHECK_NOTHROW(cm.add(255, 7));
  CHECK(cm.total() == 0);
}

TEST_CASE("batch sampler visits each index once per epoch") {
  BatchSampler s(10, 3);
  std::multiset<std::size_t> seen;
  for (int k = 0; k < 5; ++k) {
    for (auto i : s.next(4)) seen.insert(i);
  }
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 2);
}

TEST_CASE("training output is deterministic and logs the schedule") {
  const auto cfg = tiny_classify(5);
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto ra = train(cfg, a);
  train(cfg, b);
  const auto text = slurp(a / "metrics.csv");
  CHECK(text == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "weights.rnwt") == slurp(b / "weights.rnwt"));
  CHECK(parse_config(slurp(a / "config.txt")).seed == 5);

  const auto rows = csv_rows(text);
  REQUIRE(rows.size() == 1 + 5);  // iterations 0, 3, 6, 9, 11
  CHECK(rows[0] == std::vector<std::string>{"iter", "lr", "loss", "accuracy"});
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto iter = std::stoul(rows[r][0]);
    CHECK(std::stod(rows[r][1]) == lr_at(cfg, iter));
  }
  CHECK(rows.back()[0] == "11");
  CHECK(ra.iterations == 12);
}

TEST_CASE("training loss decreases over 200 iterations") {
  int decreasing = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    TrainConfig c;
    c.spec = "56-1-1-1-1-2-1-1";
    c.widths = "4,4,4,8,8,8,8";
    c.image_size = 32;
    c.train_examples = 256;
    c.total_iters = 200;
    c.log_every = 1;
    c.seed = static_cast<std::uint64_t>(seed);
    const auto res = train(c, {});
    REQUIRE(res.records.size() == 200);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) {
      head += res.records[i].loss;
      tail += res.records[180 + i].loss;
    }
    decreasing += tail < head;
  }
  CHECK(decreasing >= 19);
}

TEST_CASE("early stop on training accuracy") {
  auto c = tiny_classify(2);
  c.total_iters = 400;
  c.stop_train_acc = 90.0;
  c.check_every = 10;
  c.noise = 0.1;
  const auto res = train(c, {});
  CHECK(res.early_stopped);
  CHECK(res.train_score >= 90.0);
  CHECK(res.iterations % 10 == 0);
  CHECK(res.records.back().iter + 1 == res.iterations);
}

TEST_CASE("non-finite loss aborts with iteration and lr") {
  auto c = tiny_classify(1);
  c.lr_start = 1e250;
  c.lr_end = 1e249;
  try {
    train(c, {});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
}

TEST_CASE("evaluation and class-count mismatch") {
  const auto cfg = tiny_classify(4);
  const auto dir = scratch("eval");
  train(cfg, dir);
  const auto rec = evaluate(cfg, dir / "weights.rnwt");
  CHECK(rec.accuracy >= 0.0);
  CHECK(rec.accuracy <= 100.0);
  CHECK(std::isfinite(rec.loss));
  auto other = cfg;
  other.classes = 3;
  CHECK_THROWS_AS(evaluate(other, dir / "weights.rnwt"), ConfigError);
}

TEST_CASE("segmentation fine-tuning keeps normalization frozen") {
  const auto cfg = tiny_segment(3);
  auto before = make_network(cfg);
  const auto dir = scratch("seg");
  const auto res = train(cfg, dir);
  for (const auto& [name, st] : before.bn_states()) {
    const auto& after = res.net.bn_states().at(name);
    CHECK(after.running_mean == st.running_mean);
    CHECK(after.running_var == st.running_var);
  }
  const auto rows = csv_rows(slurp(dir / "metrics.csv"));
  CHECK(rows[0].back() == "mean_iou");
  CHECK(rows.size() == 5);
  const auto rec = evaluate(cfg, dir / "weights.rnwt");
  CHECK(rec.pixel_acc >= 0.0);
  CHECK(rec.mean_iou <= 100.0);
  auto other = cfg;
  other.classes = 4;
  CHECK_THROWS_AS(evaluate(other, dir / "weights.rnwt"), ConfigError);
}

TEST_CASE("segmentation starts from classification weights") {
  auto cls = tiny_classify(6);
  cls.classes = 5;
  cls.total_iters = 3;
  const auto dir = scratch("pretrain");
  const auto pre = train(cls, dir);
  auto seg = tiny_segment(6);
  seg.init_weights = (dir / "weights.rnwt").string();
  const auto net = make_network(seg);
  const auto& name = pre.net.params().begin()->first;
  const auto a = pre.net.param(name).values();
  const auto b = net.param(name).values();
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST_CASE("CIFAR-10 binary reader") {
  const auto dir = scratch("cifar");
  const auto path = dir / "batch.bin";
  {
    std::ofstream f(path, std::ios::binary);
    for (int r = 0; r < 3; ++r) {
      f.put(static_cast<char>(r * 4));
      for (int i = 0; i < 3072; ++i) f.put(static_cast<char>((i + r) % 256));
    }
  }
  const auto d = read_cifar10(path.string());
  REQUIRE(d.size() == 3);
  CHECK(d.labels == std::vector<int>{0, 4, 8});
  CHECK(d.images[1].height == 32);
  CHECK(d.images[0].data[0] == (0.0 / 255.0 - 0.5) / 0.25);
  CHECK(d.images[2].data[1029] == (((1029 + 2) % 256) / 255.0 - 0.5) / 0.25);
  CHECK(read_cifar10(path.string(), 2).size() == 2);

  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.put(1);
  }
  CHECK_THROWS_AS(read_cifar10(path.string()), FormatError);
  {
    std::ofstream f(path, std::ios::binary);
    f.put(10);
    for (int i = 0; i < 3072; ++i) f.put(0);
  }
  CHECK_THROWS_AS(read_cifar10(path.string()), FormatError);
}

TEST_CASE("PGM round trip") {
  seg::LabelMap m{3, 5, {}};
  for (std::size_t i = 0; i < 15; ++i) m.data.push_back(static_cast<std::uint8_t>(i * 17));
  m.data[4] = 255;
  const auto p = scratch("pgm") / "lab.pgm";
  write_pgm(p.string(), m);
  const auto back = read_pgm(p.string());
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.data == m.data);
}

TEST_CASE("synthetic blobs") {
  const auto d = make_blobs(40, 16, 3, 0.5, 7);
  CHECK(d.size() == 40);
  std::set<int> seen(d.labels.begin(), d.labels.end());
  CHECK(seen.size() == 3);
  const auto again = make_blobs(40, 16, 3, 0.5, 7);
  CHECK(again.images[5].data == d.images[5].data);
  const auto s = make_seg_blobs(5, 16, 4, 0.5, 7);
  for (const auto& lab : s.labels) {
    for (auto v : lab.data) CHECK(v < 4);
  }
}

TEST_CASE("report tables runs and skips malformed ones") {
  const auto root = scratch("report");
  auto a = tiny_classify(1);
  auto b = tiny_classify(2);
  b.spec = "32-2-0-0-0-0-0-0";
  train(a, root / "a");
  train(b, root / "b");
  fs::create_directories(root / "bad");
  std::ofstream(root / "bad" / "config.txt") << to_text(a);
  std::ofstream(root / "bad" / "metrics.csv") << "iter,lr,loss,accuracy\n0,0.1,oops,50\n";
  std::ofstream(root / "a" / "profile.csv")
      << "k,trials,excluded,mean,median,min,max\n0,1,0,2,2,2,2\n1,3,0,1,1,0.5,1.5\n";

  const auto rep = report({root / "a", root / "b", root / "bad"}, root / "out");
  std::size_t table_rows = 0;
  std::stringstream in(rep.markdown);
  std::string line;
  while (std::getline(in, line)) table_rows += line.rfind("| a |", 0) == 0 || line.rfind("| b |", 0) == 0;
  CHECK(table_rows == 2);
  const auto sa = arch::stats(network_spec(a));
  const std::string row_a = "| a | " + a.spec + " | classify | " + std::to_string(sa.depth) +
                            " | " + std::to_string(sa.unit_count) + " | " +
                            std::to_string(sa.param_count) + " |";
  CHECK(rep.markdown.find(row_a) != std::string::npos);
  REQUIRE(rep.warnings.size() == 1);
  CHECK(rep.warnings[0].find("bad") != std::string::npos);
  CHECK(fs::exists(root / "out" / "report.md"));
  CHECK(fs::exists(root / "out" / "loss.svg"));
  CHECK(fs::exists(root / "out" / "profile.svg"));
}
