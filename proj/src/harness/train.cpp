// SPDX-License-Identifier: Apache-2.0
#include "rna/harness/train.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>

#include "rna/seg.hpp"

namespace rna::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto v = logits.values();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[i * c + k] > v[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> argmax_pixels(const Tensor& scores) {
  std::vector<int> out;
  for (const auto& map : seg::predict_labels(scores)) {
    out.insert(out.end(), map.data.begin(), map.data.end());
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

arch::Network build_network(const TrainConfig& cfg, bool load_init) {
  const auto spec = network_spec(cfg);
  const arch::InitOptions init{stream_seed(cfg, Stream::kInit), cfg.init_scale};
  auto net = arch::build(spec, init);
  if (cfg.task == Task::kClassify) {
    if (load_init && !cfg.init_weights.empty()) net.load_state_dict(load_weights(cfg.init_weights));
    return net;
  }
  net.init_running_stats_identity();
  if (load_init && !cfg.init_weights.empty()) {
    auto state = load_weights(cfg.init_weights);
    for (const auto& p : arch::param_shapes(net.layers().back())) state.erase(p.name);
    net.load_state_dict(state, false);
  }
  const seg::SegHead head{cfg.head == "1conv" ? arch::SegHeadKind::kOneConv
                                              : arch::SegHeadKind::kTwoConv,
                          cfg.seg_hidden, cfg.classes, 12};
  return seg::to_fcn(net, seg::plan_dilation(net), head, seg::DropoutPolicy::for_spec(spec), init);
}

seg::AugmentConfig augment_config(const TrainConfig& cfg) {
  seg::AugmentConfig a;
  a.crop = cfg.crop;
  return a;
}

double checked_loss(const Tensor& loss, std::size_t iter, double lr) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericError(fmt::format("non-finite loss {} at iteration {} (lr {:.17g})", v, iter, lr));
  }
  return v;
}

void checked_step(Sgd& opt, arch::Network& net, std::size_t iter, double lr) {
  try {
    opt.step(net, lr);
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("{} at iteration {} (lr {:.17g})", e.what(), iter, lr));
  }
}

}  // namespace

std::string metrics_csv_header(Task task) {
  return task == Task::kClassify ? "iter,lr,loss,accuracy\n"
                                 : "iter,lr,loss,pixel_acc,mean_acc,mean_iou\n";
}

std::string metrics_csv_row(Task task, const MetricRecord& r) {
  if (task == Task::kClassify) {
    return fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.iter, r.lr, r.loss, r.accuracy);
  }
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.iter, r.lr, r.loss,
                     r.pixel_acc, r.mean_acc, r.mean_iou);
}

std::string metrics_csv(Task task, const std::vector<MetricRecord>& records) {
  std::string s = metrics_csv_header(task);
  for (const auto& r : records) s += metrics_csv_row(task, r);
  return s;
}

void Sgd::step(arch::Network& net, double lr) {
  for (const auto& [name, p] : net.params()) {
    if (!p.has_grad()) continue;
    Tensor param = p;
    const auto g = param.grad();
    auto w = param.mutable_values();
    auto& v = velocity_[name];
    if (v.empty()) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + name);
      v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

std::uint64_t stream_seed(const TrainConfig& cfg, Stream s) {
  return Rng(cfg.seed).fork(static_cast<std::uint64_t>(s)).next_u64();
}

arch::Network make_network(const TrainConfig& cfg) { return build_network(cfg, true); }

ClassifyData classify_data(const TrainConfig& cfg, bool eval) {
  const std::size_t count = eval ? cfg.eval_examples : cfg.train_examples;
  if (cfg.dataset.starts_with("cifar10:")) return read_cifar10(cfg.dataset.substr(8), count);
  if (cfg.dataset != "blobs") throw ConfigError("dataset '" + cfg.dataset + "' is not a classification set");
  return make_blobs(count, cfg.image_size, cfg.classes, cfg.noise,
                    stream_seed(cfg, eval ? Stream::kEvalData : Stream::kTrainData));
}

SegmentData segment_data(const TrainConfig& cfg, bool eval) {
  if (cfg.dataset != "segblobs") throw ConfigError("dataset '" + cfg.dataset + "' is not a segmentation set");
  return make_seg_blobs(eval ? cfg.eval_examples : cfg.train_examples, cfg.image_size, cfg.classes,
                        cfg.noise, stream_seed(cfg, eval ? Stream::kEvalData : Stream::kTrainData));
}

double classify_accuracy(arch::Network& net, const ClassifyData& data, std::size_t chunk) {
  NoGradGuard guard;
  std::vector<int> preds;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    std::vector<seg::Image> imgs(data.images.begin() + static_cast<std::ptrdiff_t>(b),
                                 data.images.begin() + static_cast<std::ptrdiff_t>(e));
    const auto p = argmax_rows(net.forward(seg::images_to_batch(imgs), {BnMode::kEval}));
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return accuracy(data.labels, preds);
}

SegScores segment_scores(arch::Network& net, const SegmentData& data, std::size_t crop) {
  NoGradGuard guard;
  ConfusionMatrix cm(data.classes);
  seg::AugmentConfig window;
  window.crop = crop;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [img, lab] = seg::augment_with(data.images[i], data.labels[i], {}, window);
    const auto scores = net.forward(seg::images_to_batch({img}), {BnMode::kEval});
    const auto pred = seg::predict_labels(seg::upsample_bilinear(scores, crop, crop));
    cm.add(std::span<const std::uint8_t>(lab.data), std::span<const std::uint8_t>(pred[0].data));
  }
  return seg_scores(cm);
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out) {
  validate(cfg);
  TrainResult res{make_network(cfg), {}, 0, false, kNaN};
  auto& net = res.net;
  const bool segment = cfg.task == Task::kSegment;
  ClassifyData cdata;
  SegmentData sdata;
  if (segment) {
    sdata = segment_data(cfg, false);
  } else {
    cdata = classify_data(cfg, false);
  }
  const std::size_t count = segment ? sdata.size() : cdata.size();
  BatchSampler sampler(count, stream_seed(cfg, Stream::kSampler));
  Rng drop(stream_seed(cfg, Stream::kDropout));
  Rng aug(stream_seed(cfg, Stream::kAugment));
  const arch::RunOptions run{segment ? BnMode::kFrozen : BnMode::kTrain, true, &drop};
  const auto acfg = augment_config(cfg);
  Sgd opt(cfg.momentum, cfg.weight_decay);

  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    const double lr = lr_at(cfg, it);
    const auto idx = sampler.next(cfg.batch);
    MetricRecord rec{it, lr};
    net.zero_grad();
    if (segment) {
      std::vector<seg::Image> imgs;
      std::vector<seg::LabelMap> labs;
      for (auto i : idx) {
        auto [img, lab] = cfg.augment
                              ? seg::augment_sample(sdata.images[i], sdata.labels[i], aug, acfg)
                              : seg::augment_with(sdata.images[i], sdata.labels[i], {}, acfg);
        imgs.push_back(std::move(img));
        labs.push_back(std::move(lab));
      }
      const auto logits = net.forward(seg::images_to_batch(imgs), run);
      const auto labels = seg::align_labels(labs, logits.dim(2), logits.dim(3));
      const auto loss = softmax_cross_entropy(logits, labels);
      rec.loss = checked_loss(loss, it, lr);
      loss.backward();
      ConfusionMatrix cm(cfg.classes);
      cm.add(std::span<const int>(labels), std::span<const int>(argmax_pixels(logits)));
      const auto s = seg_scores(cm);
      rec.accuracy = kNaN;
      rec.pixel_acc = s.pixel_acc;
      rec.mean_acc = s.mean_acc;
      rec.mean_iou = s.mean_iou;
    } else {
      std::vector<seg::Image> imgs;
      std::vector<int> labels;
      for (auto i : idx) {
        imgs.push_back(cdata.images[i]);
        labels.push_back(cdata.labels[i]);
      }
      const auto logits = net.forward(seg::images_to_batch(imgs), run);
      const auto loss = softmax_cross_entropy(logits, labels);
      rec.loss = checked_loss(loss, it, lr);
      loss.backward();
      rec.accuracy = accuracy(labels, argmax_rows(logits));
      rec.pixel_acc = rec.mean_acc = rec.mean_iou = kNaN;
    }
    checked_step(opt, net, it, lr);
    res.iterations = it + 1;

    const bool last = it + 1 == cfg.total_iters;
    bool logged = false;
    if (it % cfg.log_every == 0 || last) {
      res.records.push_back(rec);
      logged = true;
    }
    if (cfg.stop_train_acc > 0.0 && ((it + 1) % cfg.check_every == 0 || last)) {
      res.train_score = segment ? segment_scores(net, sdata, cfg.crop).pixel_acc
                                : classify_accuracy(net, cdata);
      if (res.train_score >= cfg.stop_train_acc) {
        res.early_stopped = !last;
        if (!logged) res.records.push_back(rec);
        break;
      }
    }
  }

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_file(out / "config.txt", to_text(cfg));
    write_file(out / "metrics.csv", metrics_csv(cfg.task, res.records));
    save_weights(out / "weights.rnwt", net.state_dict());
  }
  return res;
}

MetricRecord evaluate(const TrainConfig& cfg, const std::filesystem::path& weights) {
  validate(cfg);
  const auto state = load_weights(weights);
  auto net = build_network(cfg, false);
  std::string out_weight;
  for (const auto& p : arch::param_shapes(net.layers().back())) {
    if (p.shape.size() >= 2) out_weight = p.name;
  }
  if (!out_weight.empty()) {
    const auto it = state.find(out_weight);
    if (it != state.end() && it->second.rank() >= 1 && it->second.dim(0) != cfg.classes) {
      throw ConfigError(fmt::format("weights predict {} classes but the config has {}",
                                    it->second.dim(0), cfg.classes));
    }
  }
  net.load_state_dict(state);
  const std::size_t crop = cfg.resolved_eval_crop();
  MetricRecord rec{0, 0.0, kNaN, kNaN, kNaN, kNaN, kNaN};
  if (cfg.task == Task::kSegment) {
    const auto s = segment_scores(net, segment_data(cfg, true), crop);
    rec.pixel_acc = s.pixel_acc;
    rec.mean_acc = s.mean_acc;
    rec.mean_iou = s.mean_iou;
    return rec;
  }
  auto data = classify_data(cfg, true);
  for (auto& img : data.images) {
    if (img.height != crop || img.width != crop) img = seg::resize_bilinear(img, crop, crop);
  }
  NoGradGuard guard;
  double loss_sum = 0.0;
  std::vector<int> preds;
  const std::size_t chunk = 64;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    std::vector<seg::Image> imgs(data.images.begin() + static_cast<std::ptrdiff_t>(b),
                                 data.images.begin() + static_cast<std::ptrdiff_t>(e));
    const std::vector<int> labels(data.labels.begin() + static_cast<std::ptrdiff_t>(b),
                                  data.labels.begin() + static_cast<std::ptrdiff_t>(e));
    const auto logits = net.forward(seg::images_to_batch(imgs), {BnMode::kEval});
    loss_sum += softmax_cross_entropy(logits, labels).item() * static_cast<double>(e - b);
    const auto p = argmax_rows(logits);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  rec.loss = loss_sum / static_cast<double>(data.size());
  rec.accuracy = accuracy(data.labels, preds);
  return rec;
}

}  // namespace rna::harness
