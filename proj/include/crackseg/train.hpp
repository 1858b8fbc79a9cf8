#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crackseg/config.hpp"
#include "crackseg/data.hpp"
#include "crackseg/head.hpp"
#include "crackseg/loss.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/optim.hpp"

namespace crackseg {

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> train_f1;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  int steps_run = 0;
  double final_loss = 0.0;
  double final_f1 = 0.0;
  bool early_stopped = false;

  json to_json() const {
    json steps = json::array();
    for (const auto& e : log) {
      json row{{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}};
      if (e.train_f1) row["train_f1"] = *e.train_f1;
      steps.push_back(row);
    }
    return json{{"steps", steps},
                {"steps_run", steps_run},
                {"final_loss", final_loss},
                {"final_f1", final_f1},
                {"early_stopped", early_stopped}};
  }
};

namespace detail {

inline Tensor stack_images(const std::vector<Sample>& samples, const std::vector<size_t>& ids) {
  int h = samples[ids[0]].image.dim(1);
  int w = samples[ids[0]].image.dim(2);
  std::vector<double> data;
  data.reserve(ids.size() * 3ull * h * w);
  for (size_t i : ids) {
    const auto& d = samples[i].image.data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return Tensor::from_data({static_cast<int>(ids.size()), 3, h, w}, std::move(data));
}

inline Tensor stack_masks(const std::vector<Sample>& samples, const std::vector<size_t>& ids) {
  int h = samples[ids[0]].mask.dim(1);
  int w = samples[ids[0]].mask.dim(2);
  std::vector<double> data;
  data.reserve(ids.size() * static_cast<size_t>(h) * w);
  for (size_t i : ids) {
    const auto& d = samples[i].mask.data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return Tensor::from_data({static_cast<int>(ids.size()), 1, h, w}, std::move(data));
}

}  // namespace detail

/// Pooled F1 at threshold 0.5 over the whole sample set (no gradients).
inline double train_set_f1(const Network& net, const std::vector<Sample>& samples) {
  NoGradGuard ng;
  Confusion pooled;
  for (const Sample& s : samples) {
    Tensor img = reshape(s.image, {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)});
    Tensor prob = sigmoid(net.forward(img));
    Tensor pred = binarize(prob, 0.5);
    Tensor gt = reshape(s.mask, {1, s.mask.dim(0), s.mask.dim(1), s.mask.dim(2)});
    pooled += confusion(pred, gt);
  }
  return f1_per_image(pooled);
}

/// Deterministic minibatch training loop: shuffled epoch order, combined
/// Dice+BCE objective, AdamW with polynomial LR decay, periodic train-F1
/// probes with optional early stop.
inline TrainResult train_network(Network& net, const std::vector<Sample>& samples,
                                 const LossConfig& loss_cfg, const OptimConfig& optim_cfg,
                                 uint64_t seed) {
  if (samples.empty()) throw UsageError("train: empty dataset");
  loss_cfg.validate();
  optim_cfg.validate();

  AdamW opt(net.parameters());
  Rng order_rng(seed ^ 0x7261696e5f726e67ULL);
  std::vector<size_t> epoch_order;
  size_t cursor = 0;
  auto next_batch = [&](int batch) {
    std::vector<size_t> ids;
    for (int i = 0; i < batch; ++i) {
      if (cursor >= epoch_order.size()) {
        epoch_order.resize(samples.size());
        for (size_t j = 0; j < samples.size(); ++j) epoch_order[j] = j;
        order_rng.shuffle(epoch_order);
        cursor = 0;
      }
      ids.push_back(epoch_order[cursor++]);
    }
    return ids;
  };

  TrainResult result;
  int batch = std::min<int>(optim_cfg.batch_size, static_cast<int>(samples.size()));
  for (int step = 0; step < optim_cfg.steps; ++step) {
    std::vector<size_t> ids = next_batch(batch);
    Tensor images = detail::stack_images(samples, ids);
    Tensor masks = detail::stack_masks(samples, ids);

    Tensor logits = net.forward(images);
    Tensor prob = sigmoid(logits);
    Tensor loss = combined_loss(prob, masks, loss_cfg);

    net.zero_grad();
    backward(loss);
    double lr = poly_lr(optim_cfg.lr, step, optim_cfg.steps, optim_cfg.poly_power);
    opt.step(lr, optim_cfg.weight_decay);

    result.steps_run = step + 1;
    result.final_loss = loss.value();
    TrainLogEntry entry{step + 1, loss.value(), lr, std::nullopt};
    bool probe = ((step + 1) % optim_cfg.eval_every == 0) || (step + 1 == optim_cfg.steps);
    if (probe) {
      double f1 = train_set_f1(net, samples);
      entry.train_f1 = f1;
      result.final_f1 = f1;
    }
    result.log.push_back(entry);
    if (probe && optim_cfg.stop_f1 > 0.0 && result.final_f1 >= optim_cfg.stop_f1) {
      result.early_stopped = step + 1 < optim_cfg.steps;
      break;
    }
  }
  if (optim_cfg.steps == 0) result.final_f1 = train_set_f1(net, samples);
  return result;
}

}  // namespace crackseg
