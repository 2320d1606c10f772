#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/model/model.hpp"
#include "nmt/tensor/checkpoint.hpp"
#include "nmt/train/batches.hpp"
#include "nmt/train/config.hpp"

namespace nmt::train {

struct LossRecord {
  long step = 0;  // optimizer steps completed
  std::string split;
  double mean_nll = 0;
  std::vector<double> feature_nll;
  double lr = 0;
  double grad_norm = 0;
};

// Token-weighted per-feature NLL summed over batches; `mean` averages features.
struct NllAccumulator {
  std::vector<double> sum;
  std::vector<std::size_t> count;

  template <class T>
  void add(const model::ForwardResult<T>& r) {
    sum.resize(r.counts.size(), 0.0);
    count.resize(r.counts.size(), 0);
    for (std::size_t j = 0; j < r.counts.size(); ++j)
      if (r.counts[j] > 0) {
        sum[j] += r.feature_nll[j] * static_cast<double>(r.counts[j]);
        count[j] += r.counts[j];
      }
  }
  std::vector<double> features() const {
    std::vector<double> out;
    for (std::size_t j = 0; j < sum.size(); ++j)
      out.push_back(count[j] ? sum[j] / static_cast<double>(count[j]) : std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  double mean() const {
    double total = 0;
    int n = 0;
    for (std::size_t j = 0; j < sum.size(); ++j)
      if (count[j]) total += sum[j] / static_cast<double>(count[j]), ++n;
    return n ? total / n : std::numeric_limits<double>::quiet_NaN();
  }
};

template <class T>
NllAccumulator evaluate_batches(const model::Model<T>& m, const std::vector<model::Batch>& batches) {
  tensor::NoGradGuard no_grad;
  NllAccumulator acc;
  for (const auto& b : batches) acc.add(m.forward(b));
  return acc;
}

struct TrainerOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints
  bool resume = false;            // continue from out_dir/last.ckpt when present
  long stop_after = -1;           // halt (with a checkpoint) once this many steps are done
  nlohmann::json metadata;        // stored in every checkpoint
  std::function<void(const LossRecord&)> on_record;
};

struct TrainResult {
  std::vector<LossRecord> history;
  long start_step = 0;
  long steps_done = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  long best_step = -1;
  double final_valid = std::numeric_limits<double>::quiet_NaN();
};

inline std::filesystem::path last_checkpoint(const std::filesystem::path& dir) { return dir / "last.ckpt"; }
inline std::filesystem::path best_checkpoint(const std::filesystem::path& dir) { return dir / "best.ckpt"; }

// Teacher-forced training with AdamW, warmup + cosine schedule and global
// norm clipping. Validation runs every `validate_every` steps and at the end;
// the lowest validation NLL is kept as best.ckpt. Batches and dropout masks
// depend only on (seed, step), so a resumed run repeats the original losses.
template <class T>
TrainResult train_model(model::Model<T>& m, const TrainConfig& cfg, const SegmentSource& train_set,
                  const SegmentSource* valid_set, const TrainerOptions& opt = {}) {
  cfg.validate();
  if (train_set.width() != m.config().num_features())
    throw ConfigError("training data has " + std::to_string(train_set.width()) + " slots per token, model expects " +
                      std::to_string(m.config().num_features()));
  if (cfg.segment_length > m.config().max_sequence_length)
    throw ConfigError("train.segment_length exceeds model max_sequence_length");
  auto params = m.parameters();
  tensor::AdamW<T> adam({cfg.lr_max, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  const BatchStream stream(train_set, {cfg.batch_size, cfg.segment_length, cfg.augment, cfg.seed});
  std::vector<model::Batch> valid_batches;
  if (valid_set) valid_batches = evaluation_batches(*valid_set, cfg.segment_length, cfg.batch_size);

  TrainResult res;
  const bool save = !opt.out_dir.empty();
  if (save) std::filesystem::create_directories(opt.out_dir);
  auto metadata = [&](long step) {
    nlohmann::json j = opt.metadata;
    j["model"] = model::to_json(m.config());
    j["train"] = to_json(cfg);
    j["step"] = step;
    j["best_valid"] = std::isfinite(res.best_valid) ? nlohmann::json(res.best_valid) : nlohmann::json(nullptr);
    j["best_step"] = res.best_step;
    return j;
  };
  auto checkpoint = [&](const std::filesystem::path& path, long step) {
    tensor::save_checkpoint<T>(path.string(), params, {metadata(step), adam.step_count(), adam.rejected_steps()});
  };
  if (opt.resume && save && std::filesystem::exists(last_checkpoint(opt.out_dir))) {
    const auto state = tensor::load_checkpoint<T>(last_checkpoint(opt.out_dir).string(), params);
    adam.set_step_count(state.optimizer_step);
    adam.set_rejected_steps(state.rejected_steps);
    res.start_step = state.metadata.at("step").template get<long>();
    if (!state.metadata.at("best_valid").is_null()) res.best_valid = state.metadata.at("best_valid").template get<double>();
    res.best_step = state.metadata.at("best_step").template get<long>();
  }
  auto emit = [&](LossRecord r) {
    if (opt.on_record) opt.on_record(r);
    res.history.push_back(std::move(r));
  };

  const long end = opt.stop_after >= 0 ? std::min(cfg.steps, opt.stop_after) : cfg.steps;
  long step = res.start_step;
  for (; step < end; ++step) {
    const double lr = lr_schedule(cfg, step);
    Rng dropout_rng(derive_seed(cfg.seed ^ 0xd0d0ULL, static_cast<std::uint64_t>(step)));
    tensor::zero_grads(params);
    const auto batch = stream.at(step);
    auto out = m.forward(batch.batch, {true, m.config().dropout, &dropout_rng});
    const double loss = static_cast<double>(out.loss.item());
    if (!std::isfinite(loss)) {
      if (save) checkpoint(opt.out_dir / "failed.ckpt", step);
      throw RuntimeFailure("non-finite training loss at step " + std::to_string(step));
    }
    out.loss.backward();
    const double norm = tensor::clip_global_norm(params, cfg.clip);
    adam.step(params, lr);
    emit({step + 1, "train", loss, out.feature_nll, lr, norm});

    const bool last = step + 1 == cfg.steps;
    if (!valid_batches.empty() && ((step + 1) % cfg.validate_every == 0 || last)) {
      const auto acc = evaluate_batches(m, valid_batches);
      const double v = acc.mean();
      emit({step + 1, "valid", v, acc.features(), lr, 0.0});
      if (last) res.final_valid = v;
      if (v < res.best_valid) {
        res.best_valid = v;
        res.best_step = step + 1;
        if (save) checkpoint(best_checkpoint(opt.out_dir), step + 1);
      }
    }
    if (save && ((step + 1) % cfg.checkpoint_every == 0 || last || step + 1 == end))
      checkpoint(last_checkpoint(opt.out_dir), step + 1);
  }
  res.steps_done = step;
  if (save && res.best_step < 0) checkpoint(best_checkpoint(opt.out_dir), step);
  return res;
}

// CSV rows: step,split,mean_nll,lr,grad_norm,<feature names...>
inline std::string loss_csv_header(const std::vector<std::string>& features) {
  std::string h = "step,split,mean_nll,lr,grad_norm";
  for (const auto& f : features) h += "," + f;
  return h + "\n";
}

inline std::string loss_csv_row(const LossRecord& r) {
  auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::string(buf);
  };
  std::string s = std::to_string(r.step) + "," + r.split + "," + num(r.mean_nll) + "," + num(r.lr) + "," + num(r.grad_norm);
  for (double f : r.feature_nll) s += "," + num(f);
  return s + "\n";
}

}  // namespace nmt::train
