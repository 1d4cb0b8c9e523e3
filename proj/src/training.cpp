#include "posemb/training.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "posemb/errors.hpp"
#include "posemb/rng.hpp"

namespace posemb {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (eval_every < 0) throw ConfigError("train.eval_every must be non-negative");
  if (eval_rows < 1) throw ConfigError("train.eval_rows must be positive");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) throw ConfigError("train.holdout_fraction must lie in (0, 1)");
  adam.validate();
  masking.validate();
}

std::string_view status_name(TrainStatus status) {
  switch (status) {
    case TrainStatus::completed: return "completed";
    case TrainStatus::converged: return "converged";
    case TrainStatus::diverged: return "diverged";
  }
  return "?";
}

std::optional<double> TrainReport::final_heldout_loss() const {
  if (evals.empty()) return std::nullopt;
  return evals.back().heldout_loss;
}

TrainData prepare_training_data(const TokenizedCorpus& corpus, int max_len, double holdout_fraction,
                                std::uint64_t seed) {
  if (max_len < 2) throw ConfigError("max_len must leave room for a token after the classification token");
  PackResult packed = pack_sequences(corpus.sentences, max_len - 1);
  if (packed.rows.size() < 2) throw InputError("corpus packs into fewer than two rows; nothing to hold out");
  std::vector<std::size_t> order(packed.rows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = substream(seed, "data-split");
  std::shuffle(order.begin(), order.end(), rng);
  auto held = static_cast<std::size_t>(std::ceil(holdout_fraction * static_cast<double>(order.size())));
  held = std::clamp<std::size_t>(held, 1, order.size() - 1);
  TrainData data;
  data.truncated_sentences = packed.truncated_sentences;
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < held ? data.heldout : data.train).push_back(std::move(packed.rows[order[i]]));
  return data;
}

double heldout_loss(const Encoder& model, std::span<const PackedRow> rows, const MaskingPolicy& policy,
                    std::uint64_t seed, int batch_size) {
  if (rows.empty()) throw ContractError("heldout_loss: no rows");
  Rng rng = substream(seed, "heldout-mask");
  const int L = model.config().max_len;
  const int vocab = model.config().vocab_size;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(rows.size() - start, static_cast<std::size_t>(batch_size));
    EncoderInput in = make_batch(rows.subspan(start, n), L);
    MaskResult masked = apply_mlm_mask(in, policy, vocab, rng);
    if (masked.target_count == 0) continue;
    Tape tape(false);
    Var loss = model.mlm_loss(tape, in, masked.targets);
    total += loss.value()[0] * static_cast<double>(masked.target_count);
    count += masked.target_count;
  }
  if (count == 0) throw InputError("held-out rows contain no maskable tokens");
  return total / static_cast<double>(count);
}

TrainReport train(Encoder& model, const TrainData& data, const TrainConfig& config, std::uint64_t seed,
                  const StepCallback& on_step) {
  config.validate();
  if (data.train.empty() || data.heldout.empty()) throw InputError("training data needs train and held-out rows");
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  report.train_rows = data.train.size();
  report.heldout_rows = data.heldout.size();
  report.truncated_sentences = data.truncated_sentences;

  Rng data_rng = substream(seed, "data");
  Rng mask_rng = substream(seed, "masking");
  Rng dropout_rng = substream(seed, "dropout");
  const EncoderConfig& mc = model.config();
  std::vector<Tensor*> tensors = parameter_tensors(model.parameters());
  std::vector<std::string> names = parameter_names(model.parameters());
  AdamState adam;
  std::uniform_int_distribution<std::size_t> pick_row(0, data.train.size() - 1);
  const std::span<const PackedRow> eval_rows(data.heldout.data(),
                                              std::min<std::size_t>(data.heldout.size(), config.eval_rows));

  auto evaluate = [&](std::int64_t step) {
    report.evals.push_back({step, heldout_loss(model, eval_rows, config.masking, seed, config.batch_size)});
  };

  std::vector<const PackedRow*> rows(static_cast<std::size_t>(config.batch_size));
  for (std::int64_t step = 1; step <= config.steps; ++step) {
    for (auto& r : rows) r = &data.train[pick_row(data_rng)];
    EncoderInput batch = make_batch(rows, mc.max_len);
    MaskResult masked = apply_mlm_mask(batch, config.masking, mc.vocab_size, mask_rng);
    report.skipped_mask_rows += masked.skipped_rows;
    StepRecord rec;
    rec.step = step;
    rec.lr = scheduled_rate(config.adam, step, config.steps);
    if (masked.target_count == 0) {
      // Nothing to predict in this draw; record a neutral row.
      rec.loss = 0;
      report.steps.push_back(rec);
      if (on_step) on_step(rec);
      continue;
    }
    try {
      model.parameters().zero_grad();
      Tape tape;
      Var loss = model.mlm_loss(tape, batch, masked.targets, mc.dropout > 0 ? &dropout_rng : nullptr);
      rec.loss = loss.value()[0];
      tape.backward(loss);
      rec.grad_norm = gradient_norm(tensors);
      adam_step(tensors, adam, config.adam, rec.lr, names);
    } catch (const Error& e) {
      if (!dynamic_cast<const DivergenceError*>(&e) && !dynamic_cast<const NonFiniteError*>(&e)) throw;
      rec.finite = false;
      if (!std::isfinite(rec.loss) || rec.loss == 0) rec.loss = std::numeric_limits<double>::quiet_NaN();
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
      report.steps.push_back(rec);
      if (on_step) on_step(rec);
      report.status = TrainStatus::diverged;
      report.first_nonfinite_step = step;
      report.divergence = e.what();
      break;
    }
    report.steps.push_back(rec);
    if (on_step) on_step(rec);
    if (config.eval_every > 0 && step % config.eval_every == 0 && step != config.steps) evaluate(step);
  }
  if (report.status != TrainStatus::diverged) {
    try {
      evaluate(report.steps.empty() ? 0 : report.steps.back().step);
      if (config.target_loss > 0 && report.evals.back().heldout_loss <= config.target_loss)
        report.status = TrainStatus::converged;
    } catch (const DivergenceError& e) {
      report.status = TrainStatus::diverged;
      report.divergence = e.what();
      report.first_nonfinite_step = report.steps.empty() ? 0 : report.steps.back().step;
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << "\nstep,loss,grad_norm,lr,finite\n"; }

void write_metrics_row(std::ostream& out, const StepRecord& row) {
  fmt::print(out, "{},{:.9g},{:.9g},{:.9g},{}\n", row.step, row.loss, row.grad_norm, row.lr, row.finite ? 1 : 0);
}

void write_metrics_csv(std::ostream& out, const TrainReport& report) {
  write_metrics_header(out);
  for (const auto& r : report.steps) write_metrics_row(out, r);
}

void write_eval_csv(std::ostream& out, const TrainReport& report) {
  out << "# posemb eval v1\nstep,heldout_loss\n";
  for (const auto& e : report.evals) fmt::print(out, "{},{:.9g}\n", e.step, e.heldout_loss);
}

}  // namespace posemb
