#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posemb/adam.hpp"
#include "posemb/corpus.hpp"
#include "posemb/encoder.hpp"
#include "posemb/masking.hpp"
#include "posemb/packing.hpp"

namespace posemb {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 16;
  AdamConfig adam;
  MaskingPolicy masking;
  int eval_every = 100;  // 0: evaluate only at the end
  int eval_rows = 64;    // held-out rows per evaluation
  double holdout_fraction = 0.1;
  double target_loss = 0.0;  // > 0: status "converged" when the final held-out loss reaches it

  void validate() const;
};

enum class TrainStatus { completed, converged, diverged };
std::string_view status_name(TrainStatus status);

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0;
  double grad_norm = 0;
  double lr = 0;
  bool finite = true;
};

struct EvalRecord {
  std::int64_t step = 0;
  double heldout_loss = 0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  TrainStatus status = TrainStatus::completed;
  std::optional<std::int64_t> first_nonfinite_step;
  std::string divergence;  // what failed, when diverged
  double wall_seconds = 0;
  std::size_t train_rows = 0;
  std::size_t heldout_rows = 0;
  std::size_t truncated_sentences = 0;
  std::size_t skipped_mask_rows = 0;

  std::optional<double> final_heldout_loss() const;
};

struct TrainData {
  std::vector<PackedRow> train;
  std::vector<PackedRow> heldout;
  std::size_t truncated_sentences = 0;
};

// Packs the corpus into rows of max_len - 1 tokens (room for the
// classification token) and holds out a seeded random subset of rows.
TrainData prepare_training_data(const TokenizedCorpus& corpus, int max_len, double holdout_fraction,
                                std::uint64_t seed);

// Mean masked-token loss over `rows`, with masks drawn from a fixed stream so
// repeated evaluations see the same targets.
double heldout_loss(const Encoder& model, std::span<const PackedRow> rows, const MaskingPolicy& policy,
                    std::uint64_t seed, int batch_size);

using StepCallback = std::function<void(const StepRecord&)>;

TrainReport train(Encoder& model, const TrainData& data, const TrainConfig& config, std::uint64_t seed,
                  const StepCallback& on_step = {});

inline constexpr std::string_view kMetricsHeader = "# posemb metrics v1";
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepRecord& row);
void write_metrics_csv(std::ostream& out, const TrainReport& report);
void write_eval_csv(std::ostream& out, const TrainReport& report);

}  // namespace posemb
