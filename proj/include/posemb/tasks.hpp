#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posemb/adam.hpp"
#include "posemb/corpus.hpp"
#include "posemb/encoder.hpp"

namespace posemb {

enum class TaskKind { offset_copy, relative_distance_cls, absolute_position_probe, cls_summary };

std::string_view task_name(TaskKind kind);
std::optional<TaskKind> parse_task(std::string_view text);

// Task sequences reuse the first word id as the marker token; content
// tokens follow it.
inline constexpr int kMarkId = kFirstWordId;
inline constexpr int kFirstContentId = kFirstWordId + 1;

/// A synthetic classification problem read out from the classification
/// token at position 0. Positions 1..length-1 hold the task tokens.
struct ProbeTask {
  TaskKind kind = TaskKind::offset_copy;
  int length = 16;         // full sequence length, classification token included
  int content_vocab = 16;  // distinct content tokens
  int offset = 1;          // offset_copy: label is the token at marker + offset
  int max_distance = 8;    // relative_distance_cls: distances 1..max_distance
  int count_classes = 4;   // cls_summary: number of markers, 0..count_classes-1

  void validate() const;
  int num_labels() const;
  int vocab_size() const { return kFirstContentId + content_vocab; }
  bool operator==(const ProbeTask&) const = default;
};

struct Example {
  std::vector<int> ids;
  int label = 0;
};

// The label a sequence determines; throws InputError when the sequence is
// not a well-formed instance of the task.
int task_label(const ProbeTask& task, std::span<const int> ids);

// Labels are drawn uniformly first, then a sequence realizing the label.
Example generate_example(const ProbeTask& task, Rng& rng);
std::vector<Example> generate_task(const ProbeTask& task, std::size_t count, Rng& rng);

struct TaskSplit {
  std::vector<Example> train;
  std::vector<Example> test;  // no sequence also present in train
};

TaskSplit generate_split(const ProbeTask& task, std::size_t train_count, std::size_t test_count,
                         std::uint64_t seed);

// Accuracy of always predicting the most frequent training label.
double majority_baseline(std::span<const Example> train, std::span<const Example> test, int num_labels);

EncoderInput task_batch(std::span<const Example> examples, int length);

struct FineTuneConfig {
  int steps = 2000;
  int batch_size = 32;
  int train_examples = 20000;
  int test_examples = 2000;
  AdamConfig adam;

  void validate() const;
};

struct FineTuneResult {
  bool diverged = false;
  std::string divergence;
  std::int64_t steps_run = 0;
  double accuracy = 0;  // held-out; NaN when diverged
  double majority = 0;
  double final_loss = 0;  // mean training loss over the last 50 steps
};

/// Adds a linear head on the classification token's final hidden state and
/// trains head and encoder together. Divergence is reported in the result.
FineTuneResult fine_tune(Encoder& model, const ProbeTask& task, const FineTuneConfig& config, std::uint64_t seed);

}  // namespace posemb
