#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posemb/encoder.hpp"
#include "posemb/method.hpp"
#include "posemb/tasks.hpp"
#include "posemb/training.hpp"

namespace posemb {

struct CompareSettings {
  EncoderConfig base;  // method, max_len and vocab_size are set per cell
  FineTuneConfig finetune;
  TrainConfig pretrain;  // used when pretrain_steps > 0
  int pretrain_steps = 0;
  int pretrain_sentences = 2000;
  int workers = 1;
};

struct CellResult {
  std::size_t method_index = 0;
  std::string method;
  std::string task;
  std::uint64_t seed = 0;
  FineTuneResult result;
  std::optional<TrainStatus> pretrain_status;
  std::int64_t position_params = 0;  // enumerated from the built model
  std::int64_t closed_form = 0;
  double wall_seconds = 0;
};

struct SummaryRow {
  std::size_t method_index = 0;
  std::string method;
  std::string task;
  std::size_t seeds = 0;
  std::size_t diverged = 0;
  double mean = 0, min = 0, max = 0;  // over non-diverged seeds
  std::optional<int> rank;            // per task, only with >= 2 seeds and no divergence
  std::int64_t position_params = 0;
};

struct ComparisonReport {
  std::vector<std::string> methods;
  std::vector<std::string> tasks;
  std::vector<CellResult> cells;  // method-major, then task, then seed
  std::vector<SummaryRow> summary;
  double wall_seconds = 0;
};

// Methods of a named sweep: "table2", "scaling" or "sharing".
std::vector<MethodSpec> preset_methods(std::string_view preset);
std::string valid_preset_list();

using CellCallback = std::function<void(const CellResult&)>;

ComparisonReport compare_methods(std::span<const MethodSpec> methods, std::span<const ProbeTask> tasks,
                                 std::span<const std::uint64_t> seeds, const CompareSettings& settings,
                                 const CellCallback& on_cell = {});

inline constexpr std::string_view kReportBanner =
    "Synthetic probe accuracies at desk scale. These are not the paper's GLUE/SQuAD numbers.";

void write_results_csv(std::ostream& out, const ComparisonReport& report);
void write_long_csv(std::ostream& out, const ComparisonReport& report);
void write_summary_csv(std::ostream& out, const ComparisonReport& report);
void write_text_report(std::ostream& out, const ComparisonReport& report);

}  // namespace posemb
