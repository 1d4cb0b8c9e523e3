#include "posemb/compare.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "posemb/errors.hpp"
#include "posemb/kernels.hpp"
#include "posemb/rng.hpp"

namespace posemb {

std::vector<MethodSpec> preset_methods(std::string_view preset) {
  std::vector<MethodSpec> out;
  if (preset == "table2") {
    for (const char* label : {"absolute", "shaw", "m2", "m4", "deberta", "m4m", "m4+reset", "abs+m4m"})
      out.push_back(parse_method(label));
  } else if (preset == "scaling") {
    for (int f : {1, 2, 3, 4, 6, 9}) {
      MethodSpec spec = MethodSpec::of(Kind::m4);
      spec.scaling_factor = f;
      out.push_back(spec);
    }
  } else if (preset == "sharing") {
    for (bool share : {true, false}) {
      MethodSpec spec = MethodSpec::of(Kind::m4);
      spec.share_across_heads = share;
      out.push_back(spec);
    }
  } else {
    throw ConfigError("unknown sweep preset '" + std::string(preset) + "' (valid: " + valid_preset_list() + ")");
  }
  return out;
}

std::string valid_preset_list() { return "table2, scaling, sharing"; }

namespace {

struct Job {
  std::size_t method_index;
  std::size_t task_index;
  std::uint64_t seed;
};

CellResult run_cell(const MethodSpec& method, std::size_t method_index, const ProbeTask& task, std::uint64_t seed,
                    const CompareSettings& settings) {
  const auto started = std::chrono::steady_clock::now();
  EncoderConfig config = settings.base;
  config.method = method;
  config.max_len = task.length;
  config.vocab_size = task.vocab_size();
  Encoder model(config, seed);

  CellResult cell;
  cell.method_index = method_index;
  cell.method = method_label(method);
  cell.task = std::string(task_name(task.kind));
  cell.seed = seed;
  cell.position_params = static_cast<std::int64_t>(model.position_parameter_count());
  cell.closed_form = param_count(method, config.layers, config.max_len, config.width, config.heads);

  bool usable = true;
  if (settings.pretrain_steps > 0) {
    const std::uint64_t pseed = derive_seed(seed, "pretrain");
    TokenizedCorpus corpus;
    corpus.sentences = synthetic_sentences(pseed, settings.pretrain_sentences, kFirstContentId, task.content_vocab, 3,
                                           std::max(3, task.length - 1));
    TrainData data = prepare_training_data(corpus, config.max_len, settings.pretrain.holdout_fraction, pseed);
    TrainConfig tc = settings.pretrain;
    tc.steps = settings.pretrain_steps;
    TrainReport report = train(model, data, tc, pseed);
    cell.pretrain_status = report.status;
    if (report.status == TrainStatus::diverged) {
      usable = false;
      cell.result.diverged = true;
      cell.result.divergence = "pretraining: " + report.divergence;
      cell.result.accuracy = std::nan("");
      cell.result.final_loss = std::nan("");
    }
  }
  if (usable) cell.result = fine_tune(model, task, settings.finetune, seed);
  cell.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return cell;
}

void summarize(ComparisonReport& report, std::size_t method_count, std::size_t task_count, std::size_t seed_count) {
  for (std::size_t m = 0; m < method_count; ++m) {
    for (std::size_t t = 0; t < task_count; ++t) {
      SummaryRow row;
      row.method_index = m;
      row.method = report.methods[m];
      row.task = report.tasks[t];
      std::vector<double> acc;
      for (const CellResult& c : report.cells) {
        if (c.method_index != m || c.task != row.task) continue;
        ++row.seeds;
        row.position_params = c.position_params;
        if (c.result.diverged)
          ++row.diverged;
        else
          acc.push_back(c.result.accuracy);
      }
      if (!acc.empty()) {
        double total = 0;
        for (double a : acc) total += a;
        row.mean = total / static_cast<double>(acc.size());
        row.min = *std::min_element(acc.begin(), acc.end());
        row.max = *std::max_element(acc.begin(), acc.end());
      }
      report.summary.push_back(row);
    }
  }
  if (seed_count < 2) return;
  for (std::size_t t = 0; t < task_count; ++t) {
    std::vector<SummaryRow*> ranked;
    for (auto& row : report.summary)
      if (row.task == report.tasks[t] && row.diverged == 0) ranked.push_back(&row);
    std::stable_sort(ranked.begin(), ranked.end(), [](const SummaryRow* a, const SummaryRow* b) { return a->mean > b->mean; });
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const bool tied = i > 0 && ranked[i]->mean == ranked[i - 1]->mean;
      ranked[i]->rank = tied ? ranked[i - 1]->rank : std::optional<int>(static_cast<int>(i) + 1);
    }
  }
}

std::string accuracy_text(const CellResult& c) {
  return c.result.diverged ? "DIV" : fmt::format("{:.6f}", c.result.accuracy);
}

}  // namespace

ComparisonReport compare_methods(std::span<const MethodSpec> methods, std::span<const ProbeTask> tasks,
                                 std::span<const std::uint64_t> seeds, const CompareSettings& settings,
                                 const CellCallback& on_cell) {
  if (methods.empty() || tasks.empty() || seeds.empty()) throw ConfigError("compare: methods, tasks and seeds must be non-empty");
  if (settings.workers < 1) throw ConfigError("compare: workers must be at least 1");
  for (const auto& m : methods) m.validate();
  for (const auto& t : tasks) t.validate();
  settings.finetune.validate();
  if (settings.pretrain_steps > 0) settings.pretrain.validate();

  const auto started = std::chrono::steady_clock::now();
  ComparisonReport report;
  for (const auto& m : methods) report.methods.push_back(method_label(m));
  for (const auto& t : tasks) report.tasks.emplace_back(task_name(t.kind));

  std::vector<Job> jobs;
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t t = 0; t < tasks.size(); ++t)
      for (std::uint64_t s : seeds) jobs.push_back({m, t, s});

  std::vector<std::optional<CellResult>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const Job& j = jobs[i];
        results[i] = run_cell(methods[j.method_index], j.method_index, tasks[j.task_index], j.seed, settings);
        if (on_cell) {
          std::lock_guard lock(callback_mutex);
          on_cell(*results[i]);
        }
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const auto thread_count = std::min<std::size_t>(static_cast<std::size_t>(settings.workers), jobs.size());
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < thread_count; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& r : results) report.cells.push_back(std::move(*r));
  summarize(report, methods.size(), tasks.size(), seeds.size());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_results_csv(std::ostream& out, const ComparisonReport& report) {
  out << "# posemb compare results v1\n";
  out << "method,task,seed,status,accuracy,majority_baseline,final_loss,position_params,closed_form_params\n";
  for (const auto& c : report.cells) {
    fmt::print(out, "{},{},{},{},{},{:.6f},{:.9g},{},{}\n", c.method, c.task, c.seed,
               c.result.diverged ? "diverged" : "ok", accuracy_text(c), c.result.majority, c.result.final_loss,
               c.position_params, c.closed_form);
  }
}

void write_long_csv(std::ostream& out, const ComparisonReport& report) {
  out << "# posemb compare long v1\n";
  out << "method,task,seed,metric,value\n";
  for (const auto& c : report.cells) {
    auto row = [&](std::string_view metric, const std::string& value) {
      fmt::print(out, "{},{},{},{},{}\n", c.method, c.task, c.seed, metric, value);
    };
    row("accuracy", accuracy_text(c));
    row("majority_baseline", fmt::format("{:.6f}", c.result.majority));
    row("final_loss", c.result.diverged ? "DIV" : fmt::format("{:.9g}", c.result.final_loss));
    row("diverged", c.result.diverged ? "1" : "0");
    row("position_params", std::to_string(c.position_params));
  }
}

void write_summary_csv(std::ostream& out, const ComparisonReport& report) {
  out << "# posemb compare summary v1\n";
  out << "method,task,seeds,diverged,mean,min,max,rank,position_params\n";
  for (const auto& r : report.summary) {
    const bool all_div = r.diverged == r.seeds;
    fmt::print(out, "{},{},{},{},{},{},{},{},{}\n", r.method, r.task, r.seeds, r.diverged,
               all_div ? "DIV" : fmt::format("{:.6f}", r.mean), all_div ? "DIV" : fmt::format("{:.6f}", r.min),
               all_div ? "DIV" : fmt::format("{:.6f}", r.max), r.rank ? std::to_string(*r.rank) : "",
               r.position_params);
  }
}

void write_text_report(std::ostream& out, const ComparisonReport& report) {
  out << kReportBanner << "\n";
  out << "Cells: mean [min, max] held-out accuracy over seeds; DIV = diverged; #n = rank.\n\n";
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header = {"method", "pos params"};
  for (const auto& t : report.tasks) header.push_back(t);
  table.push_back(header);
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    std::vector<std::string> line = {report.methods[m], ""};
    for (const auto& r : report.summary) {
      if (r.method_index != m) continue;
      line[1] = std::to_string(r.position_params);
      std::string cell;
      if (r.diverged == r.seeds) {
        cell = "DIV";
      } else {
        cell = fmt::format("{:.3f} [{:.3f}, {:.3f}]", r.mean, r.min, r.max);
        if (r.diverged) cell += fmt::format(" ({} DIV)", r.diverged);
        if (r.rank) cell += fmt::format(" #{}", *r.rank);
      }
      line.push_back(cell);
    }
    table.push_back(line);
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      if (c) out << "  ";
      if (c == 0)
        fmt::print(out, "{:<{}}", table[r][c], widths[c]);
      else
        fmt::print(out, "{:>{}}", table[r][c], widths[c]);
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
}

}  // namespace posemb
