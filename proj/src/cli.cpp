#include "posemb/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "posemb/checkpoint.hpp"
#include "posemb/compare.hpp"
#include "posemb/config.hpp"
#include "posemb/corpus.hpp"
#include "posemb/errors.hpp"
#include "posemb/kernels.hpp"
#include "posemb/training.hpp"
#include "posemb/verify.hpp"

namespace posemb {

namespace {

namespace fs = std::filesystem;

std::string grouped(std::int64_t value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return value < 0 ? "-" + out : out;
}

RunConfig resolve(const std::optional<std::string>& config_path, const std::vector<std::string>& extras,
                  std::string_view preferred) {
  const auto overrides = parse_override_args(extras, preferred);
  if (config_path) return load_run_config(*config_path, overrides);
  return resolve_config(overrides);
}

fs::path prepare_output(const RunConfig& config) {
  const fs::path dir = config.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("run.output: cannot create directory " + dir.string() + ": " + ec.message());
  std::ofstream(dir / "config.ini") << config_text(config);
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

int cmd_pretrain(const RunConfig& config, std::ostream& out) {
  if (config.corpus.empty()) throw ConfigError("run.corpus: a corpus path is required for pretrain");
  Corpus corpus;
  try {
    corpus = read_corpus(config.corpus);
  } catch (const InputError& e) {
    throw InputError(std::string("run.corpus: ") + e.what());
  }
  const fs::path dir = prepare_output(config);
  const Vocabulary vocab = Vocabulary::build(corpus, static_cast<std::size_t>(config.encoder.vocab_size));
  {
    std::ofstream v = open_output(dir / "vocabulary.txt");
    for (const auto& t : vocab.tokens()) v << t << "\n";
  }
  const TrainData data =
      prepare_training_data(tokenize_corpus(corpus, vocab), config.encoder.max_len, config.train.holdout_fraction,
                            config.seed);
  Encoder model(config.encoder, config.seed);

  std::ofstream metrics = open_output(dir / "metrics.csv");
  write_metrics_header(metrics);
  const TrainReport report = train(model, data, config.train, config.seed, [&](const StepRecord& row) {
    write_metrics_row(metrics, row);
    metrics.flush();
  });
  metrics.close();
  {
    std::ofstream eval = open_output(dir / "eval.csv");
    write_eval_csv(eval, report);
  }
  save_checkpoint(dir / "checkpoint.bin", model);

  std::string summary;
  summary += fmt::format("method: {}\n", method_label(config.encoder.method));
  summary += fmt::format("status: {}\n", status_name(report.status));
  summary += fmt::format("steps: {}\n", report.steps.size());
  if (report.first_nonfinite_step) summary += fmt::format("first_nonfinite_step: {}\n", *report.first_nonfinite_step);
  if (!report.divergence.empty()) summary += fmt::format("divergence: {}\n", report.divergence);
  if (!report.steps.empty()) summary += fmt::format("final_train_loss: {:.9g}\n", report.steps.back().loss);
  if (auto h = report.final_heldout_loss()) summary += fmt::format("final_heldout_loss: {:.9g}\n", *h);
  summary += fmt::format("vocabulary: {}\n", vocab.size());
  summary += fmt::format("train_rows: {}\nheldout_rows: {}\n", report.train_rows, report.heldout_rows);
  summary += fmt::format("truncated_sentences: {}\nskipped_mask_rows: {}\n", report.truncated_sentences,
                         report.skipped_mask_rows);
  std::ofstream(dir / "summary.txt") << summary;
  out << summary;
  fmt::print(out, "wall_seconds: {:.2f}\noutput: {}\n", report.wall_seconds, dir.string());
  return kExitOk;
}

std::vector<MethodSpec> gradcheck_methods(const std::string& method) {
  std::vector<MethodSpec> out;
  if (method == "all") {
    for (Kind k : kAllKinds) out.push_back(gradcheck_spec(k));
  } else if (auto k = parse_kind(method)) {
    out.push_back(gradcheck_spec(*k));
  } else {
    try {
      out.push_back(parse_method(method));
    } catch (const ConfigError&) {
      throw ConfigError("unknown method '" + method + "'; valid kinds: all, " + valid_kind_list());
    }
  }
  return out;
}

int cmd_gradcheck(const std::string& method, double tol, std::uint64_t seed, std::ostream& out) {
  const auto specs = gradcheck_methods(method);
  GradSuiteConfig gc;
  gc.seed = seed;
  fmt::print(out, "finite-difference check: m={} h={} d_x={} n={} vocab={} step={:g} floor={:g} tol={:g}\n", gc.layers, gc.heads,
             gc.width, gc.max_len, gc.vocab_size, gc.step, gc.floor, tol);
  bool ok = true;
  for (const auto& spec : specs) {
    const GradSuiteResult r = gradient_suite(spec, gc);
    fmt::print(out, "\n== {} (loss {:.6f})\n", method_label(spec), r.loss);
    fmt::print(out, "{:<20} {:>7} {:>8} {:>13} {:>13}  {}\n", "class", "tensors", "scalars", "max_rel_err",
               "max_abs_err", "result");
    for (const auto& c : r.classes) {
      const bool pass = c.comparison.max_rel_error < tol;
      ok = ok && pass;
      fmt::print(out, "{:<20} {:>7} {:>8} {:>13.3e} {:>13.3e}  {}\n", c.group, c.tensors, c.comparison.count,
                 c.comparison.max_rel_error, c.comparison.max_abs_error, pass ? "PASS" : "FAIL");
    }
  }
  fmt::print(out, "\n{}\n", ok ? "all parameter classes within tolerance" : "gradient check FAILED");
  return ok ? kExitOk : kExitVerification;
}

int cmd_params(int m, int n, int d, int h, std::optional<int> k, bool per_head, std::ostream& out) {
  const int clip = k.value_or(std::max(1, n - 1));
  const auto rows = params_table(m, n, d, h, clip, per_head);
  fmt::print(out, "Position-embedding parameters (m={}, n={}, d={}, h={}, k={})\n\n", m, n, d, h, clip);
  bool ok = true;
  bool shared_section = true;
  auto header = [&](bool shared) {
    fmt::print(out, "{}\n", shared ? "tables shared across heads" : "per-head tables");
    fmt::print(out, "{:<24} {:<34} {:>14} {:>14}  {}\n", "method", "closed form", "count", "enumerated", "check");
  };
  header(true);
  for (const auto& r : rows) {
    if (shared_section && !r.spec.share_across_heads) {
      shared_section = false;
      out << "\n";
      header(false);
    }
    const bool match = r.closed_form == r.enumerated;
    ok = ok && match;
    fmt::print(out, "{:<24} {:<34} {:>14} {:>14}  {}\n", kind_name(r.spec.kind), r.formula, grouped(r.closed_form),
               grouped(r.enumerated), match ? "ok" : "MISMATCH");
  }
  return ok ? kExitOk : kExitVerification;
}

int cmd_compare(const RunConfig& config, std::ostream& out) {
  const fs::path dir = prepare_output(config);
  const auto methods = config.compare_methods();
  const auto tasks = config.probe_tasks();
  const ComparisonReport report =
      compare_methods(methods, tasks, config.seeds, config.compare_settings(), [&](const CellResult& c) {
        fmt::print(out, "  {} / {} / seed {}: {}\n", c.method, c.task, c.seed,
                   c.result.diverged ? "DIV" : fmt::format("{:.4f}", c.result.accuracy));
        out.flush();
      });
  {
    std::ofstream f = open_output(dir / "results.csv");
    write_results_csv(f, report);
  }
  {
    std::ofstream f = open_output(dir / "long.csv");
    write_long_csv(f, report);
  }
  {
    std::ofstream f = open_output(dir / "summary.csv");
    write_summary_csv(f, report);
  }
  {
    std::ofstream f = open_output(dir / "report.txt");
    write_text_report(f, report);
  }
  out << "\n";
  write_text_report(out, report);
  bool counts_ok = true;
  for (const auto& c : report.cells) counts_ok = counts_ok && c.position_params == c.closed_form;
  fmt::print(out, "\nwall_seconds: {:.2f}\noutput: {}\n", report.wall_seconds, dir.string());
  if (!counts_ok) {
    out << "position parameter counts disagree with the closed form\n";
    return kExitVerification;
  }
  return kExitOk;
}

int cmd_probe(const RunConfig& config, const std::optional<std::string>& checkpoint, std::ostream& out) {
  const fs::path dir = prepare_output(config);
  const ProbeTask task = config.probe_tasks().front();
  std::optional<Encoder> model;
  if (checkpoint) {
    model.emplace(load_checkpoint(*checkpoint));
  } else {
    EncoderConfig ec = config.encoder;
    ec.max_len = task.length;
    ec.vocab_size = task.vocab_size();
    model.emplace(ec, config.seed);
  }
  const auto started = std::chrono::steady_clock::now();
  const FineTuneResult r = fine_tune(*model, task, config.finetune, config.seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::ofstream f = open_output(dir / "probe.csv");
  f << "# posemb probe v1\nmethod,task,seed,status,accuracy,majority_baseline,final_loss,steps\n";
  const std::string acc = r.diverged ? "DIV" : fmt::format("{:.6f}", r.accuracy);
  fmt::print(f, "{},{},{},{},{},{:.6f},{:.9g},{}\n", method_label(model->config().method), task_name(task.kind),
             config.seed, r.diverged ? "diverged" : "ok", acc, r.majority, r.final_loss, r.steps_run);
  fmt::print(out, "method: {}\ntask: {}\nstatus: {}\naccuracy: {}\nmajority_baseline: {:.6f}\nchance: {:.6f}\n",
             method_label(model->config().method), task_name(task.kind), r.diverged ? "diverged" : "ok", acc,
             r.majority, 1.0 / task.num_labels());
  if (r.diverged) fmt::print(out, "divergence: {}\n", r.divergence);
  fmt::print(out, "wall_seconds: {:.2f}\noutput: {}\n", seconds, dir.string());
  return kExitOk;
}

int cmd_audit(const std::string& path, std::ostream& out) {
  const CheckpointAudit audit = audit_checkpoint(path);
  out << encoder_config_text(audit.config) << "\n";
  fmt::print(out, "{:<36} {:<18} {:<14} {:>10} {:>12}  {}\n", "array", "group", "shape", "scalars", "rms", "finite");
  for (const auto& a : audit.arrays)
    fmt::print(out, "{:<36} {:<18} {:<14} {:>10} {:>12.6g}  {}\n", a.name, a.group, shape_string(a.shape), a.scalars,
               a.rms, a.finite ? "yes" : "NO");
  const bool counts_ok = static_cast<std::int64_t>(audit.position_scalars) == audit.closed_form;
  fmt::print(out, "\ntotal scalars: {}\nposition scalars: {} (closed form {}) {}\nall finite: {}\n",
             grouped(static_cast<std::int64_t>(audit.total_scalars)),
             grouped(static_cast<std::int64_t>(audit.position_scalars)), grouped(audit.closed_form),
             counts_ok ? "ok" : "MISMATCH", audit.all_finite ? "yes" : "NO");
  return counts_ok && audit.all_finite ? kExitOk : kExitVerification;
}

int cmd_synth_corpus(const std::string& path, std::uint64_t seed, int documents, int sentences, int words,
                     std::ostream& out) {
  std::ofstream f = open_output(path);
  f << synthetic_corpus_text(seed, documents, sentences, words);
  fmt::print(out, "wrote {} documents x {} sentences over {} word types to {}\n", documents, sentences, words, path);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Position-embedding laboratory: kernels, verification, training and probe comparisons", "posemb"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::string> checkpoint;

  auto* pretrain = app.add_subcommand("pretrain", "masked-LM pretraining on a corpus");
  pretrain->add_option("--config", config_path, "run config file");
  pretrain->allow_extras();

  std::string method = "all";
  double tol = 1e-4;
  std::uint64_t gc_seed = 7;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check per parameter class");
  gradcheck->add_option("--method", method, "method kind, a method label, or 'all'")->capture_default_str();
  gradcheck->add_option("--tol", tol, "maximum relative error")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "seed for weights and batch")->capture_default_str();

  int pm = 12, pn = 512, pd = 768, ph = 12;
  std::optional<int> pk;
  bool shared_only = false;
  auto* params = app.add_subcommand("params", "closed-form and enumerated position-parameter counts");
  // -h would clash with --h (heads).
  params->set_help_flag("--help", "Print this help message and exit");
  params->add_option("--m", pm, "layers")->capture_default_str();
  params->add_option("--n", pn, "maximum sequence length")->capture_default_str();
  params->add_option("--d", pd, "model width")->capture_default_str();
  params->add_option("--h", ph, "heads")->capture_default_str();
  params->add_option("--k", pk, "clip distance (default n-1, i.e. unclipped)");
  params->add_flag("--shared-only", shared_only, "skip the per-head table section");

  auto* compare = app.add_subcommand("compare", "fine-tune every method on every task and seed");
  compare->add_option("--config", config_path, "run config file");
  compare->allow_extras();

  auto* probe = app.add_subcommand("probe", "fine-tune one model on the first configured task");
  probe->add_option("--config", config_path, "run config file");
  probe->add_option("--checkpoint", checkpoint, "start from a pretrained checkpoint");
  probe->allow_extras();

  std::string audit_path;
  auto* audit = app.add_subcommand("audit-checkpoint", "list a checkpoint's arrays and check its counts");
  audit->add_option("checkpoint", audit_path, "checkpoint file")->required();

  std::string synth_out;
  std::uint64_t synth_seed = 1;
  int synth_docs = 50, synth_sentences = 20, synth_words = 200;
  auto* synth = app.add_subcommand("synth-corpus", "write an order-dependent synthetic corpus");
  synth->add_option("--out", synth_out, "output path")->required();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--documents", synth_docs)->capture_default_str();
  synth->add_option("--sentences", synth_sentences, "sentences per document")->capture_default_str();
  synth->add_option("--words", synth_words, "word types")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(resolve(config_path, pretrain->remaining(), "train"), out);
    if (*gradcheck) return cmd_gradcheck(method, tol, gc_seed, out);
    if (*params) return cmd_params(pm, pn, pd, ph, pk, !shared_only, out);
    if (*compare) return cmd_compare(resolve(config_path, compare->remaining(), "finetune"), out);
    if (*probe) return cmd_probe(resolve(config_path, probe->remaining(), "finetune"), checkpoint, out);
    if (*audit) return cmd_audit(audit_path, out);
    if (*synth) return cmd_synth_corpus(synth_out, synth_seed, synth_docs, synth_sentences, synth_words, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace posemb
