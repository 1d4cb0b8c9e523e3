#include "posemb/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "posemb/errors.hpp"
#include "posemb/ops.hpp"
#include "posemb/rng.hpp"

namespace posemb {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::offset_copy: return "offset_copy";
    case TaskKind::relative_distance_cls: return "relative_distance_cls";
    case TaskKind::absolute_position_probe: return "absolute_position_probe";
    case TaskKind::cls_summary: return "cls_summary";
  }
  return "?";
}

std::optional<TaskKind> parse_task(std::string_view text) {
  for (TaskKind k : {TaskKind::offset_copy, TaskKind::relative_distance_cls, TaskKind::absolute_position_probe,
                     TaskKind::cls_summary})
    if (task_name(k) == text) return k;
  return std::nullopt;
}

void ProbeTask::validate() const {
  const std::string name(task_name(kind));
  if (length < 3) throw ConfigError(name + ": length must be at least 3");
  if (content_vocab < 2) throw ConfigError(name + ": content_vocab must be at least 2");
  const int slots = length - 1;
  switch (kind) {
    case TaskKind::offset_copy:
      if (content_vocab < slots - 1)
        throw ConfigError("offset_copy: content_vocab " + std::to_string(content_vocab) + " is below the " +
                          std::to_string(slots - 1) + " distinct content tokens a sequence needs");
      if (offset == 0 || std::abs(offset) > slots - 1)
        throw ConfigError("offset_copy: offset " + std::to_string(offset) + " does not fit in " +
                          std::to_string(slots) + " task positions");
      break;
    case TaskKind::relative_distance_cls:
      if (max_distance < 1 || max_distance > slots - 1)
        throw ConfigError("relative_distance_cls: max_distance " + std::to_string(max_distance) +
                          " does not fit in " + std::to_string(slots) + " task positions");
      break;
    case TaskKind::absolute_position_probe: break;
    case TaskKind::cls_summary:
      if (count_classes < 2 || count_classes - 1 > slots)
        throw ConfigError("cls_summary: count_classes must lie in [2, length]");
      break;
  }
}

int ProbeTask::num_labels() const {
  switch (kind) {
    case TaskKind::offset_copy: return content_vocab;
    case TaskKind::relative_distance_cls: return max_distance + 1;
    case TaskKind::absolute_position_probe: return length - 1;
    case TaskKind::cls_summary: return count_classes;
  }
  return 0;
}

namespace {

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

int task_label(const ProbeTask& task, std::span<const int> ids) {
  if (static_cast<int>(ids.size()) != task.length) throw InputError("task_label: sequence length mismatch");
  std::vector<int> marks;
  for (int t = 1; t < task.length; ++t)
    if (ids[static_cast<std::size_t>(t)] == kMarkId) marks.push_back(t);
  switch (task.kind) {
    case TaskKind::offset_copy: {
      if (marks.size() != 1) throw InputError("offset_copy: expected exactly one marker");
      const int target = marks.front() + task.offset;
      if (target < 1 || target >= task.length) throw InputError("offset_copy: offset leaves the sequence");
      return ids[static_cast<std::size_t>(target)] - kFirstContentId;
    }
    case TaskKind::relative_distance_cls:
      if (marks.size() != 2) throw InputError("relative_distance_cls: expected exactly two markers");
      return marks[1] - marks[0];
    case TaskKind::absolute_position_probe:
      if (marks.size() != 1) throw InputError("absolute_position_probe: expected exactly one marker");
      return marks.front() - 1;
    case TaskKind::cls_summary: return static_cast<int>(marks.size());
  }
  return 0;
}

Example generate_example(const ProbeTask& task, Rng& rng) {
  const int L = task.length;
  Example ex;
  ex.ids.assign(static_cast<std::size_t>(L), 0);
  ex.ids[0] = kClsId;
  for (int t = 1; t < L; ++t) ex.ids[static_cast<std::size_t>(t)] = kFirstContentId + uniform(rng, 0, task.content_vocab - 1);
  auto at = [&](int pos) -> int& { return ex.ids[static_cast<std::size_t>(pos)]; };
  switch (task.kind) {
    case TaskKind::offset_copy: {
      ex.label = uniform(rng, 0, task.num_labels() - 1);
      const int lo = std::max(1, 1 - task.offset), hi = std::min(L - 1, L - 1 - task.offset);
      const int mark = uniform(rng, lo, hi);
      // Distinct content tokens, so the bag of tokens carries no hint of the label.
      std::vector<int> pool;
      for (int c = 0; c < task.content_vocab; ++c)
        if (c != ex.label) pool.push_back(kFirstContentId + c);
      std::shuffle(pool.begin(), pool.end(), rng);
      std::size_t next = 0;
      for (int t = 1; t < L; ++t) {
        if (t == mark)
          at(t) = kMarkId;
        else if (t == mark + task.offset)
          at(t) = kFirstContentId + ex.label;
        else
          at(t) = pool[next++];
      }
      break;
    }
    case TaskKind::relative_distance_cls: {
      ex.label = uniform(rng, 1, task.max_distance);
      const int first = uniform(rng, 1, L - 1 - ex.label);
      at(first) = kMarkId;
      at(first + ex.label) = kMarkId;
      break;
    }
    case TaskKind::absolute_position_probe: {
      ex.label = uniform(rng, 0, task.num_labels() - 1);
      at(ex.label + 1) = kMarkId;
      break;
    }
    case TaskKind::cls_summary: {
      ex.label = uniform(rng, 0, task.count_classes - 1);
      std::vector<int> slots(static_cast<std::size_t>(L - 1));
      std::iota(slots.begin(), slots.end(), 1);
      for (int c = 0; c < ex.label; ++c) {
        const int pick = uniform(rng, c, L - 2);
        std::swap(slots[static_cast<std::size_t>(c)], slots[static_cast<std::size_t>(pick)]);
        at(slots[static_cast<std::size_t>(c)]) = kMarkId;
      }
      break;
    }
  }
  return ex;
}

std::vector<Example> generate_task(const ProbeTask& task, std::size_t count, Rng& rng) {
  task.validate();
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_example(task, rng));
  return out;
}

TaskSplit generate_split(const ProbeTask& task, std::size_t train_count, std::size_t test_count,
                         std::uint64_t seed) {
  task.validate();
  Rng train_rng = substream(seed, "task-train");
  Rng test_rng = substream(seed, "task-test");
  TaskSplit split;
  split.train = generate_task(task, train_count, train_rng);
  std::set<std::vector<int>> seen;
  for (const auto& ex : split.train) seen.insert(ex.ids);
  const std::size_t budget = 50 * test_count + 1000;
  for (std::size_t attempt = 0; split.test.size() < test_count; ++attempt) {
    if (attempt >= budget)
      throw ConfigError(std::string(task_name(task.kind)) + ": cannot draw " + std::to_string(test_count) +
                        " test sequences disjoint from training; enlarge length or content_vocab");
    Example ex = generate_example(task, test_rng);
    if (seen.insert(ex.ids).second) split.test.push_back(std::move(ex));
  }
  return split;
}

double majority_baseline(std::span<const Example> train, std::span<const Example> test, int num_labels) {
  if (test.empty()) throw ContractError("majority_baseline: empty test set");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_labels), 0);
  for (const auto& ex : train) ++counts.at(static_cast<std::size_t>(ex.label));
  const auto majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const auto hits = std::count_if(test.begin(), test.end(), [&](const Example& e) { return e.label == majority; });
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

EncoderInput task_batch(std::span<const Example> examples, int length) {
  EncoderInput in;
  in.batch = static_cast<int>(examples.size());
  in.length = length;
  in.ids.reserve(examples.size() * static_cast<std::size_t>(length));
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.ids.size()) != length) throw InputError("task_batch: example length mismatch");
    in.ids.insert(in.ids.end(), ex.ids.begin(), ex.ids.end());
  }
  in.sentence_positions.resize(in.ids.size());
  for (std::size_t i = 0; i < in.ids.size(); ++i)
    in.sentence_positions[i] = static_cast<int>(i % static_cast<std::size_t>(length)) + 1;
  return in;
}

void FineTuneConfig::validate() const {
  if (steps < 1) throw ConfigError("finetune.steps must be positive");
  if (batch_size < 1) throw ConfigError("finetune.batch_size must be positive");
  if (train_examples < 1 || test_examples < 1) throw ConfigError("finetune example counts must be positive");
  adam.validate();
}

namespace {

Var classify(Tape& tape, const Encoder& model, const EncoderInput& in, Tensor& weight, Tensor& bias, Rng* dropout) {
  Var hidden = model.encode(tape, in, dropout);
  std::vector<int> cls(static_cast<std::size_t>(in.batch));
  for (int b = 0; b < in.batch; ++b) cls[static_cast<std::size_t>(b)] = b * in.length;
  return add_bias(matmul(gather_rows(hidden, cls), tape.parameter(weight)), tape.parameter(bias));
}

}  // namespace

FineTuneResult fine_tune(Encoder& model, const ProbeTask& task, const FineTuneConfig& config, std::uint64_t seed) {
  task.validate();
  config.validate();
  const EncoderConfig& mc = model.config();
  if (mc.max_len < task.length)
    throw ContractError("fine_tune: model max_len " + std::to_string(mc.max_len) + " is shorter than task length " +
                        std::to_string(task.length));
  if (mc.vocab_size < task.vocab_size())
    throw ContractError("fine_tune: model vocabulary " + std::to_string(mc.vocab_size) + " cannot hold task tokens (" +
                        std::to_string(task.vocab_size()) + ")");

  const TaskSplit split = generate_split(task, static_cast<std::size_t>(config.train_examples),
                                         static_cast<std::size_t>(config.test_examples), derive_seed(seed, "task-data"));
  const int labels = task.num_labels();
  FineTuneResult result;
  result.majority = majority_baseline(split.train, split.test, labels);

  Rng head_rng = substream(seed, "head-init");
  Tensor weight({static_cast<std::size_t>(mc.width), static_cast<std::size_t>(labels)}, 0.0);
  std::normal_distribution<double> init(0.0, 0.02);
  for (double& w : weight.values()) w = init(head_rng);
  Tensor bias({static_cast<std::size_t>(labels)}, 0.0);
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);

  std::vector<Tensor*> tensors = parameter_tensors(model.parameters());
  std::vector<std::string> names = parameter_names(model.parameters());
  tensors.push_back(&weight);
  tensors.push_back(&bias);
  names.emplace_back("head.weight");
  names.emplace_back("head.bias");

  Rng batch_rng = substream(seed, "finetune-batches");
  Rng dropout_rng = substream(seed, "finetune-dropout");
  std::uniform_int_distribution<std::size_t> pick(0, split.train.size() - 1);
  AdamState adam;
  std::vector<double> recent;
  std::vector<Example> batch(static_cast<std::size_t>(config.batch_size));
  std::vector<int> targets(batch.size());
  for (std::int64_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = split.train[pick(batch_rng)];
      targets[b] = batch[b].label;
    }
    const EncoderInput in = task_batch(batch, task.length);
    try {
      for (Tensor* t : tensors) t->zero_grad();
      Tape tape;
      Var loss = cross_entropy_from_logits(
          classify(tape, model, in, weight, bias, mc.dropout > 0 ? &dropout_rng : nullptr), targets);
      tape.backward(loss);
      adam_step(tensors, adam, config.adam, scheduled_rate(config.adam, step, config.steps), names);
      recent.push_back(loss.value()[0]);
      if (recent.size() > 50) recent.erase(recent.begin());
      result.steps_run = step;
    } catch (const Error& e) {
      if (!dynamic_cast<const DivergenceError*>(&e) && !dynamic_cast<const NonFiniteError*>(&e)) throw;
      result.diverged = true;
      result.divergence = e.what();
      result.accuracy = std::numeric_limits<double>::quiet_NaN();
      result.final_loss = std::numeric_limits<double>::quiet_NaN();
      return result;
    }
  }
  result.final_loss = std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());

  std::size_t correct = 0;
  const std::size_t chunk = 256;
  try {
    for (std::size_t start = 0; start < split.test.size(); start += chunk) {
      const std::size_t n = std::min(chunk, split.test.size() - start);
      const std::span<const Example> part(split.test.data() + start, n);
      Tape tape(false);
      const Tensor& logits = classify(tape, model, task_batch(part, task.length), weight, bias, nullptr).value();
      for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.data() + r * static_cast<std::size_t>(labels);
        const auto guess = static_cast<int>(std::max_element(row, row + labels) - row);
        if (guess == part[r].label) ++correct;
      }
    }
  } catch (const DivergenceError& e) {
    result.diverged = true;
    result.divergence = e.what();
    result.accuracy = std::numeric_limits<double>::quiet_NaN();
    return result;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(split.test.size());
  return result;
}

}  // namespace posemb
