#include "posemb/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "posemb/errors.hpp"

namespace posemb {

namespace {

constexpr double kInitStd = 0.02;

const std::set<std::string>& position_groups() {
  static const std::set<std::string> groups = {"absolute_position", "relative_table", "scalar_table",
                                               "rel_query",         "rel_key",        "pos_query",
                                               "pos_key",           "tupe_positions", "reset"};
  return groups;
}

}  // namespace

bool is_position_group(const std::string& group) { return position_groups().contains(group); }

namespace {

using Factory = std::function<std::size_t(const std::string&, const std::string&, Shape)>;

struct PositionSlots {
  std::vector<std::size_t> tables, scalar_tables;
  std::size_t rel_query = Encoder::kNone, rel_key = Encoder::kNone, pos_query = Encoder::kNone,
              pos_key = Encoder::kNone, positions = Encoder::kNone;
  std::size_t theta1 = Encoder::kNone, theta2 = Encoder::kNone;
};

bool has_learned_absolute(const MethodSpec& m) {
  return m.kind == Kind::absolute_learned || m.kind == Kind::absolute_real_sentence || m.combine_absolute;
}

// One layer's position containers. Shared tables are stored once and
// referenced by every head.
PositionSlots add_position_layer(const MethodSpec& m, const std::string& p, std::size_t n,
                                 std::size_t dz, int heads, const Factory& weight, const Factory& ones,
                                 const Factory& zeros) {
  PositionSlots s;
  const int copies = m.share_across_heads ? 1 : heads;
  if (uses_vector_table(m.kind)) {
    const auto rows = static_cast<std::size_t>(vector_table_rows(m, static_cast<int>(n)));
    for (int c = 0; c < copies; ++c) {
      const std::string name = p + "relative_table" + (copies > 1 ? ".head" + std::to_string(c) : "");
      s.tables.push_back(weight(name, "relative_table", {rows, dz}));
    }
    s.tables.resize(static_cast<std::size_t>(heads), s.tables.front());
  }
  if (uses_scalar_table(m.kind)) {
    for (int c = 0; c < copies; ++c) {
      const std::string name = p + "scalar_table" + (copies > 1 ? ".head" + std::to_string(c) : "");
      // Multiplicative scalars start at 1 so M2 begins as the plain dot product.
      s.scalar_tables.push_back(m.kind == Kind::m2 ? ones(name, "scalar_table", {2 * n - 1})
                                                   : weight(name, "scalar_table", {2 * n - 1}));
    }
    s.scalar_tables.resize(static_cast<std::size_t>(heads), s.scalar_tables.front());
  }
  if (m.kind == Kind::deberta) {
    s.rel_query = weight(p + "rel_query", "rel_query", {dz, dz});
    s.rel_key = m.tie_position_projections ? s.rel_query : weight(p + "rel_key", "rel_key", {dz, dz});
  }
  if (m.kind == Kind::tupe) {
    s.positions = weight(p + "tupe_positions", "tupe_positions", {n, dz});
    s.pos_query = weight(p + "pos_query", "pos_query", {dz, dz});
    s.pos_key = m.tie_position_projections ? s.pos_query : weight(p + "pos_key", "pos_key", {dz, dz});
  }
  if (m.reset_cls) {
    s.theta1 = zeros(p + "reset.theta1", "reset", {1});
    s.theta2 = zeros(p + "reset.theta2", "reset", {1});
  }
  return s;
}

}  // namespace

ParameterSet position_parameters(const MethodSpec& spec, int layers, int max_len, int width, int heads) {
  spec.validate();
  if (layers < 1 || max_len < 1 || width < 1 || heads < 1) throw ConfigError("position_parameters: sizes must be positive");
  if (width % heads != 0) throw ConfigError("width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
  ParameterSet params;
  const Factory make = [&](const std::string& name, const std::string& group, Shape shape) {
    return params.add(name, group, std::move(shape), false);
  };
  const auto n = static_cast<std::size_t>(max_len);
  if (has_learned_absolute(spec)) make("embeddings.position", "absolute_position", {n, static_cast<std::size_t>(width)});
  for (int l = 0; l < layers; ++l)
    add_position_layer(spec, "layer" + std::to_string(l) + ".", n, static_cast<std::size_t>(width / heads),
                       heads, make, make, make);
  return params;
}

void EncoderConfig::validate() const {
  if (layers < 1 || heads < 1 || width < 1 || ff_width < 1 || max_len < 1 || vocab_size < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
  }
  if (method.kind == Kind::absolute_sinusoid && width % 2 != 0) {
    throw ConfigError("sinusoidal positions need an even width");
  }
  if (method.reset_cls && max_len < 2) throw ConfigError("reset_cls needs max_len >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (layer_norm_eps <= 0.0) throw ConfigError("layer_norm_eps must be positive");
  method.validate();
}

std::size_t ParameterSet::add(std::string name, std::string group, Shape shape, bool trainable) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  Parameter p{std::move(name), std::move(group), Tensor(std::move(shape))};
  p.tensor.set_requires_grad(trainable);
  items_.push_back(std::move(p));
  return items_.size() - 1;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.size();
  return n;
}

std::size_t ParameterSet::position_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (is_position_group(p.group)) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

EncoderInput EncoderInput::single(std::vector<int> ids) {
  EncoderInput in;
  in.batch = 1;
  in.length = static_cast<int>(ids.size());
  in.ids = std::move(ids);
  return in;
}

Tensor sinusoid_table(int n, int d_model) {
  if (n < 1 || d_model < 1) throw ConfigError("sinusoid_table: n and d_model must be positive");
  if (d_model % 2 != 0) throw ConfigError("sinusoid_table: d_model must be even, got " + std::to_string(d_model));
  Tensor pe({static_cast<std::size_t>(n), static_cast<std::size_t>(d_model)});
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; 2 * i < d_model; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / d_model);
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

HeadOutput attention_head(const MethodSpec& spec, Var q, Var k, Var v, const PositionTerms& terms, const Mask* mask) {
  Var probs = softmax_rows(head_logits(spec, q, k, terms), mask);
  return {matmul(probs, v), probs};
}

HeadOutput attention_head(const MethodSpec& spec, Var x, const HeadProjections& p, const PositionTerms& terms,
                          const Mask* mask) {
  if (!p.value.valid()) throw ConfigError("attention_head needs W^V");
  PositionTerms t = terms;
  if (!t.rel_query.valid()) t.rel_query = p.rel_query;
  if (!t.rel_key.valid()) t.rel_key = p.rel_key;
  if (!t.pos_query.valid()) t.pos_query = p.pos_query;
  if (!t.pos_key.valid()) t.pos_key = p.pos_key;
  if (!t.positions.valid()) t.positions = p.positions;
  return attention_head(spec, matmul(x, p.query), matmul(x, p.key), matmul(x, p.value), t, mask);
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = substream(seed, "init");
  build(rng);
}

void Encoder::build(Rng& rng) {
  const auto d = static_cast<std::size_t>(config_.width);
  const auto dz = static_cast<std::size_t>(config_.head_width());
  const auto dff = static_cast<std::size_t>(config_.ff_width);
  const auto n = static_cast<std::size_t>(config_.max_len);
  const auto vocab = static_cast<std::size_t>(config_.vocab_size);
  const MethodSpec& m = config_.method;

  std::normal_distribution<double> normal(0.0, kInitStd);
  auto init_normal = [&](std::size_t id) {
    for (auto& v : params_[id].tensor.values()) v = normal(rng);
  };
  auto init_fill = [&](std::size_t id, double value) { params_[id].tensor.fill(value); };
  const Factory weight = [&](const std::string& name, const std::string& group, Shape shape) {
    const auto id = params_.add(name, group, std::move(shape));
    init_normal(id);
    return id;
  };
  const Factory zeros = [&](const std::string& name, const std::string& group, Shape shape) {
    return params_.add(name, group, std::move(shape));
  };
  const Factory ones = [&](const std::string& name, const std::string& group, Shape shape) {
    const auto id = params_.add(name, group, std::move(shape));
    init_fill(id, 1.0);
    return id;
  };

  token_table_ = weight("embeddings.token", "token_embedding", {vocab, d});
  if (config_.segment_embedding) segment_table_ = weight("embeddings.segment", "segment_embedding", {2, d});
  if (has_learned_absolute(m)) absolute_table_ = weight("embeddings.position", "absolute_position", {n, d});
  if (m.kind == Kind::absolute_sinusoid) sinusoid_ = sinusoid_table(config_.max_len, config_.width);
  emb_ln_gain_ = ones("embeddings.norm.gain", "embedding_norm", {d});
  emb_ln_bias_ = zeros("embeddings.norm.bias", "embedding_norm", {d});

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer{};
    layer.wq = weight(p + "query.weight", "query", {d, d});
    layer.bq = zeros(p + "query.bias", "query", {d});
    layer.wk = weight(p + "key.weight", "key", {d, d});
    layer.bk = zeros(p + "key.bias", "key", {d});
    layer.wv = weight(p + "value.weight", "value", {d, d});
    layer.bv = zeros(p + "value.bias", "value", {d});
    layer.wo = weight(p + "output.weight", "output", {d, d});
    layer.bo = zeros(p + "output.bias", "output", {d});
    layer.ln1_gain = ones(p + "attention_norm.gain", "attention_norm", {d});
    layer.ln1_bias = zeros(p + "attention_norm.bias", "attention_norm", {d});
    layer.w1 = weight(p + "ffn.in.weight", "ffn", {d, dff});
    layer.b1 = zeros(p + "ffn.in.bias", "ffn", {dff});
    layer.w2 = weight(p + "ffn.out.weight", "ffn", {dff, d});
    layer.b2 = zeros(p + "ffn.out.bias", "ffn", {d});
    layer.ln2_gain = ones(p + "ffn_norm.gain", "ffn_norm", {d});
    layer.ln2_bias = zeros(p + "ffn_norm.bias", "ffn_norm", {d});

    PositionSlots slots = add_position_layer(m, p, n, dz, config_.heads, weight, ones, zeros);
    layer.tables = std::move(slots.tables);
    layer.scalar_tables = std::move(slots.scalar_tables);
    layer.rel_query = slots.rel_query;
    layer.rel_key = slots.rel_key;
    layer.pos_query = slots.pos_query;
    layer.pos_key = slots.pos_key;
    layer.positions = slots.positions;
    layer.theta1 = slots.theta1;
    layer.theta2 = slots.theta2;
    layers_.push_back(std::move(layer));
  }

  head_w_ = weight("mlm.transform.weight", "mlm_head", {d, d});
  head_b_ = zeros("mlm.transform.bias", "mlm_head", {d});
  head_ln_gain_ = ones("mlm.norm.gain", "mlm_head", {d});
  head_ln_bias_ = zeros("mlm.norm.bias", "mlm_head", {d});
  if (!config_.tie_mlm_head) decoder_w_ = weight("mlm.decoder.weight", "mlm_head", {vocab, d});
  decoder_b_ = zeros("mlm.decoder.bias", "mlm_head", {vocab});
}

Var Encoder::bind(Tape& tape, std::size_t id) const {
  if (id == kNone) return Var{};
  // Parameters are only read during forward; the tape writes gradients through the same pointer.
  return tape.parameter(const_cast<Tensor&>(params_[id].tensor));
}

void Encoder::check_input(const EncoderInput& in) const {
  if (in.batch < 1 || in.length < 1) throw InputError("encoder input needs batch >= 1 and length >= 1");
  if (in.length > config_.max_len) {
    throw InputError("sequence length " + std::to_string(in.length) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  const auto total = static_cast<std::size_t>(in.batch) * static_cast<std::size_t>(in.length);
  if (in.ids.size() != total) throw InputError("encoder input: ids size does not match batch x length");
  if (!in.valid.empty() && in.valid.size() != total) throw InputError("encoder input: mask size mismatch");
  if (!in.sentence_positions.empty() && in.sentence_positions.size() != total) {
    throw InputError("encoder input: sentence position size mismatch");
  }
  for (int id : in.ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(config_.vocab_size));
    }
  }
  if (config_.method.reset_cls && in.length < 2) throw InputError("reset_cls needs sequences of length >= 2");
}

Var Encoder::embed_input(Tape& tape, const EncoderInput& in) const {
  check_input(in);
  const int L = in.length;
  Var x = gather_rows(bind(tape, token_table_), in.ids);

  std::vector<int> rows(in.ids.size());
  const Kind kind = config_.method.kind;
  if (kind == Kind::absolute_real_sentence) {
    if (in.sentence_positions.empty()) {
      for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = static_cast<int>(t % static_cast<std::size_t>(L));
    } else {
      for (std::size_t t = 0; t < rows.size(); ++t) {
        const int pos = in.sentence_positions[t];
        if (pos < 1 || pos > config_.max_len) {
          throw InputError("sentence position " + std::to_string(pos) + " outside 1.." +
                           std::to_string(config_.max_len));
        }
        rows[t] = pos - 1;
      }
    }
  } else {
    for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = static_cast<int>(t % static_cast<std::size_t>(L));
  }

  if (absolute_table_ != kNone) x = add(x, gather_rows(bind(tape, absolute_table_), rows));
  if (kind == Kind::absolute_sinusoid) x = add(x, gather_rows(tape.constant(sinusoid_), rows));
  if (segment_table_ != kNone) {
    std::vector<int> seg = in.segments.empty() ? std::vector<int>(in.ids.size(), 0) : in.segments;
    x = add(x, gather_rows(bind(tape, segment_table_), seg));
  }
  return x;
}

PositionTerms Encoder::position_terms(Tape& tape, int layer, int head) const {
  const Layer& l = layers_.at(static_cast<std::size_t>(layer));
  PositionTerms t;
  if (!l.tables.empty()) t.table = bind(tape, l.tables.at(static_cast<std::size_t>(head)));
  if (!l.scalar_tables.empty()) t.scalar_table = bind(tape, l.scalar_tables.at(static_cast<std::size_t>(head)));
  t.rel_query = bind(tape, l.rel_query);
  t.rel_key = bind(tape, l.rel_key);
  t.pos_query = bind(tape, l.pos_query);
  t.pos_key = bind(tape, l.pos_key);
  t.positions = bind(tape, l.positions);
  if (l.theta1 != kNone) t.reset = ResetParams{bind(tape, l.theta1), bind(tape, l.theta2)};
  return t;
}

Var Encoder::encode(Tape& tape, const EncoderInput& in, Rng* rng, AttentionTrace* trace) const {
  const double rate = rng ? config_.dropout : 0.0;
  Rng unused;
  Rng& drop_rng = rng ? *rng : unused;
  const auto B = static_cast<std::size_t>(in.batch), L = static_cast<std::size_t>(in.length);
  const auto H = static_cast<std::size_t>(config_.heads), dz = static_cast<std::size_t>(config_.head_width());
  const double eps = config_.layer_norm_eps;

  Var x;
  try {
    x = embed_input(tape, in);
    x = layer_norm(x, bind(tape, emb_ln_gain_), bind(tape, emb_ln_bias_), eps);
    x = dropout(x, rate, drop_rng);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(0, e.what());
  }

  std::vector<Mask> masks(B);
  std::vector<bool> has_mask(B, false);
  if (!in.valid.empty()) {
    for (std::size_t b = 0; b < B; ++b) {
      std::span<const std::uint8_t> row(in.valid.data() + b * L, L);
      if (std::find(row.begin(), row.end(), 0) != row.end()) {
        masks[b] = Mask::key_padding(row, L);
        has_mask[b] = true;
      }
    }
  }

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    try {
      Var q_all = add_bias(matmul(x, bind(tape, l.wq)), bind(tape, l.bq));
      Var k_all = add_bias(matmul(x, bind(tape, l.wk)), bind(tape, l.bk));
      Var v_all = add_bias(matmul(x, bind(tape, l.wv)), bind(tape, l.bv));
      std::vector<PositionTerms> terms;
      terms.reserve(H);
      for (std::size_t h = 0; h < H; ++h) terms.push_back(position_terms(tape, static_cast<int>(li), static_cast<int>(h)));

      std::vector<Var> blocks;
      blocks.reserve(B * H);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          Var q = slice(q_all, b * L, L, h * dz, dz);
          Var k = slice(k_all, b * L, L, h * dz, dz);
          Var v = slice(v_all, b * L, L, h * dz, dz);
          Var probs = softmax_rows(head_logits(config_.method, q, k, terms[h]), has_mask[b] ? &masks[b] : nullptr);
          if (trace) trace->probs.push_back(probs.value());
          blocks.push_back(matmul(dropout(probs, rate, drop_rng), v));
        }
      }
      Var z = concat_grid(blocks, B, H);
      Var attn = add_bias(matmul(z, bind(tape, l.wo)), bind(tape, l.bo));
      x = layer_norm(add(x, dropout(attn, rate, drop_rng)), bind(tape, l.ln1_gain), bind(tape, l.ln1_bias), eps);
      Var ff = gelu(add_bias(matmul(x, bind(tape, l.w1)), bind(tape, l.b1)));
      ff = add_bias(matmul(ff, bind(tape, l.w2)), bind(tape, l.b2));
      x = layer_norm(add(x, dropout(ff, rate, drop_rng)), bind(tape, l.ln2_gain), bind(tape, l.ln2_bias), eps);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(static_cast<int>(li) + 1, e.what());
    }
  }
  return x;
}

Var Encoder::mlm_logits(Tape& tape, Var hidden) const {
  Var h = gelu(add_bias(matmul(hidden, bind(tape, head_w_)), bind(tape, head_b_)));
  h = layer_norm(h, bind(tape, head_ln_gain_), bind(tape, head_ln_bias_), config_.layer_norm_eps);
  Var decoder = config_.tie_mlm_head ? bind(tape, token_table_) : bind(tape, decoder_w_);
  return add_bias(matmul_nt(h, decoder), bind(tape, decoder_b_));
}

Var Encoder::mlm_loss(Tape& tape, const EncoderInput& in, std::span<const int> targets, Rng* rng) const {
  if (targets.size() != in.ids.size()) throw InputError("mlm_loss: one target slot per token required");
  std::vector<int> rows, labels;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= 0) {
      rows.push_back(static_cast<int>(t));
      labels.push_back(targets[t]);
    }
  }
  if (rows.empty()) throw ContractError("mlm_loss: batch has no target positions");
  Var hidden = encode(tape, in, rng);
  try {
    return cross_entropy_from_logits(mlm_logits(tape, gather_rows(hidden, rows)), labels);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(config_.layers + 1, e.what());
  }
}

Tensor Encoder::forward(const EncoderInput& in, AttentionTrace* trace) const {
  Tape tape(false);
  Var hidden = encode(tape, in, nullptr, trace);
  return mlm_logits(tape, hidden).value();
}

std::size_t Encoder::core_parameter_count() const { return params_.scalar_count() - params_.position_scalar_count(); }

std::size_t Encoder::position_parameter_count() const { return params_.position_scalar_count(); }

}  // namespace posemb
