#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "posemb/kernels.hpp"
#include "posemb/method.hpp"
#include "posemb/ops.hpp"
#include "posemb/rng.hpp"
#include "posemb/tape.hpp"

namespace posemb {

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int width = 64;  // d_x
  int ff_width = 256;
  int max_len = 128;  // n
  int vocab_size = 1024;
  MethodSpec method = MethodSpec::of(Kind::absolute_learned);
  double dropout = 0.1;
  bool tie_mlm_head = true;
  bool segment_embedding = false;
  double layer_norm_eps = 1e-5;

  int head_width() const { return width / heads; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Groups whose scalars count as position-embedding parameters.
bool is_position_group(const std::string& group);

struct Parameter {
  std::string name;
  std::string group;
  Tensor tensor;
};

/// Named learnable tensors. Storage is stable, so indices stay valid as the
/// set grows and survive copying the owning model.
class ParameterSet {
 public:
  // Trainable parameters get a gradient buffer.
  std::size_t add(std::string name, std::string group, Shape shape, bool trainable = true);

  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const noexcept { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t scalar_count() const;
  std::size_t position_scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> items_;
};

// Position-embedding containers exactly as the encoder allocates them,
// without the transformer core (zero-initialized).
ParameterSet position_parameters(const MethodSpec& spec, int layers, int max_len, int width, int heads);

/// One or more sequences of equal (padded) length.
struct EncoderInput {
  int batch = 1;
  int length = 0;
  std::vector<int> ids;                 // batch * length token ids
  std::vector<std::uint8_t> valid;      // 1 for real tokens, 0 for padding; empty = all real
  std::vector<int> sentence_positions;  // 1-based position inside the source sentence (real-sentence mode)
  std::vector<int> segments;            // 0/1 per token when segment embeddings are on

  static EncoderInput single(std::vector<int> ids);
};

/// Softmax attention weights captured during a forward pass, indexed by
/// (layer, sequence, head) in that nesting order.
struct AttentionTrace {
  std::vector<Tensor> probs;
};

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...), pos from 0.
Tensor sinusoid_table(int n, int d_model);

struct HeadOutput {
  Var z;      // n x d_z
  Var probs;  // n x n
};

// z_i = sum_j alpha_ij v_j with alpha = softmax of the method's logits.
HeadOutput attention_head(const MethodSpec& spec, Var q, Var k, Var v, const PositionTerms& terms,
                          const Mask* mask = nullptr);
HeadOutput attention_head(const MethodSpec& spec, Var x, const HeadProjections& p, const PositionTerms& terms,
                          const Mask* mask = nullptr);

class Encoder {
 public:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  Encoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  // Token embeddings plus the active absolute position source (before LayerNorm).
  Var embed_input(Tape& tape, const EncoderInput& input) const;
  // Final hidden states, [batch * length, width]. Dropout is applied only when rng is given.
  Var encode(Tape& tape, const EncoderInput& input, Rng* dropout_rng = nullptr,
             AttentionTrace* trace = nullptr) const;
  Var mlm_logits(Tape& tape, Var hidden) const;
  // Mean cross-entropy over positions whose target is >= 0.
  Var mlm_loss(Tape& tape, const EncoderInput& input, std::span<const int> targets, Rng* dropout_rng = nullptr) const;
  // MLM logits [batch * length, vocab] without dropout or gradients.
  Tensor forward(const EncoderInput& input, AttentionTrace* trace = nullptr) const;

  // Position terms and projections bound on `tape` for one head.
  PositionTerms position_terms(Tape& tape, int layer, int head) const;

  std::size_t core_parameter_count() const;
  std::size_t position_parameter_count() const;

 private:
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias;
    std::vector<std::size_t> tables;         // per head; equal ids when shared
    std::vector<std::size_t> scalar_tables;  // per head; equal ids when shared
    std::size_t rel_query = kNone, rel_key = kNone, pos_query = kNone, pos_key = kNone, positions = kNone;
    std::size_t theta1 = kNone, theta2 = kNone;
  };

  void build(Rng& rng);
  Var bind(Tape& tape, std::size_t id) const;
  void check_input(const EncoderInput& input) const;

  EncoderConfig config_;
  ParameterSet params_;
  Tensor sinusoid_;
  std::size_t token_table_ = kNone, segment_table_ = kNone, absolute_table_ = kNone;
  std::size_t emb_ln_gain_ = kNone, emb_ln_bias_ = kNone;
  std::size_t head_w_ = kNone, head_b_ = kNone, head_ln_gain_ = kNone, head_ln_bias_ = kNone;
  std::size_t decoder_w_ = kNone, decoder_b_ = kNone;
  std::vector<Layer> layers_;
};

}  // namespace posemb
