#include "posemb/verify.hpp"

#include <algorithm>
#include <random>

#include "posemb/corpus.hpp"
#include "posemb/errors.hpp"
#include "posemb/kernels.hpp"
#include "posemb/rng.hpp"

namespace posemb {

MethodSpec gradcheck_spec(Kind kind) {
  MethodSpec spec = MethodSpec::of(kind);
  if (uses_vector_table(kind)) spec.clip_k = 3;
  if (kind == Kind::deberta || kind == Kind::tupe) spec.tie_position_projections = false;
  if (kind == Kind::tupe) spec.reset_cls = true;
  return spec;
}

double GradSuiteResult::max_rel_error() const {
  double worst = 0;
  for (const auto& c : classes) worst = std::max(worst, c.comparison.max_rel_error);
  return worst;
}

GradSuiteResult gradient_suite(const MethodSpec& spec, const GradSuiteConfig& gc) {
  EncoderConfig config;
  config.layers = gc.layers;
  config.heads = gc.heads;
  config.width = gc.width;
  config.ff_width = gc.ff_width;
  config.max_len = gc.max_len;
  config.vocab_size = gc.vocab_size;
  config.method = spec;
  config.dropout = 0.0;
  Encoder model(config, gc.seed);
  {
    Rng noise_rng = substream(gc.seed, "gradcheck-weights");
    std::normal_distribution<double> noise(0.0, gc.perturbation);
    for (auto& p : model.parameters())
      for (double& v : p.tensor.values()) v += noise(noise_rng);
  }

  // Two rows; the second is padded at the end.
  Rng rng = substream(gc.seed, "gradcheck-batch");
  std::uniform_int_distribution<int> word(kFirstWordId, gc.vocab_size - 1);
  EncoderInput in;
  in.batch = 2;
  in.length = gc.max_len;
  const auto L = static_cast<std::size_t>(gc.max_len);
  in.ids.assign(2 * L, kPadId);
  in.valid.assign(2 * L, 0);
  std::vector<int> targets(2 * L, -1);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t used = b == 0 ? L : std::max<std::size_t>(2, L - 2);
    for (std::size_t t = 0; t < used; ++t) {
      in.ids[b * L + t] = t == 0 ? kClsId : word(rng);
      in.valid[b * L + t] = 1;
    }
    for (std::size_t t = 1; t < used; t += 2) targets[b * L + t] = word(rng);
  }

  GradSuiteResult result;
  result.spec = spec;
  model.parameters().zero_grad();
  {
    Tape tape;
    Var loss = model.mlm_loss(tape, in, targets);
    result.loss = loss.value()[0];
    tape.backward(loss);
  }
  auto f = [&] {
    Tape tape(false);
    return model.mlm_loss(tape, in, targets).value()[0];
  };
  for (auto& p : model.parameters()) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    const Tensor numeric = finite_diff_grad(f, p.tensor, gc.step);
    const GradComparison cmp = compare_gradients(analytic, numeric.values(), gc.floor);
    auto it = std::find_if(result.classes.begin(), result.classes.end(),
                           [&](const ClassResult& c) { return c.group == p.group; });
    if (it == result.classes.end()) {
      result.classes.push_back({p.group, 1, cmp});
    } else {
      ++it->tensors;
      it->comparison.merge(cmp);
    }
  }
  return result;
}

namespace {

std::string formula(const MethodSpec& spec, int n) {
  const bool clipped = uses_vector_table(spec.kind) && spec.clip_k < n - 1;
  const std::string rows = clipped ? "(2k+1)" : "(2n-1)";
  const std::string heads = spec.share_across_heads ? "" : "h*";
  std::string f;
  switch (spec.kind) {
    case Kind::none:
    case Kind::absolute_sinusoid: f = "0"; break;
    case Kind::absolute_learned:
    case Kind::absolute_real_sentence: f = "nd"; break;
    case Kind::shaw:
    case Kind::m4:
    case Kind::m4m: f = heads + "m" + rows + "d/h"; break;
    case Kind::raffel:
    case Kind::m2: f = heads + "m(2n-1)"; break;
    case Kind::deberta: f = heads + "m" + rows + "d/h + m(d/h)^2"; break;
    case Kind::tupe: f = "mnd/h + m(d/h)^2 + " + heads + "m(2n-1)"; break;
  }
  return f;
}

}  // namespace

std::vector<ParamsRow> params_table(int m, int n, int d, int h, int k, bool include_unshared) {
  if (m < 1 || n < 1 || d < 1 || h < 1) throw ConfigError("params: m, n, d and h must be positive");
  if (d % h != 0) throw ConfigError("params: d=" + std::to_string(d) + " is not divisible by h=" + std::to_string(h));
  if (k < 1) throw ConfigError("params: k must be at least 1");
  std::vector<ParamsRow> rows;
  for (bool share : {true, false}) {
    if (!share && !include_unshared) break;
    for (Kind kind : kAllKinds) {
      MethodSpec spec = MethodSpec::of(kind);
      spec.clip_k = k;
      spec.share_across_heads = share;
      ParamsRow row;
      row.spec = spec;
      row.formula = formula(spec, n);
      row.closed_form = param_count(spec, m, n, d, h);
      row.enumerated = static_cast<std::int64_t>(position_parameters(spec, m, n, d, h).scalar_count());
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace posemb
