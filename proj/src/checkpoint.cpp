#include "posemb/checkpoint.hpp"

#include <cmath>

#include "posemb/config.hpp"
#include "posemb/errors.hpp"
#include "posemb/kernels.hpp"

namespace posemb {

ArrayContainer checkpoint_container(const Encoder& model) {
  ArrayContainer c;
  c.metadata = encoder_config_text(model.config());
  for (const auto& p : model.parameters()) c.arrays.push_back({p.name, Tensor(p.tensor.shape(), std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()))});
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Encoder& model) {
  save_container(path, checkpoint_container(model));
}

Encoder restore_checkpoint(const ArrayContainer& container) {
  const EncoderConfig config = parse_encoder_config(container.metadata);
  Encoder model(config, 0);
  std::vector<std::string> problems;
  for (auto& p : model.parameters()) {
    const NamedArray* a = container.find(p.name);
    if (!a) {
      problems.push_back(p.name + ": missing from checkpoint");
    } else if (a->tensor.shape() != p.tensor.shape()) {
      problems.push_back(p.name + ": checkpoint shape " + shape_string(a->tensor.shape()) + " vs model shape " +
                         shape_string(p.tensor.shape()));
    } else {
      std::copy(a->tensor.values().begin(), a->tensor.values().end(), p.tensor.values().begin());
    }
  }
  for (const auto& a : container.arrays)
    if (!model.parameters().find(a.name)) problems.push_back(a.name + ": not a parameter of the configured model");
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match its model config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw InputError(msg);
  }
  return model;
}

Encoder load_checkpoint(const std::filesystem::path& path) { return restore_checkpoint(load_container(path)); }

Encoder load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
  const ArrayContainer container = load_container(path);
  const auto diff = config_diff(container.metadata, encoder_config_text(expected));
  if (!diff.empty()) {
    std::string msg = "checkpoint " + path.string() + " was saved with a different config (checkpoint -> expected):";
    for (const auto& d : diff) msg += "\n  " + d;
    throw InputError(msg);
  }
  return restore_checkpoint(container);
}

CheckpointAudit audit_checkpoint(const std::filesystem::path& path) {
  const Encoder model = load_checkpoint(path);
  CheckpointAudit audit;
  audit.config = model.config();
  for (const auto& p : model.parameters()) {
    ArrayAudit a;
    a.name = p.name;
    a.group = p.group;
    a.shape = p.tensor.shape();
    a.scalars = p.tensor.size();
    double sq = 0;
    for (double v : p.tensor.values()) {
      if (!std::isfinite(v)) a.finite = false;
      sq += v * v;
    }
    a.rms = std::sqrt(sq / static_cast<double>(a.scalars));
    audit.all_finite = audit.all_finite && a.finite;
    audit.arrays.push_back(a);
  }
  audit.total_scalars = model.parameters().scalar_count();
  audit.position_scalars = model.position_parameter_count();
  const EncoderConfig& c = model.config();
  audit.closed_form = param_count(c.method, c.layers, c.max_len, c.width, c.heads);
  return audit;
}

}  // namespace posemb
