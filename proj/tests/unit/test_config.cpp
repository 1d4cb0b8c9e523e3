#include <doctest.h>

#include <algorithm>

#include "posemb/config.hpp"
#include "posemb/errors.hpp"

using namespace posemb;

namespace {

RunConfig resolve_text(std::string_view text) { return resolve_config(parse_config_entries(text, "test.ini")); }

bool has_key(const std::string& key) {
  const auto keys = config_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("sections, comments and values") {
    const RunConfig c = resolve_text(
        "# a comment\n"
        "[run]\n"
        "seed = 42\n"
        "output = runs/x\n"
        "; another comment\n"
        "[encoder]\n"
        "layers = 3\n"
        "dropout = 0.25\n"
        "[method]\n"
        "kind = deberta\n"
        "clip_k = 5\n"
        "share_across_heads = false\n"
        "[tasks]\n"
        "names = offset_copy, cls_summary\n"
        "[compare]\n"
        "methods = m4, abs+m4m, m4+reset\n"
        "seeds = 3, 4, 5\n");
    CHECK(c.seed == 42);
    CHECK(c.output == "runs/x");
    CHECK(c.encoder.layers == 3);
    CHECK(c.encoder.dropout == 0.25);
    CHECK(c.encoder.method.kind == Kind::deberta);
    CHECK(c.encoder.method.scaling_factor == 3);
    CHECK(c.encoder.method.clip_k == 5);
    CHECK_FALSE(c.encoder.method.share_across_heads);
    CHECK(c.task_kinds == std::vector<TaskKind>{TaskKind::offset_copy, TaskKind::cls_summary});
    REQUIRE(c.methods.size() == 3);
    CHECK(c.methods[1].combine_absolute);
    CHECK(c.methods[2].reset_cls);
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 4, 5});
  }

  TEST_CASE("explicit scaling factor wins over the kind default") {
    CHECK(resolve_text("[method]\nkind = tupe\n").encoder.method.scaling_factor == 2);
    CHECK(resolve_text("[method]\nscaling_factor = 6\nkind = tupe\n").encoder.method.scaling_factor == 6);
  }

  TEST_CASE("unknown or malformed entries are rejected with their origin") {
    auto message = [](std::string_view text) {
      try {
        resolve_text(text);
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message("[encoder]\nlayerz = 2\n").find("test.ini:2") != std::string::npos);
    CHECK(message("[encoder]\nlayerz = 2\n").find("layerz") != std::string::npos);
    CHECK(message("[nope]\n").find("unknown section") != std::string::npos);
    CHECK(message("[encoder]\nlayers = two\n").find("encoder.layers") != std::string::npos);
    CHECK(message("layers = 2\n").find("outside any section") != std::string::npos);
    CHECK(message("[method]\nkind = m5\n").find("m5") != std::string::npos);
    CHECK(message("[encoder]\nwidth = 30\nheads = 4\n").find("divisible") != std::string::npos);
    CHECK(message("[method]\nshare_across_heads = maybe\n") != "");
  }

  TEST_CASE("resolved config text round trips") {
    const RunConfig c = resolve_text("[method]\nkind = m4m\nreset_cls = true\n[train]\nsteps = 77\n");
    const std::string text = config_text(c);
    const RunConfig back = resolve_text(text);
    CHECK(config_text(back) == text);
    CHECK(back.encoder == c.encoder);
    CHECK(back.train.steps == 77);

    const EncoderConfig e = parse_encoder_config(encoder_config_text(c.encoder));
    CHECK(e == c.encoder);
  }

  TEST_CASE("command-line overrides") {
    const auto entries = parse_override_args({"--steps", "10", "--encoder.layers=4", "--kind", "shaw"}, "train");
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].section == "train");
    CHECK(entries[0].key == "steps");
    CHECK(entries[1].section == "encoder");
    CHECK(entries[1].value == "4");
    CHECK(entries[2].section == "method");

    CHECK(parse_override_args({"--steps", "5"}, "finetune")[0].section == "finetune");
    CHECK_THROWS_AS(parse_override_args({"--steps", "5"}), ConfigError);
    CHECK_THROWS_AS(parse_override_args({"--bogus", "1"}), ConfigError);
    CHECK_THROWS_AS(parse_override_args({"--seed"}), ConfigError);
    CHECK_THROWS_AS(parse_override_args({"stray"}), ConfigError);

    std::vector<ConfigEntry> all = parse_config_entries("[train]\nsteps = 100\n", "f");
    for (auto& e : parse_override_args({"--train.steps", "3"})) all.push_back(e);
    CHECK(resolve_config(all).train.steps == 3);
  }

  TEST_CASE("config diff names changed keys") {
    const RunConfig a = resolve_text("[encoder]\nlayers = 2\n");
    const RunConfig b = resolve_text("[encoder]\nlayers = 3\n[method]\nkind = m4\n");
    const auto diff = config_diff(encoder_config_text(a.encoder), encoder_config_text(b.encoder));
    CHECK(std::find(diff.begin(), diff.end(), "encoder.layers: 2 -> 3") != diff.end());
    CHECK(std::any_of(diff.begin(), diff.end(), [](const std::string& d) { return d.rfind("method.kind:", 0) == 0; }));
    CHECK(config_diff(encoder_config_text(a.encoder), encoder_config_text(a.encoder)).empty());
  }

  TEST_CASE("registry covers every section") {
    for (const char* key : {"run.seed", "run.corpus", "encoder.max_len", "method.reset_cls", "train.mask_rate",
                            "tasks.offset", "finetune.steps", "compare.sweep"})
      CHECK(has_key(key));
  }

  TEST_CASE("compare methods come from the sweep or the list") {
    CHECK(resolve_text("[compare]\nsweep = scaling\n").compare_methods().size() == 6);
    CHECK_THROWS_AS(resolve_text("[compare]\nsweep = scaling\nmethods = m4\n"), ConfigError);
    CHECK_THROWS_AS(resolve_text("[compare]\nsweep = bogus\n"), ConfigError);
    CHECK_THROWS_AS(resolve_text("").compare_methods(), ConfigError);
  }
}
