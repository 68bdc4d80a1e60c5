#include <doctest.h>

#include "afford3d/config.hpp"
#include "afford3d/error.hpp"

using namespace afford3d;

TEST_CASE("run config: defaults, overrides, round-trip") {
  const auto d = parse_run_config("{}");
  CHECK(d.train.learning_rate == 2e-4);
  CHECK(d.train.loss.weights.spatial == 1.0);
  CHECK(d.train.model.frames == 8);

  const auto c = parse_run_config(R"({"seed": 5, "train": {"learning_rate": 0.01, "steps": 40}, "loss": {"lambda_spatial": 0},
                                     "model": {"frames": 4}, "eval": {"bin_threshold": 0.4}})");
  CHECK(c.train.seed == 5);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.steps == 40);
  CHECK(c.train.loss.weights.spatial == 0.0);
  CHECK(c.train.model.frames == 4);
  CHECK(c.protocol.bin_threshold == 0.4);

  const auto again = parse_run_config(to_json_text(c));
  CHECK(to_json_text(again) == to_json_text(c));
  CHECK(config_hash(again) == config_hash(c));
  CHECK(config_hash(c) != config_hash(d));
  CHECK(hash_hex(0xabcULL) == "0000000000000abc");
}

TEST_CASE("run config: rejects unknown keys and bad values") {
  auto kind = [](const char* text) {
    try {
      parse_run_config(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind(R"({"sed": 1})") == ErrorKind::Config);
  CHECK(kind(R"({"train": {"lrr": 1}})") == ErrorKind::Config);
  CHECK(kind(R"({"model": {"frames": 3}})") == ErrorKind::Config);
  CHECK(kind(R"({"train": {"learning_rate": "fast"}})") == ErrorKind::Config);
  CHECK(kind("{not json") == ErrorKind::Config);
}
