#include <doctest.h>

#include <cmath>

#include "afford3d/error.hpp"
#include "afford3d/pipeline.hpp"
#include "afford3d/trainer.hpp"
#include "test_support.hpp"

using namespace afford3d;
using namespace afford3d::train;

namespace {

ErrorKind kind_of(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::InvalidInput;
}

std::vector<NamedTensor> scalar_param(double v) { return {{"p", ad::Tensor::scalar(v)}}; }

TrainConfig small_train_config() {
  TrainConfig c;
  c.model = gradcheck_model_config();
  c.model.tokens = 16;
  c.learning_rate = 1e-2;
  c.warmup_ratio = 0.05;
  c.steps = 200;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("cosine schedule") {
  const double lr = 2e-4;
  const std::size_t total = 100;
  CHECK(cosine_schedule(0, total, 0.03, lr) == 0.0);
  CHECK(cosine_schedule(3, total, 0.03, lr) == lr);
  CHECK(cosine_schedule(total, total, 0.03, lr) == doctest::Approx(0.0).epsilon(1e-18));
  // Decay midpoint with an even decay span.
  CHECK(cosine_schedule(7, 12, 0.1, lr) == doctest::Approx(lr / 2).epsilon(1e-12));
  CHECK(cosine_schedule(1, 10, 0.2, lr) == doctest::Approx(lr / 2));
  CHECK(kind_of([] { cosine_schedule(11, 10, 0.1, 1.0); }) == ErrorKind::Parameter);
  double prev = lr + 1;
  for (std::size_t s = 3; s <= total; ++s) {
    const double v = cosine_schedule(s, total, 0.03, lr);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("adamw: zero gradients leave parameters unchanged") {
  auto p = scalar_param(0.7);
  OptimizerState s;
  adamw_step(p, std::vector<ad::Tensor>{ad::Tensor::scalar(0.0)}, s, {1e-2});
  CHECK(p[0].tensor.item() == 0.7);
}

TEST_CASE("adamw: one step closed form") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.3;
  auto p = scalar_param(1.0);
  OptimizerState s;
  adamw_step(p, std::vector<ad::Tensor>{ad::Tensor::scalar(g)}, s, {lr, b1, b2, eps, 0.0});
  const double m_hat = (1 - b1) * g / (1 - b1), v_hat = (1 - b2) * g * g / (1 - b2);
  CHECK(p[0].tensor.item() == doctest::Approx(1.0 - lr * m_hat / (std::sqrt(v_hat) + eps)).epsilon(1e-15));

  auto q = scalar_param(1.0);
  OptimizerState sq;
  adam_step(q, std::vector<ad::Tensor>{ad::Tensor::scalar(g)}, sq, {lr, b1, b2, eps, 0.0});
  CHECK(q[0].tensor.item() == p[0].tensor.item());
}

TEST_CASE("adamw: decoupled decay with zero gradients") {
  auto p = scalar_param(2.0);
  OptimizerState s;
  adamw_step(p, std::vector<ad::Tensor>{ad::Tensor::scalar(0.0)}, s, {0.1, 0.9, 0.999, 1e-8, 0.05});
  CHECK(p[0].tensor.item() == doctest::Approx(2.0 - 0.1 * 0.05 * 2.0).epsilon(1e-15));
  CHECK(kind_of([&] { adamw_step(p, std::vector<ad::Tensor>{ad::Tensor({2})}, s, {}); }) == ErrorKind::Shape);
}

TEST_CASE("adamw matches adam reference over many steps without decay") {
  std::vector<NamedTensor> a{{"x", ad::Tensor::matrix(2, 3, testing::random_values(6, 1, -1, 1))}};
  auto b = a;
  OptimizerState sa, sb;
  for (int t = 0; t < 25; ++t) {
    const std::vector<ad::Tensor> g{ad::Tensor::matrix(2, 3, testing::random_values(6, 100 + t, -1, 1))};
    adamw_step(a, g, sa, {3e-3});
    adam_step(b, g, sb, {3e-3});
  }
  CHECK(a[0].tensor == b[0].tensor);
}

TEST_CASE("training: empty set, lr 0, determinism") {
  auto config = small_train_config();
  CHECK(kind_of([&] { train::train({}, config); }) == ErrorKind::Config);

  std::vector<TrainingSample> samples;
  for (std::uint64_t s = 0; s < 3; ++s) samples.push_back(prepare_training_sample(random_gradcheck_sample(64, s), config));

  config.steps = 20;
  config.batch_size = 2;
  const auto a = train::train(samples, config);
  const auto b = train::train(samples, config);
  CHECK(format_loss_log(a.log, 1) == format_loss_log(b.log, 1));
  CHECK(a.params.tensors() == b.params.tensors());
  CHECK(a.log.size() == 20);

  config.learning_rate = 0.0;
  const auto initial = model::ModelParams::init(config.model, config.seed);
  const auto frozen = train::train(samples, config, initial);
  CHECK(frozen.params.tensors() == initial.tensors());
}

TEST_CASE("training: a single sample overfits") {
  const auto dir = testing::scratch_dir("overfit");
  dataset::SynthConfig sc;
  sc.types = 1;
  sc.samples_per_type = 1;
  sc.points = 256;
  sc.test_ratio = 0.0;
  const auto m = dataset::synth_generate(sc, dir);
  auto config = small_train_config();
  config.steps = 300;
  config.model.tokens = 32;
  const std::vector<TrainingSample> one{prepare_training_sample(pipeline::load_sample(m, m.entries[0]), config)};
  const auto result = train::train(one, config);
  const std::size_t warm = static_cast<std::size_t>(std::ceil(config.warmup_ratio * config.steps));
  std::size_t decreasing = 0, considered = 0;
  for (std::size_t i = warm + 1; i < result.log.size(); ++i) {
    ++considered;
    decreasing += result.log[i].loss.total <= result.log[i - 1].loss.total;
  }
  CHECK(double(decreasing) / considered >= 0.9);
  CHECK(sample_loss(one[0], result.params, config.loss) < 0.05);
}

TEST_CASE("loss log format") {
  std::vector<StepLog> log(2);
  log[0].step = 0;
  log[1].step = 1;
  const auto text = format_loss_log(log, 0xabcULL);
  CHECK(text.rfind("# config_hash=0000000000000abc\nstep\tlr\tce\tbce\tspatial\tiou\ttotal\n", 0) == 0);
}

TEST_CASE("gradient check passes on random samples and catches a corrupted rule") {
  const auto config = gradcheck_model_config();
  TrainConfig tc;
  tc.model = config;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto sample = prepare_training_sample(random_gradcheck_sample(64, s), tc);
    const auto params = model::ModelParams::init(config, s);
    const auto report = gradient_check(sample, params, tc.loss, 1e-5, 1e-6);
    CHECK(report.passed);
    CHECK(report.errors.size() == 21);
    CHECK(report.max_error <= 1e-5);
  }
  const auto sample = prepare_training_sample(random_gradcheck_sample(64, 9), tc);
  const auto params = model::ModelParams::init(config, 9);
  for (auto op : {ad::Op::Matmul, ad::Op::Relu, ad::Op::SoftmaxRows, ad::Op::Sigmoid}) {
    CHECK_FALSE(gradient_check(sample, params, tc.loss, 1e-5, 1e-6, std::make_pair(op, 1.5)).passed);
  }
}

TEST_CASE("linear submodel gradients are exact to 1e-9") {
  const ad::Tensor x = ad::Tensor::matrix(5, 4, testing::random_values(20, 3, -1, 1));
  const ad::Tensor probe = ad::Tensor::matrix(5, 3, testing::random_values(15, 4, -1, 1));
  const double err = ad::finite_difference_check(
      [&](ad::Tape& t, ad::Var w) { return ad::sum(t, ad::mul(t, ad::matmul(t, t.constant(x), w), t.constant(probe))); },
      ad::Tensor::matrix(4, 3, testing::random_values(12, 5, -1, 1)));
  CHECK(err <= 1e-9);
}
