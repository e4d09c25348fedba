#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrfaccel/error.hpp"
#include "mrfaccel/model_io.hpp"
#include "mrfaccel/rng.hpp"
#include "mrfaccel/training.hpp"
#include "oracles.hpp"

using namespace mrfaccel;

namespace {

// y = A x + c exactly, x uniform in [-1, 1]^3.
RegressionSet linear_data(std::size_t n, std::uint64_t seed) {
  auto g = rng::stream(seed, 0);
  RegressionSet s;
  s.input_dim = 3;
  s.target_dim = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> x{rng::uniform(g, -1, 1), rng::uniform(g, -1, 1), rng::uniform(g, -1, 1)};
    const std::vector<double> t{0.5 * x[0] - 0.25 * x[1] + 0.1 * x[2] + 0.3, -0.2 * x[0] + 0.4 * x[2] - 0.1};
    s.push_back(x, t);
  }
  return s;
}

RegressionSet small_nonlinear_data(std::size_t n, std::uint64_t seed) {
  auto g = rng::stream(seed, 0);
  RegressionSet s;
  s.input_dim = 6;
  s.target_dim = 2;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(6);
    for (double& v : x) v = rng::uniform(g, -1, 1);
    const std::vector<double> t{0.5 + 0.3 * std::tanh(x[0] + x[1]), 0.4 + 0.2 * x[2] * x[3]};
    s.push_back(x, t);
  }
  return s;
}

}  // namespace

TEST_SUITE("mse_loss") {
  TEST_CASE("examples") {
    const std::vector<double> a{0.3, -1.2};
    CHECK(mse_loss(a, a) == 0.0);
    CHECK(mse_loss(std::vector<double>{1, 3}, std::vector<double>{1, 1}) == 2.0);
    CHECK_THROWS_AS(mse_loss(std::vector<double>{1}, std::vector<double>{1, 2}), Error);
  }

  TEST_CASE("property: non-negative") {
    auto g = rng::stream(31, 0);
    for (int i = 0; i < 100; ++i) {
      std::vector<double> p(3), t(3);
      for (double& v : p) v = rng::uniform(g, -5, 5);
      for (double& v : t) v = rng::uniform(g, -5, 5);
      CHECK(mse_loss(p, t) >= 0.0);
    }
  }
}

TEST_SUITE("output_delta") {
  TEST_CASE("examples") {
    ForwardTrace t;
    t.z = {{2, 0}};
    t.y = {{2, 0}};
    CHECK(output_delta(t, std::vector<double>{2, 0}) == std::vector<double>{0, 0});
    CHECK(output_delta(t, std::vector<double>{0, 0}) == std::vector<double>{2, 0});
    // linear in (y - target)
    CHECK(output_delta(t, std::vector<double>{-1, -3}) == std::vector<double>{3, 3});
    CHECK_THROWS_AS(output_delta(ForwardTrace{}, std::vector<double>{0, 0}), Error);
  }
}

TEST_SUITE("backprop") {
  TEST_CASE("zero output delta gives zero gradients") {
    const auto c = oracle::random_gradient_case(1);
    const auto trace = network_forward(c.cfg, c.params, c.x, ExecMode::Real);
    const auto g = backprop(c.cfg, c.params, trace, std::vector<double>{0, 0});
    for (std::size_t l = 0; l < g.dW.size(); ++l) {
      for (double v : g.dW[l].data) CHECK(v == 0.0);
      for (double v : g.db[l]) CHECK(v == 0.0);
    }
  }

  TEST_CASE("single linear layer closed form") {
    const std::vector<std::size_t> widths{2};
    const auto cfg = NetworkConfig::from_widths(3, widths);
    const auto params = init_params(cfg, 4);
    const std::vector<double> x{0.5, -1.0, 2.0};
    const std::vector<double> delta{0.25, -3.0};
    const auto trace = network_forward(cfg, params, x, ExecMode::Real);
    const auto g = backprop(cfg, params, trace, delta);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(g.dW[0](i, j) == delta[i] * x[j]);
    }
    CHECK(g.db[0] == delta);
  }

  TEST_CASE("property: matches central finite differences") {
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
      const auto c = oracle::random_gradient_case(seed);
      const auto check = oracle::check_gradients(c.cfg, c.params, c.x, c.t);
      CHECK(check.max_rel_error < 1e-5);
    }
  }

  TEST_CASE("fake-quant traces zero the gradient where the quantizer clamps") {
    const std::vector<std::size_t> widths{4, 2};
    const auto cfg = NetworkConfig::from_widths(3, widths);
    NetworkParams p = init_params(cfg, 8);
    p.input_q = {8, 1.0 / 127, 0};
    p.layers[0].output_q = {8, 1e-4, 0};  // tiny range: every positive activation clamps
    p.layers[1].output_q = {16, 1e-3, 0};
    const std::vector<double> x{0.9, -0.8, 0.7};
    const auto trace = network_forward(cfg, p, x, ExecMode::FakeQuant);
    const auto g = backprop(cfg, p, trace, std::vector<double>{1.0, 1.0});
    for (std::size_t i = 0; i < 4; ++i) {
      if (trace.z[0][i] > 128 * 1e-4) {
        CHECK(trace.pass_mask[0][i] == 0);
        CHECK(g.db[0][i] == 0.0);
      }
    }
  }

  TEST_CASE("errors") {
    const auto c = oracle::random_gradient_case(2);
    const auto trace = network_forward(c.cfg, c.params, c.x, ExecMode::Real);
    CHECK_THROWS_AS(backprop(c.cfg, c.params, trace, std::vector<double>{1, 2, 3}), Error);
    ForwardTrace shallow = trace;
    shallow.z.pop_back();
    shallow.y.pop_back();
    CHECK_THROWS_AS(backprop(c.cfg, c.params, shallow, std::vector<double>{1, 2}), Error);
  }
}

TEST_SUITE("sgd_step") {
  TEST_CASE("examples") {
    const std::vector<std::size_t> widths{2};
    const auto cfg = NetworkConfig::from_widths(1, widths);
    NetworkParams p = init_params(cfg, 1);
    p.layers[0].weights.data = {1.0, 1.0};
    const NetworkParams before = p;

    sgd_step(p, Gradients::zeros_like(cfg), 0.1);
    CHECK(p == before);

    Gradients g = Gradients::zeros_like(cfg);
    g.dW[0].data = {2.0, 0.0};
    sgd_step(p, g, 0.1);
    CHECK(p.layers[0].weights.data[0] == doctest::Approx(0.8));
    CHECK(p.layers[0].weights.data[1] == 1.0);
  }

  TEST_CASE("two steps equal one step at twice the rate") {
    const auto c = oracle::random_gradient_case(3);
    const auto trace = network_forward(c.cfg, c.params, c.x, ExecMode::Real);
    const auto g = backprop(c.cfg, c.params, trace, output_delta(trace, c.t));
    NetworkParams twice = c.params;
    sgd_step(twice, g, 0.01);
    sgd_step(twice, g, 0.01);
    NetworkParams once = c.params;
    sgd_step(once, g, 0.02);
    for (std::size_t l = 0; l < once.layers.size(); ++l) {
      for (std::size_t k = 0; k < once.layers[l].weights.data.size(); ++k) {
        CHECK(twice.layers[l].weights.data[k] == doctest::Approx(once.layers[l].weights.data[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_SUITE("train") {
  TEST_CASE("zero learning rate leaves parameters unchanged") {
    const auto data = small_nonlinear_data(200, 1);
    const std::vector<std::size_t> widths{8, 2};
    const auto cfg = NetworkConfig::from_widths(6, widths);
    TrainConfig t;
    t.learning_rate = 0.0;
    t.epochs = 3;
    t.steps_per_epoch = 50;
    t.seed = 5;
    const auto r = train(cfg, t, data);
    CHECK(r.params == init_params(cfg, 5));
    REQUIRE(r.epoch_loss.size() == 3);
  }

  TEST_CASE("linear model on exactly linear data reaches the optimum") {
    const auto data = linear_data(1000, 2);
    const std::vector<std::size_t> widths{2};
    const auto cfg = NetworkConfig::from_widths(3, widths);
    TrainConfig t;
    t.learning_rate = 0.2;
    t.epochs = 10;
    t.steps_per_epoch = 200;
    t.seed = 6;
    const auto r = train(cfg, t, data);
    CHECK(r.epoch_loss.back() < 1e-6);
  }

  TEST_CASE("seeded determinism in both modes") {
    const auto data = small_nonlinear_data(500, 3);
    const std::vector<std::size_t> widths{10, 6, 2};
    const auto cfg = NetworkConfig::from_widths(6, widths);
    for (TrainMode mode : {TrainMode::Float, TrainMode::Qat}) {
      TrainConfig t;
      t.learning_rate = 0.01;
      t.epochs = 4;
      t.steps_per_epoch = 100;
      t.seed = 77;
      t.mode = mode;
      const auto a = train(cfg, t, data);
      const auto b = train(cfg, t, data);
      CHECK(a.epoch_loss == b.epoch_loss);
      CHECK(encode_model({cfg, a.params, mode}) == encode_model({cfg, b.params, mode}));
      for (double l : a.epoch_loss) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
      }
    }
  }

  TEST_CASE("training makes progress in both modes") {
    const auto data = small_nonlinear_data(2000, 4);
    const std::vector<std::size_t> widths{16, 8, 2};
    const auto cfg = NetworkConfig::from_widths(6, widths);
    for (TrainMode mode : {TrainMode::Float, TrainMode::Qat}) {
      TrainConfig t;
      t.learning_rate = 0.02;
      t.epochs = 10;
      t.steps_per_epoch = 200;
      t.seed = 9;
      t.mode = mode;
      const auto r = train(cfg, t, data);
      CHECK(r.epoch_loss.back() < 0.5 * r.epoch_loss.front());
    }
  }

  TEST_CASE("errors") {
    const std::vector<std::size_t> widths{2};
    const auto cfg = NetworkConfig::from_widths(3, widths);
    TrainConfig t;
    t.epochs = 1;
    t.steps_per_epoch = 1;
    RegressionSet empty;
    empty.input_dim = 3;
    empty.target_dim = 2;
    CHECK_THROWS_AS(train(cfg, t, empty), Error);

    TrainConfig bad = t;
    bad.epochs = 0;
    CHECK_THROWS_AS(train(cfg, bad, linear_data(10, 1)), Error);

    TrainConfig wild = t;
    wild.learning_rate = 1e200;
    wild.steps_per_epoch = 50;
    CHECK_THROWS_AS(train(cfg, wild, linear_data(100, 1)), DivergenceError);
  }
}

TEST_SUITE("export_integer_model") {
  TEST_CASE("integer forward matches the fake-quant forward bit for bit") {
    const auto data = small_nonlinear_data(1000, 5);
    const std::vector<std::size_t> widths{16, 8, 2};
    const auto cfg = NetworkConfig::from_widths(6, widths);
    TrainConfig t;
    t.learning_rate = 0.02;
    t.epochs = 3;
    t.steps_per_epoch = 200;
    t.seed = 10;
    t.mode = TrainMode::Qat;
    const auto r = train(cfg, t, data);
    const RegressionSet calib = data.head(256);
    const IntegerModel model = export_integer_model(cfg, r.params, calib);

    NetworkParams calibrated = r.params;
    calibrate(cfg, calibrated, calib);
    for (std::size_t s = 0; s < calib.size(); ++s) {
      const auto fq = network_forward(cfg, calibrated, calib.input(s), ExecMode::FakeQuant);
      const auto it = integer_forward(model, quantize_input(model, calib.input(s)));
      for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        const auto grid = quantize(fq.y[l], model.layers[l].output_q);
        CHECK(grid.values() == it.activations[l + 1].values());
      }
    }
  }

  TEST_CASE("exported values respect their widths and re-export is byte identical") {
    const auto data = small_nonlinear_data(300, 6);
    const std::vector<std::size_t> widths{12, 2};
    const auto cfg = NetworkConfig::from_widths(6, widths);
    const auto params = init_params(cfg, 11);
    const IntegerModel a = export_integer_model(cfg, params, data);
    for (const auto& layer : a.layers) {
      CHECK(layer.weights.qparams().bits == 8);
      CHECK(layer.biases.qparams().bits == 32);
      for (auto v : layer.weights.values()) CHECK((v >= -128 && v <= 127));
    }
    CHECK(a.layers.back().output_q.bits == kOutputBits);
    CHECK(encode_integer_model(a) == encode_integer_model(export_integer_model(cfg, params, data)));
  }

  TEST_CASE("empty calibration set is an error") {
    const std::vector<std::size_t> widths{2};
    const auto cfg = NetworkConfig::from_widths(3, widths);
    RegressionSet empty;
    empty.input_dim = 3;
    empty.target_dim = 2;
    CHECK_THROWS_AS(export_integer_model(cfg, init_params(cfg, 1), empty), Error);
  }
}

TEST_CASE("loss history CSV") {
  CHECK(loss_history_csv(std::vector<double>{0.5, 0.25}) == "epoch,mean_loss\n1,0.5\n2,0.25\n");
}
