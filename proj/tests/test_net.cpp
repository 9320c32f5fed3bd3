#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>
#include <vector>

#include "smoothcert/dataset.hpp"
#include "smoothcert/net.hpp"
#include "smoothcert/rng.hpp"

using namespace smoothcert;
using Catch::Approx;

namespace {

// 2-2-2 net with fixed weights for hand-checked arithmetic.
DenseNetwork tiny_net(Activation act) {
  DenseNetwork net;
  net.layer_sizes = {2, 2, 2};
  net.activation = act;
  Matrix w0(2, 2);
  w0.at(0, 0) = 1.0;
  w0.at(0, 1) = -1.0;
  w0.at(1, 0) = 0.5;
  w0.at(1, 1) = 2.0;
  Matrix w1(2, 2);
  w1.at(0, 0) = 1.0;
  w1.at(0, 1) = 1.0;
  w1.at(1, 0) = -1.0;
  w1.at(1, 1) = 3.0;
  net.weights = {w0, w1};
  net.biases = {{0.25, -1.0}, {0.0, 0.5}};
  return net;
}

double batch_loss(const DenseNetwork& net, const Batch& b, LossKind kind) {
  return loss_and_gradients(net, b, kind).loss;
}

// Central finite difference of the batch loss with respect to every weight
// and bias; returns the largest absolute deviation from the analytic value.
double max_gradient_error(DenseNetwork net, const Batch& b, LossKind kind, double h) {
  LossGrad lg = loss_and_gradients(net, b, kind);
  double worst = 0.0;
  for (int l = 0; l < net.num_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].data.size(); ++i) {
      double keep = net.weights[l].data[i];
      net.weights[l].data[i] = keep + h;
      double up = batch_loss(net, b, kind);
      net.weights[l].data[i] = keep - h;
      double dn = batch_loss(net, b, kind);
      net.weights[l].data[i] = keep;
      worst = std::max(worst, std::fabs((up - dn) / (2 * h) - lg.grads.weights[l].data[i]));
    }
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
      double keep = net.biases[l][i];
      net.biases[l][i] = keep + h;
      double up = batch_loss(net, b, kind);
      net.biases[l][i] = keep - h;
      double dn = batch_loss(net, b, kind);
      net.biases[l][i] = keep;
      worst = std::max(worst, std::fabs((up - dn) / (2 * h) - lg.grads.biases[l][i]));
    }
  }
  return worst;
}

Batch xor_batch() {
  Batch b;
  b.inputs = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  b.labels = {0, 1, 1, 0};
  return b;
}

}  // namespace

TEST_CASE("initialization respects the xavier bound and the seed") {
  DenseNetwork net = DenseNetwork::init({4, 7, 3}, Activation::kRelu, 11);
  REQUIRE(net.num_layers() == 2);
  CHECK(net.input_dim() == 4);
  CHECK(net.output_dim() == 3);
  double lim0 = std::sqrt(6.0 / (4 + 7));
  for (double w : net.weights[0].data) REQUIRE(std::fabs(w) <= lim0);
  double lim1 = std::sqrt(6.0 / (7 + 3));
  for (double w : net.weights[1].data) REQUIRE(std::fabs(w) <= lim1);
  for (const auto& b : net.biases) {
    for (double v : b) REQUIRE(v == 0.0);
  }

  DenseNetwork again = DenseNetwork::init({4, 7, 3}, Activation::kRelu, 11);
  CHECK(net.weights[0].data == again.weights[0].data);
  DenseNetwork other = DenseNetwork::init({4, 7, 3}, Activation::kRelu, 12);
  CHECK(net.weights[0].data != other.weights[0].data);

  CHECK_THROWS_AS(DenseNetwork::init({3}, Activation::kRelu, 0), std::invalid_argument);
  CHECK_THROWS_AS(DenseNetwork::init({3, 0, 2}, Activation::kRelu, 0), std::invalid_argument);
}

TEST_CASE("forward pass matches hand arithmetic") {
  std::vector<double> x = {1.0, 2.0};
  // Pre-activations: [1 - 2 + 0.25, 0.5 + 4 - 1] = [-0.75, 3.5].
  {
    DenseNetwork net = tiny_net(Activation::kRelu);
    std::vector<double> out = net.forward(x);
    // relu -> [0, 3.5]; logits [3.5, 10.5 + 0.5].
    REQUIRE(out.size() == 2);
    CHECK(out[0] == Approx(3.5).margin(1e-15));
    CHECK(out[1] == Approx(11.0).margin(1e-15));
  }
  {
    DenseNetwork net = tiny_net(Activation::kTanh);
    std::vector<double> out = net.forward(x);
    double a0 = std::tanh(-0.75), a1 = std::tanh(3.5);
    CHECK(out[0] == Approx(a0 + a1).margin(1e-15));
    CHECK(out[1] == Approx(-a0 + 3 * a1 + 0.5).margin(1e-15));
  }
  DenseNetwork net = tiny_net(Activation::kRelu);
  CHECK_THROWS_AS(net.forward({1.0}), std::invalid_argument);
}

TEST_CASE("softmax normalizes and is shift invariant") {
  std::vector<double> p = softmax({0.0, std::log(3.0)});
  CHECK(p[0] == Approx(0.25).margin(1e-14));
  CHECK(p[1] == Approx(0.75).margin(1e-14));

  std::vector<double> q = softmax({1000.0, 1000.0 + std::log(3.0)});
  CHECK(q[0] == Approx(0.25).margin(1e-14));
  CHECK(q[1] == Approx(0.75).margin(1e-14));

  std::vector<double> r = softmax({-2.0, 0.5, 3.0, 1.0});
  double sum = 0.0;
  for (double v : r) sum += v;
  CHECK(sum == Approx(1.0).margin(1e-14));
}

TEST_CASE("loss values match closed forms") {
  DenseNetwork net = tiny_net(Activation::kRelu);  // logits [3.5, 11] at (1,2)
  Batch b;
  b.inputs = {{1.0, 2.0}};
  b.labels = {0};
  // -log softmax_0 = log(1 + e^{11-3.5})
  CHECK(batch_loss(net, b, LossKind::kCrossEntropy) ==
        Approx(7.5 + std::log1p(std::exp(-7.5))).margin(1e-12));

  Batch l1;
  l1.inputs = {{1.0, 2.0}};
  l1.logit_targets = {{3.0, 12.25}};
  CHECK(batch_loss(net, l1, LossKind::kL1Logit) == Approx(0.5 + 1.25).margin(1e-12));

  // Batch loss is the mean of per-example losses.
  Batch two;
  two.inputs = {{1.0, 2.0}, {1.0, 2.0}};
  two.logit_targets = {{3.0, 12.25}, {3.5, 11.0}};
  CHECK(batch_loss(net, two, LossKind::kL1Logit) == Approx(1.75 / 2.0).margin(1e-12));
}

TEST_CASE("loss input validation") {
  DenseNetwork net = tiny_net(Activation::kRelu);
  Batch empty;
  CHECK_THROWS_AS(loss_and_gradients(net, empty, LossKind::kCrossEntropy),
                  std::invalid_argument);

  Batch b;
  b.inputs = {{1.0, 2.0}};
  CHECK_THROWS_AS(loss_and_gradients(net, b, LossKind::kCrossEntropy), std::invalid_argument);
  b.labels = {5};
  CHECK_THROWS_AS(loss_and_gradients(net, b, LossKind::kCrossEntropy), std::invalid_argument);
  b.labels = {-1};
  CHECK_THROWS_AS(loss_and_gradients(net, b, LossKind::kCrossEntropy), std::invalid_argument);

  Batch t;
  t.inputs = {{1.0, 2.0}};
  CHECK_THROWS_AS(loss_and_gradients(net, t, LossKind::kL1Logit), std::invalid_argument);
  t.logit_targets = {{1.0}};
  CHECK_THROWS_AS(loss_and_gradients(net, t, LossKind::kL1Logit), std::invalid_argument);
}

TEST_CASE("matching logit targets give zero loss and zero gradients") {
  DenseNetwork net = DenseNetwork::init({3, 5, 2}, Activation::kTanh, 3);
  Batch b;
  b.inputs = {{0.2, -0.4, 1.0}, {1.5, 0.0, -0.3}};
  for (const auto& x : b.inputs) b.logit_targets.push_back(net.forward(x));
  LossGrad lg = loss_and_gradients(net, b, LossKind::kL1Logit);
  CHECK(lg.loss == 0.0);
  for (const auto& m : lg.grads.weights) {
    for (double v : m.data) REQUIRE(v == 0.0);
  }
  for (const auto& bias : lg.grads.biases) {
    for (double v : bias) REQUIRE(v == 0.0);
  }
}

TEST_CASE("analytic gradients match finite differences on smooth losses") {
  Rng rng = make_rng(2024);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::vector<std::vector<int>> shapes = {{2, 3, 2}, {3, 5, 4}, {4, 4, 4, 3}};
  for (int trial = 0; trial < 50; ++trial) {
    const auto& sizes = shapes[trial % shapes.size()];
    DenseNetwork net = DenseNetwork::init(sizes, Activation::kTanh, 100 + trial);
    Batch b;
    std::vector<double> x(sizes.front());
    for (double& v : x) v = ux(rng);
    b.inputs = {x};
    b.labels = {trial % sizes.back()};
    double err = max_gradient_error(net, b, LossKind::kCrossEntropy, 1e-5);
    INFO("trial=" << trial);
    REQUIRE(err <= 1e-4);
  }
}

TEST_CASE("relu and l1 gradients match finite differences away from kinks") {
  // All-positive weights, biases, and inputs keep every pre-activation well
  // inside the linear region; targets sit 1.3 below each logit so the sign
  // pattern cannot flip under the probe step.
  DenseNetwork net;
  net.layer_sizes = {2, 3, 2};
  net.activation = Activation::kRelu;
  Matrix w0(3, 2);
  Matrix w1(2, 3);
  double v = 0.5;
  for (double& w : w0.data) w = (v += 0.1);
  for (double& w : w1.data) w = (v += 0.1);
  net.weights = {w0, w1};
  net.biases = {{0.5, 0.6, 0.7}, {0.5, 0.6}};

  Batch b;
  b.inputs = {{1.0, 0.8}};
  std::vector<double> logits = net.forward(b.inputs[0]);
  b.logit_targets = {{logits[0] - 1.3, logits[1] - 1.3}};
  CHECK(max_gradient_error(net, b, LossKind::kL1Logit, 1e-5) <= 1e-6);

  b.labels = {0};
  b.logit_targets.clear();
  CHECK(max_gradient_error(net, b, LossKind::kCrossEntropy, 1e-5) <= 1e-6);
}

TEST_CASE("input gradient matches finite differences") {
  DenseNetwork net = DenseNetwork::init({3, 6, 3}, Activation::kTanh, 7);
  std::vector<double> x = {0.3, -0.8, 1.2};
  int label = 2;
  std::vector<double> g = input_gradient(net, x, label);
  REQUIRE(g.size() == 3);
  double h = 1e-6;
  for (std::size_t j = 0; j < x.size(); ++j) {
    Batch bu, bd;
    std::vector<double> xu = x, xd = x;
    xu[j] += h;
    xd[j] -= h;
    bu.inputs = {xu};
    bu.labels = {label};
    bd.inputs = {xd};
    bd.labels = {label};
    double fd = (batch_loss(net, bu, LossKind::kCrossEntropy) -
                 batch_loss(net, bd, LossKind::kCrossEntropy)) /
                (2 * h);
    REQUIRE(g[j] == Approx(fd).margin(1e-6));
  }
  CHECK_THROWS_AS(input_gradient(net, x, 3), std::invalid_argument);
}

TEST_CASE("zero epochs leaves parameters untouched") {
  DenseNetwork net = DenseNetwork::init({2, 4, 2}, Activation::kRelu, 5);
  TrainConfig cfg;
  cfg.epochs = 0;
  TrainResult r = train(net, xor_batch(), cfg);
  CHECK(r.loss_history.empty());
  REQUIRE(r.net.weights.size() == net.weights.size());
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    REQUIRE(r.net.weights[l].data == net.weights[l].data);
    REQUIRE(r.net.biases[l] == net.biases[l]);
  }
}

TEST_CASE("training is deterministic in the seed") {
  DatasetFile ds = make_blobs(16, 2, 2, 2.0, 0.6, 0.0, 9);
  Batch data;
  data.inputs = ds.features;
  data.labels = ds.labels;
  DenseNetwork net = DenseNetwork::init({2, 4, 2}, Activation::kTanh, 1);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 42;

  TrainResult a = train(net, data, cfg);
  TrainResult b = train(net, data, cfg);
  CHECK(a.loss_history == b.loss_history);
  for (std::size_t l = 0; l < a.net.weights.size(); ++l) {
    REQUIRE(a.net.weights[l].data == b.net.weights[l].data);
  }

  cfg.seed = 43;
  TrainResult c = train(net, data, cfg);
  CHECK(a.loss_history != c.loss_history);
}

TEST_CASE("training drives the loss down") {
  DatasetFile ds = make_blobs(64, 2, 2, 2.0, 0.5, 0.0, 3);
  Batch data;
  data.inputs = ds.features;
  data.labels = ds.labels;
  DenseNetwork net = DenseNetwork::init({2, 8, 2}, Activation::kRelu, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.learning_rate = 5e-3;
  TrainResult r = train(net, data, cfg);
  REQUIRE(r.loss_history.size() == 30);
  CHECK(r.loss_history.back() < 0.5 * r.loss_history.front());
  CHECK(accuracy(r.net, data.inputs, data.labels) > 0.9);
}

TEST_CASE("a small tanh net learns xor from several seeds") {
  Batch data = xor_batch();
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    DenseNetwork net = DenseNetwork::init({2, 8, 2}, Activation::kTanh, seed);
    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.epochs = 400;
    cfg.batch_size = 4;
    cfg.seed = seed;
    TrainResult r = train(net, data, cfg);
    INFO("seed=" << seed);
    REQUIRE(accuracy(r.net, data.inputs, data.labels) == 1.0);
  }
}

TEST_CASE("train configuration validation") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  CHECK_THROWS_AS(parse_activation("gelu"), std::invalid_argument);
  CHECK_THROWS_AS(parse_loss("mse"), std::invalid_argument);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
  CHECK(std::string(activation_name(Activation::kTanh)) == "tanh");
  CHECK(std::string(loss_name(LossKind::kL1Logit)) == "l1-logit");
  CHECK(std::string(optimizer_name(OptimizerKind::kSgd)) == "sgd");
}

TEST_CASE("checkpoints round trip bit-exactly") {
  DatasetFile ds = make_blobs(32, 3, 2, 2.0, 0.7, 0.0, 8);
  Batch data;
  data.inputs = ds.features;
  data.labels = ds.labels;
  DenseNetwork net = DenseNetwork::init({3, 5, 2}, Activation::kTanh, 6);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.loss = LossKind::kCrossEntropy;
  DenseNetwork trained = train(net, data, cfg).net;

  std::string text = checkpoint_to_string(trained);
  DenseNetwork back = checkpoint_from_string(text);
  CHECK(back.layer_sizes == trained.layer_sizes);
  CHECK(back.activation == trained.activation);
  CHECK(back.loss == trained.loss);
  for (std::size_t l = 0; l < trained.weights.size(); ++l) {
    REQUIRE(back.weights[l].data == trained.weights[l].data);
    REQUIRE(back.biases[l] == trained.biases[l]);
  }
  std::vector<double> x = {0.1, -0.2, 0.4};
  std::vector<double> a = trained.forward(x);
  std::vector<double> b = back.forward(x);
  REQUIRE(a == b);

  // Loss kind survives the trip.
  trained.loss = LossKind::kL1Logit;
  CHECK(checkpoint_from_string(checkpoint_to_string(trained)).loss == LossKind::kL1Logit);
}

TEST_CASE("checkpoint parser skips metadata lines and rejects damage") {
  DenseNetwork net = DenseNetwork::init({2, 3, 2}, Activation::kRelu, 4);
  std::string text = checkpoint_to_string(net);

  DenseNetwork with_meta =
      checkpoint_from_string("# family=gaussian\n# sigma=0.5\n" + text);
  CHECK(with_meta.layer_sizes == net.layer_sizes);

  CHECK_THROWS_WITH(checkpoint_from_string("bogus 1\n"),
                    Catch::Matchers::ContainsSubstring("magic"));

  std::string v2 = text;
  v2.replace(v2.find("smoothcert-model 1"), 18, "smoothcert-model 2");
  CHECK_THROWS_WITH(checkpoint_from_string(v2),
                    Catch::Matchers::ContainsSubstring("version"));

  CHECK_THROWS_AS(checkpoint_from_string(text.substr(0, text.size() / 2)),
                  std::runtime_error);

  std::string no_end = text.substr(0, text.rfind("end"));
  CHECK_THROWS_WITH(checkpoint_from_string(no_end),
                    Catch::Matchers::ContainsSubstring("end"));
}

TEST_CASE("forward is safe to call from several threads") {
  DenseNetwork net = DenseNetwork::init({4, 16, 3}, Activation::kTanh, 77);
  std::vector<std::vector<double>> xs;
  Rng rng = make_rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 64; ++i) {
    std::vector<double> x(4);
    for (double& v : x) v = u(rng);
    xs.push_back(std::move(x));
  }
  std::vector<std::vector<double>> want;
  for (const auto& x : xs) want.push_back(net.forward(x));

  std::vector<std::vector<std::vector<double>>> got(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (const auto& x : xs) got[t].push_back(net.forward(x));
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 4; ++t) REQUIRE(got[t] == want);
}
