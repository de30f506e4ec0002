#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "rems/indrnn.hpp"
#include "rems/indrnn_train.hpp"
#include "rems/model_io.hpp"
#include "support/reference_model.hpp"
#include "support/test_util.hpp"

using namespace rems;

namespace {

IndRNNLayerParams make_layer(std::size_t hidden, std::size_t input) {
  IndRNNLayerParams p;
  p.input_weights = Mat(hidden, input);
  p.recurrent_weights.assign(hidden, 0.0);
  p.bias.assign(hidden, 0.0);
  p.bn_pre.resize(hidden);
  p.bn_post.resize(hidden);
  return p;
}

void make_identity_bn(BatchNormState& bn) {
  // gamma 1, beta 0, mean 0, var 1 with an epsilon small enough that
  // 1/sqrt(1 + eps) is exactly 1 in double precision
  bn.epsilon = 1e-300;
  bn.initialized = true;
}

IndRNNLayerParams random_layer(Rng& rng, std::size_t hidden, std::size_t input,
                               double u_lo = -1.0, double u_hi = 1.0) {
  IndRNNLayerParams p = make_layer(hidden, input);
  for (auto& w : p.input_weights.a) w = rng.uniform(-0.5, 0.5);
  for (auto& u : p.recurrent_weights) u = rng.uniform(u_lo, u_hi);
  for (auto& b : p.bias) b = rng.uniform(-0.2, 0.2);
  return p;
}

}  // namespace

TEST_CASE("indrnn_cell_step") {
  SECTION("relu over the feed-forward term") {
    IndRNNLayerParams p = make_layer(2, 2);
    p.input_weights(0, 0) = 1.0;
    p.input_weights(1, 1) = -1.0;
    const std::vector<double> x = {1.0, 1.0};  // W x = (1, -1)
    const std::vector<double> h0 = {0.0, 0.0};
    const auto h = indrnn_cell_step(x, h0, p);
    CHECK(h == std::vector<double>{1.0, 0.0});
  }

  SECTION("pure recurrent path") {
    IndRNNLayerParams p = make_layer(2, 2);
    p.recurrent_weights = {0.5, 2.0};
    const std::vector<double> x = {0.0, 0.0};
    const std::vector<double> h0 = {1.0, 1.0};
    const auto h = indrnn_cell_step(x, h0, p);
    CHECK(h == std::vector<double>{0.5, 2.0});
  }

  SECTION("matches a naive scalar unroll over a full sequence") {
    Rng rng(42);
    const std::size_t hidden = 6, input = 5, steps = 12;
    const IndRNNLayerParams p = random_layer(rng, hidden, input);
    std::vector<std::vector<double>> xs(steps, std::vector<double>(input));
    for (auto& x : xs)
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);

    std::vector<double> h(hidden, 0.0);
    for (const auto& x : xs) h = indrnn_cell_step(x, h, p);

    // independent unroll
    std::vector<double> ref(hidden, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> next(hidden);
      for (std::size_t i = 0; i < hidden; ++i) {
        double acc = p.bias[i] + p.recurrent_weights[i] * ref[i];
        for (std::size_t j = 0; j < input; ++j) acc += p.input_weights(i, j) * xs[t][j];
        next[i] = acc > 0.0 ? acc : 0.0;
      }
      ref = next;
    }
    for (std::size_t i = 0; i < hidden; ++i)
      CHECK(h[i] == Catch::Approx(ref[i]).epsilon(1e-12).margin(1e-15));
  }

  SECTION("neuron i ignores every other component of the carried state") {
    Rng rng(7);
    const IndRNNLayerParams p = random_layer(rng, 8, 4);
    std::vector<double> x(4), h0(8);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : h0) v = rng.uniform(-1.0, 1.0);
    const auto base = indrnn_cell_step(x, h0, p);
    for (std::size_t j = 0; j < 8; ++j) {
      auto zeroed = h0;
      zeroed[j] = 0.0;
      const auto out = indrnn_cell_step(x, zeroed, p);
      for (std::size_t i = 0; i < 8; ++i)
        if (i != j) CHECK(out[i] == base[i]);
    }
  }

  SECTION("dimension mismatch is an error") {
    const IndRNNLayerParams p = make_layer(3, 2);
    CHECK_THROWS_AS(indrnn_cell_step(std::vector<double>{1.0}, std::vector<double>(3), p),
                    DimensionMismatch);
    CHECK_THROWS_AS(indrnn_cell_step(std::vector<double>(2), std::vector<double>(2), p),
                    DimensionMismatch);
  }
}

TEST_CASE("layer_forward") {
  SECTION("identity normalization reduces to repeated cell steps") {
    Rng rng(11);
    IndRNNLayerParams p = random_layer(rng, 5, 3);
    make_identity_bn(p.bn_pre);
    make_identity_bn(p.bn_post);
    std::vector<std::vector<double>> xs(9, std::vector<double>(3));
    for (auto& x : xs)
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto out = layer_forward(xs, p, RunMode::kEval);

    std::vector<double> h(5, 0.0);
    for (std::size_t t = 0; t < xs.size(); ++t) {
      h = indrnn_cell_step(xs[t], h, p);
      for (std::size_t i = 0; i < 5; ++i) CHECK(out[t][i] == h[i]);
    }
  }

  SECTION("single step applies both normalizations around the activation") {
    Rng rng(13);
    IndRNNLayerParams p = random_layer(rng, 4, 3);
    for (auto* bn : {&p.bn_pre, &p.bn_post}) {
      for (std::size_t i = 0; i < 4; ++i) {
        bn->gamma[i] = rng.uniform(0.5, 1.5);
        bn->beta[i] = rng.uniform(-0.3, 0.3);
        bn->running_mean[i] = rng.uniform(-0.5, 0.5);
        bn->running_var[i] = rng.uniform(0.5, 2.0);
      }
      bn->initialized = true;
    }
    const std::vector<std::vector<double>> xs = {{0.3, -0.7, 1.1}};
    const auto out = layer_forward(xs, p, RunMode::kEval);
    for (std::size_t i = 0; i < 4; ++i) {
      double pre = p.bias[i];
      for (std::size_t j = 0; j < 3; ++j) pre += p.input_weights(i, j) * xs[0][j];
      double v = (pre - p.bn_pre.running_mean[i]) / std::sqrt(p.bn_pre.running_var[i] + p.bn_pre.epsilon);
      v = p.bn_pre.gamma[i] * v + p.bn_pre.beta[i];
      v = v > 0.0 ? v : 0.0;
      double w = (v - p.bn_post.running_mean[i]) / std::sqrt(p.bn_post.running_var[i] + p.bn_post.epsilon);
      w = p.bn_post.gamma[i] * w + p.bn_post.beta[i];
      CHECK(out[0][i] == Catch::Approx(w).epsilon(1e-12));
    }
  }

  SECTION("uninitialized running statistics reject eval mode") {
    IndRNNLayerParams p = make_layer(3, 3);
    CHECK_THROWS_AS(layer_forward({{1.0, 2.0, 3.0}}, p, RunMode::kEval), ModelNotTrained);
  }

  SECTION("activations stay under the unrolled recurrence bound for |u| <= 1") {
    Rng rng(17);
    const std::size_t hidden = 6, input = 4, steps = 40;
    IndRNNLayerParams p = random_layer(rng, hidden, input, -1.0, 1.0);
    make_identity_bn(p.bn_pre);
    make_identity_bn(p.bn_post);
    std::vector<std::vector<double>> xs(steps, std::vector<double>(input));
    for (auto& x : xs)
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto out = layer_forward(xs, p, RunMode::kEval);

    // bound_t[i] = |feed_t[i]| + |u_i| * bound_{t-1}[i]
    std::vector<double> bound(hidden, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t i = 0; i < hidden; ++i) {
        double feed = p.bias[i];
        for (std::size_t j = 0; j < input; ++j) feed += p.input_weights(i, j) * xs[t][j];
        bound[i] = std::abs(feed) + std::abs(p.recurrent_weights[i]) * bound[i];
        CHECK(std::abs(out[t][i]) <= bound[i] + 1e-12);
      }
    }
  }
}

TEST_CASE("network_forward") {
  SECTION("softmax output is a distribution and eval mode is deterministic") {
    Rng rng(23);
    const IndRNNModel model = testutil::random_trained_model(99, 16, 7);
    const FeatureClip clip = testutil::random_feature_clip(rng, 20);
    const auto p1 = network_forward(clip, model, RunMode::kEval);
    const auto p2 = network_forward(clip, model, RunMode::kEval);
    REQUIRE(p1.size() == 7);
    double sum = 0.0;
    for (std::size_t c = 0; c < p1.size(); ++c) {
      CHECK(p1[c] >= 0.0);
      CHECK(p1[c] <= 1.0);
      CHECK(p1[c] == p2[c]);
      sum += p1[c];
    }
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
  }

  SECTION("train mode also yields a distribution") {
    Rng rng(29);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 12, 5}, 3);
    const FeatureClip clip = testutil::random_feature_clip(rng, 8);
    const auto p = network_forward(clip, model, RunMode::kTrain);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
  }

  SECTION("matches the independent scalar reference on 50 random cases") {
    Rng rng(31);
    for (int iter = 0; iter < 50; ++iter) {
      const int hidden = 4 + static_cast<int>(rng.uniform_index(20));
      const int classes = 2 + static_cast<int>(rng.uniform_index(8));
      const std::size_t steps = 1 + rng.uniform_index(24);
      const Readout readout =
          rng.uniform() < 0.25 ? Readout::kTemporalMean : Readout::kLastStep;
      const IndRNNModel model =
          testutil::random_trained_model(1000 + iter, hidden, classes, readout);
      const FeatureClip clip = testutil::random_feature_clip(rng, steps);
      const auto got = network_forward(clip, model, RunMode::kEval);
      const auto want = refmodel::forward_probabilities(clip, model);
      REQUIRE(got.size() == want.size());
      for (std::size_t c = 0; c < got.size(); ++c)
        REQUIRE(got[c] == Catch::Approx(want[c]).epsilon(1e-9).margin(1e-12));
    }
  }

  SECTION("eval mode before training is an error") {
    Rng rng(37);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 8, 3}, 5);
    const FeatureClip clip = testutil::random_feature_clip(rng, 4);
    CHECK_THROWS_AS(network_forward(clip, model, RunMode::kEval), ModelNotTrained);
    CHECK_THROWS_AS(predict(clip, model), ModelNotTrained);
  }
}

TEST_CASE("predict") {
  Rng rng(41);
  IndRNNModel model = testutil::random_trained_model(7, 8, 3);
  const FeatureClip clip = testutil::random_feature_clip(rng, 6);

  // zero the head so the class distribution equals softmax(bias)
  for (auto& w : model.classifier_w.a) w = 0.0;

  SECTION("argmax with its probability") {
    model.classifier_b = {std::log(0.1), std::log(0.7), std::log(0.2)};
    const Prediction p = predict(clip, model);
    CHECK(p.class_index == 1);
    CHECK(p.confidence == Catch::Approx(0.7).epsilon(1e-12));
  }

  SECTION("exact tie breaks toward the lower class") {
    model.classifier_b = {0.25, 0.25, -5.0};
    const Prediction p = predict(clip, model);
    CHECK(p.class_index == 0);
  }

  SECTION("constant logit shift keeps the argmax") {
    model.classifier_b = {std::log(0.1), std::log(0.7), std::log(0.2)};
    const Prediction base = predict(clip, model);
    for (auto& b : model.classifier_b) b += 11.5;
    CHECK(predict(clip, model).class_index == base.class_index);
  }
}

TEST_CASE("clamp_recurrent_weights") {
  SECTION("bound value and clamping") {
    const double u_max = recurrent_weight_bound(20, 2.0);
    CHECK(u_max == Catch::Approx(std::pow(2.0, 1.0 / 20.0)).epsilon(1e-6));
    CHECK(u_max <= std::pow(2.0, 1.0 / 20.0));

    IndRNNModel model = init_model(ModelShape{kFeatureDim, 4, 3}, 1);
    model.layers[0].recurrent_weights[0] = 1.5;
    model.layers[2].recurrent_weights[1] = -3.0;
    clamp_recurrent_weights(model, 20, 2.0);
    CHECK(model.layers[0].recurrent_weights[0] == u_max);
    CHECK(model.layers[2].recurrent_weights[1] == -u_max);
  }

  SECTION("no-op when already inside the bound") {
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 6, 3}, 2);
    const IndRNNModel before = model;
    clamp_recurrent_weights(model, 20, 2.0);
    for (int l = 0; l < kNumLayers; ++l)
      CHECK(model.layers[l].recurrent_weights == before.layers[l].recurrent_weights);
  }

  SECTION("T-step gain stays below gamma") {
    Rng rng(43);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 32, 3}, 3);
    for (auto& l : model.layers)
      for (auto& u : l.recurrent_weights) u = rng.uniform(-4.0, 4.0);
    clamp_recurrent_weights(model, 20, 2.0);
    for (const auto& l : model.layers)
      for (double u : l.recurrent_weights)
        CHECK(std::pow(std::abs(u), 20.0) <= 2.0 + 1e-9);
  }
}

TEST_CASE("loss_and_gradients") {
  SECTION("zeroed classifier head gives exactly ln(num_classes)") {
    Rng rng(47);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 8, 5}, 11);
    for (auto& w : model.classifier_w.a) w = 0.0;
    for (auto& b : model.classifier_b) b = 0.0;
    const std::vector<FeatureClip> clips = {testutil::random_feature_clip(rng, 6)};
    const std::vector<int> labels = {3};
    const BatchResult res = loss_and_gradients(clips, labels, model);
    CHECK(res.loss == std::log(5.0));
  }

  SECTION("duplicating a sample leaves loss and gradients bit-identical") {
    Rng rng(53);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 10, 4}, 13);
    const FeatureClip clip = testutil::random_feature_clip(rng, 7);
    const BatchResult one = loss_and_gradients(std::vector<FeatureClip>{clip}, {2}, model);
    const BatchResult two =
        loss_and_gradients(std::vector<FeatureClip>{clip, clip}, {2, 2}, model);
    CHECK(one.loss == two.loss);
    IndRNNModel m1 = model, m2 = model;  // mutable aliases for the visitor
    ModelGradients g1 = one.gradients, g2 = two.gradients;
    bool all_equal = true;
    std::size_t tensor = 0;
    for_each_param(m1, &g1, [&](const std::string&, std::vector<double>&, std::vector<double>* ga) {
      std::size_t inner = 0;
      for_each_param(m2, &g2,
                     [&](const std::string&, std::vector<double>&, std::vector<double>* gb) {
                       if (inner == tensor && *ga != *gb) all_equal = false;
                       ++inner;
                     });
      ++tensor;
    });
    CHECK(all_equal);
  }

  SECTION("out-of-range labels are rejected") {
    Rng rng(59);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 6, 3}, 17);
    const std::vector<FeatureClip> clips = {testutil::random_feature_clip(rng, 4)};
    CHECK_THROWS_AS(loss_and_gradients(clips, {3}, model), ValidationError);
    CHECK_THROWS_AS(loss_and_gradients(clips, {-1}, model), ValidationError);
  }

  SECTION("threaded batch work reproduces the sequential gradients bitwise") {
    Rng rng(61);
    IndRNNModel model = init_model(ModelShape{kFeatureDim, 12, 4}, 19);
    std::vector<FeatureClip> clips;
    std::vector<int> labels;
    for (int b = 0; b < 6; ++b) {
      clips.push_back(testutil::random_feature_clip(rng, 9));
      labels.push_back(b % 4);
    }
    const BatchResult seq = loss_and_gradients(clips, labels, model, false, 1);
    const BatchResult par = loss_and_gradients(clips, labels, model, false, 3);
    CHECK(seq.loss == par.loss);
    CHECK(seq.gradients.d_classifier_w.a == par.gradients.d_classifier_w.a);
    for (int l = 0; l < kNumLayers; ++l) {
      CHECK(seq.gradients.layers[l].d_input_weights.a ==
            par.gradients.layers[l].d_input_weights.a);
      CHECK(seq.gradients.layers[l].d_recurrent_weights ==
            par.gradients.layers[l].d_recurrent_weights);
      CHECK(seq.gradients.layers[l].d_gamma_pre == par.gradients.layers[l].d_gamma_pre);
    }
  }
}

namespace {

// Central finite differences against the analytic gradients; returns the
// worst per-tensor relative error.
double gradcheck_worst_error(std::uint64_t seed, int hidden, std::size_t steps, int batch,
                             int classes, double step = 1e-4) {
  Rng rng(seed);
  IndRNNModel model = init_model(ModelShape{kFeatureDim, hidden, classes}, seed ^ 0x5bd1e995);
  std::vector<FeatureClip> clips;
  std::vector<int> labels;
  for (int b = 0; b < batch; ++b) {
    clips.push_back(testutil::random_feature_clip(rng, steps));
    labels.push_back(static_cast<int>(rng.uniform_index(classes)));
  }
  std::vector<const FeatureClip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);

  BatchResult res = loss_and_gradients(ptrs, labels, model);
  double worst = 0.0;
  for_each_param(model, &res.gradients,
                 [&](const std::string&, std::vector<double>& w, std::vector<double>* g) {
                   double diff = 0.0, scale = 0.0;
                   for (std::size_t i = 0; i < w.size(); ++i) {
                     const double keep = w[i];
                     w[i] = keep + step;
                     const double up = batch_loss(ptrs, labels, model);
                     w[i] = keep - step;
                     const double down = batch_loss(ptrs, labels, model);
                     w[i] = keep;
                     const double fd = (up - down) / (2.0 * step);
                     diff = std::max(diff, std::abs(fd - (*g)[i]));
                     scale = std::max({scale, std::abs(fd), std::abs((*g)[i])});
                   }
                   worst = std::max(worst, diff / std::max(scale, 1e-8));
                 });
  return worst;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  // seeds chosen so no pre-activation sits within the finite-difference step
  // of a relu kink, where central differences stop being a valid oracle
  for (std::uint64_t seed : {2ull, 3ull, 4ull}) {
    const double err = gradcheck_worst_error(seed, 8, 5, 2, 4);
    INFO("seed " << seed << " worst relative error " << err);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("training") {
  SECTION("two samples of two classes are memorized") {
    Rng rng(67);
    std::vector<FeatureClip> clips = {testutil::random_feature_clip(rng, 10),
                                      testutil::random_feature_clip(rng, 10)};
    std::vector<int> labels = {0, 1};
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.batch_size = 2;
    cfg.epochs = 60;
    cfg.seed = 5;
    cfg.val_fraction = 0.0;
    const TrainResult result = train(clips, labels, ModelShape{kFeatureDim, 16, 2}, cfg);
    REQUIRE(result.metrics.size() == 60);
    CHECK(result.metrics.back().train_acc == 1.0);
    CHECK(result.model.trained());
  }

  SECTION("identical seeds give identical trajectories and models") {
    Rng rng(71);
    std::vector<FeatureClip> clips;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
      clips.push_back(testutil::random_feature_clip(rng, 8));
      labels.push_back(i % 3);
    }
    TrainConfig cfg;
    cfg.learning_rate = 0.005;
    cfg.batch_size = 4;
    cfg.epochs = 6;
    cfg.seed = 99;
    const TrainResult a = train(clips, labels, ModelShape{kFeatureDim, 12, 3}, cfg);
    const TrainResult b = train(clips, labels, ModelShape{kFeatureDim, 12, 3}, cfg);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t e = 0; e < a.metrics.size(); ++e) {
      CHECK(a.metrics[e].train_loss == b.metrics[e].train_loss);
      CHECK(a.metrics[e].val_loss == b.metrics[e].val_loss);
    }
    std::ostringstream sa(std::ios::binary), sb(std::ios::binary);
    save_model(sa, a.model);
    save_model(sb, b.model);
    CHECK(sa.str() == sb.str());
  }

  SECTION("degenerate datasets are rejected") {
    Rng rng(73);
    std::vector<FeatureClip> clips = {testutil::random_feature_clip(rng, 5)};
    CHECK_THROWS_AS(train({}, {}, ModelShape{}, TrainConfig{}), ValidationError);
    CHECK_THROWS_AS(train(clips, {0}, ModelShape{}, TrainConfig{}), ValidationError);
  }

  SECTION("zero epochs returns the initialized, untrained model") {
    Rng rng(79);
    std::vector<FeatureClip> clips = {testutil::random_feature_clip(rng, 5),
                                      testutil::random_feature_clip(rng, 5)};
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 1;
    const TrainResult result = train(clips, {0, 1}, ModelShape{kFeatureDim, 8, 2}, cfg);
    CHECK(result.metrics.empty());
    CHECK_FALSE(result.model.trained());
  }
}

TEST_CASE("model checkpoint round trip") {
  Rng rng(83);
  const IndRNNModel model = testutil::random_trained_model(123, 12, 6);
  const FeatureClip clip = testutil::random_feature_clip(rng, 15);
  const auto before = network_forward(clip, model, RunMode::kEval);

  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_model(ss, model);
  const IndRNNModel loaded = load_model(ss);

  CHECK(loaded.hidden == model.hidden);
  CHECK(loaded.num_classes == model.num_classes);
  const auto after = network_forward(clip, loaded, RunMode::kEval);
  REQUIRE(after.size() == before.size());
  for (std::size_t c = 0; c < before.size(); ++c) CHECK(after[c] == before[c]);

  SECTION("corrupt checkpoints are rejected") {
    std::istringstream bad("XXXX");
    CHECK_THROWS_AS(load_model(bad), ParseError);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() / 2);
    std::istringstream truncated(bytes);
    CHECK_THROWS_AS(load_model(truncated), ParseError);
  }
}
