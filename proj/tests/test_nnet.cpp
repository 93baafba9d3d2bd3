#include <catch2/catch_amalgamated.hpp>

#include <imago/nnet/adam.hpp>
#include <imago/nnet/layers.hpp>
#include <imago/nnet/losses.hpp>
#include <imago/nnet/model.hpp>
#include <imago/nnet/tensor.hpp>
#include <imago/rng.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

using namespace imago;
using namespace imago::nnet;
using Catch::Approx;

namespace {

Tensor3 random_tensor(Index batch, Index channels, Index time, std::uint64_t seed) {
  Rng rng(seed);
  Tensor3 x;
  for (Index b = 0; b < batch; ++b) x.values.push_back(rng.normal_matrix(channels, time));
  return x;
}

/// Relative error between two gradient values, guarded near zero.
double rel_err(double analytic, double fd) {
  const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-8});
  return std::abs(analytic - fd) / scale;
}

}  // namespace

TEST_CASE("convolution matches hand-computed examples", "[nnet]") {
  Rng rng(1);

  // k=1 identity kernel: output equals input.
  Conv1dLayer ident(2, 2, 1, rng);
  ident.taps[0] = Matrix::Identity(2, 2);
  ident.bias.setZero();
  const Tensor3 x = random_tensor(2, 2, 9, 42);
  const Tensor3 y = conv1d_forward(ident, x);
  for (std::size_t b = 0; b < x.values.size(); ++b)
    CHECK((y.values[b] - x.values[b]).cwiseAbs().maxCoeff() == 0.0);

  // k=3 shifted-delta kernel [1, 0, 0]: y[t] = x[t-1], zero-padded edge.
  Conv1dLayer shift(1, 1, 3, rng);
  shift.taps[0](0, 0) = 1.0;
  shift.taps[1](0, 0) = 0.0;
  shift.taps[2](0, 0) = 0.0;
  shift.bias.setZero();
  Tensor3 ramp;
  Matrix r(1, 5);
  r << 1, 2, 3, 4, 5;
  ramp.values.push_back(r);
  const Tensor3 shifted = conv1d_forward(shift, ramp);
  Matrix expected(1, 5);
  expected << 0, 1, 2, 3, 4;
  CHECK((shifted.values[0] - expected).cwiseAbs().maxCoeff() == 0.0);

  // All-zero kernel with bias b: constant output.
  Conv1dLayer constant(3, 2, 3, rng);
  for (Matrix& w : constant.taps) w.setZero();
  constant.bias << 0.5, -1.0, 2.0;
  const Tensor3 c = conv1d_forward(constant, x);
  for (const Matrix& m : c.values)
    for (Index ch = 0; ch < 3; ++ch)
      CHECK((m.row(ch).array() - constant.bias[ch]).abs().maxCoeff() == 0.0);

  // Channel mismatch.
  CHECK_THROWS_AS(conv1d_forward(Conv1dLayer(2, 3, 3, rng), x), ValidationError);
}

TEST_CASE("convolution gradients match finite differences", "[nnet]") {
  Rng rng(7);
  Conv1dLayer conv(3, 4, 7, rng);
  Tensor3 x = random_tensor(1, 4, 16, 99);
  const Matrix weighting = Rng(5).normal_matrix(3, 16);

  // Loss = sum(weighting .* conv(x)); analytic dL/dy = weighting.
  const auto loss_of = [&](const Conv1dLayer& layer, const Matrix& input) {
    return (layer.forward_one(input).cwiseProduct(weighting)).sum();
  };

  conv.zero_grad();
  const Matrix dx = conv.backward_one(x.values[0], weighting);

  const double h = 1e-6;
  // Input gradient.
  for (Index j = 0; j < x.values[0].cols(); ++j)
    for (Index i = 0; i < x.values[0].rows(); ++i) {
      Matrix xp = x.values[0], xm = x.values[0];
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (loss_of(conv, xp) - loss_of(conv, xm)) / (2 * h);
      CHECK(rel_err(dx(i, j), fd) < 1e-4);
    }
  // Kernel gradients.
  for (std::size_t tap = 0; tap < conv.taps.size(); ++tap)
    for (Index j = 0; j < conv.taps[tap].cols(); ++j)
      for (Index i = 0; i < conv.taps[tap].rows(); ++i) {
        Conv1dLayer cp = conv, cm = conv;
        cp.taps[tap](i, j) += h;
        cm.taps[tap](i, j) -= h;
        const double fd = (loss_of(cp, x.values[0]) - loss_of(cm, x.values[0])) / (2 * h);
        CHECK(rel_err(conv.tap_grad[tap](i, j), fd) < 1e-4);
      }
  // Bias gradient.
  for (Index i = 0; i < conv.bias.size(); ++i) {
    Conv1dLayer cp = conv, cm = conv;
    cp.bias[i] += h;
    cm.bias[i] -= h;
    const double fd = (loss_of(cp, x.values[0]) - loss_of(cm, x.values[0])) / (2 * h);
    CHECK(rel_err(conv.bias_grad[i], fd) < 1e-4);
  }
}

TEST_CASE("loss terms match their closed forms", "[nnet]") {
  const Tensor3 target = random_tensor(2, 3, 12, 31);
  LossWeights w;

  // pred = target: mse = temp = spec = 0 and corr counts -1 per
  // nonzero-variance (trial, channel) series up to the epsilon guard.
  const LossTerms same = loss_terms(target, target, w);
  CHECK(same.mse == 0.0);
  CHECK(same.temp == 0.0);
  CHECK(same.spec == 0.0);
  CHECK(same.corr == Approx(-6.0).margin(1e-6));
  CHECK(same.total == same.mse + w.alpha * same.corr + w.beta * same.temp + w.gamma * same.spec);

  // pred = -target: each correlation flips to +1.
  Tensor3 neg = target;
  for (Matrix& m : neg.values) m = -m;
  CHECK(loss_terms(neg, target, w).corr == Approx(6.0).margin(1e-6));

  // Constant per-channel offset on a 1 x 1 x 4 tensor: mse = T * c^2 exactly,
  // temp = 0, corr unchanged from the pred = target case.
  Tensor3 tiny;
  Matrix row(1, 4);
  row << 0.3, -1.2, 0.8, 0.1;
  tiny.values.push_back(row);
  Tensor3 offset = tiny;
  offset.values[0].array() += 0.7;
  const LossTerms shifted = loss_terms(offset, tiny, w);
  CHECK(shifted.mse == Approx(4 * 0.7 * 0.7).epsilon(1e-12));
  CHECK(shifted.temp == 0.0);
  CHECK(shifted.corr == Approx(loss_terms(tiny, tiny, w).corr).margin(1e-9));

  // A constant (zero-variance) channel contributes 0 to corr via the guard.
  Tensor3 flat = target;
  flat.values[0].row(1).setConstant(3.0);
  Tensor3 flat_target = target;
  flat_target.values[0].row(1).setConstant(-1.0);
  CHECK(loss_terms(flat, flat_target, w).corr == Approx(-5.0).margin(1e-6));

  // Shape and finiteness errors.
  CHECK_THROWS_AS(loss_terms(random_tensor(1, 3, 12, 1), target, w), ValidationError);
  Tensor3 bad = target;
  bad.values[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(loss_terms(bad, target, w), ValidationError);
}

TEST_CASE("loss gradients match finite differences for every term", "[nnet]") {
  const Tensor3 target = random_tensor(1, 4, 16, 17);
  Tensor3 pred = random_tensor(1, 4, 16, 18);

  // Weight combinations isolating mse, then adding each extra term.
  std::vector<LossWeights> combos(4);
  combos[0].alpha = 0.0; combos[0].beta = 0.0; combos[0].gamma = 0.0;
  combos[1].alpha = 1.0; combos[1].beta = 0.0; combos[1].gamma = 0.0;
  combos[2].alpha = 0.0; combos[2].beta = 0.5; combos[2].gamma = 0.0;
  combos[3].alpha = 0.0; combos[3].beta = 0.0; combos[3].gamma = 0.1;

  for (const LossWeights& w : combos) {
    for (const CorrDenominator denom :
         {CorrDenominator::Pearson, CorrDenominator::SquaredNorms}) {
      Tensor3 grad;
      loss_with_grad(pred, target, w, &grad, denom);
      const double h = 1e-6;
      for (Index j = 0; j < pred.time(); ++j)
        for (Index i = 0; i < pred.channels(); ++i) {
          Tensor3 pp = pred, pm = pred;
          pp.values[0](i, j) += h;
          pm.values[0](i, j) -= h;
          const double fd = (loss_terms(pp, target, w, denom).total -
                             loss_terms(pm, target, w, denom).total) /
                            (2 * h);
          CHECK(rel_err(grad.values[0](i, j), fd) < 1e-4);
        }
    }
  }
}

TEST_CASE("adam follows the bias-corrected update", "[nnet]") {
  AdamConfig config;  // lr 1e-4, betas (0.9, 0.999), eps 1e-8

  std::vector<double> params(5, 1.0), grads(5, 1.0);
  Adam opt({{params.data(), grads.data(), params.size()}}, config);
  opt.step();
  // First step with g = 1: mhat = vhat = 1, delta = -lr / (1 + eps).
  for (double p : params)
    CHECK(p - 1.0 == Approx(-config.learning_rate / (1.0 + config.eps)).epsilon(1e-12));

  // Zero gradient: decay shrinks the moments but mhat stays proportional to
  // the running mean; a freshly zeroed gradient on a fresh optimizer moves
  // nothing.
  std::vector<double> params2(3, 2.0), grads2(3, 0.0);
  Adam opt2({{params2.data(), grads2.data(), params2.size()}}, config);
  opt2.step();
  for (double p : params2) CHECK(p == 2.0);

  // Determinism: identical gradient sequences give identical parameters.
  std::vector<double> pa(4, 0.5), ga(4, 0.0), pb(4, 0.5), gb(4, 0.0);
  Adam oa({{pa.data(), ga.data(), pa.size()}}, config);
  Adam ob({{pb.data(), gb.data(), pb.size()}}, config);
  Rng rng(3);
  for (int step = 0; step < 20; ++step) {
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = gb[i] = rng.normal();
    oa.step();
    ob.step();
  }
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);

  // Non-finite gradients abort the step.
  std::vector<double> pn(2, 0.0), gn = {1.0, std::numeric_limits<double>::infinity()};
  Adam on({{pn.data(), gn.data(), pn.size()}}, config);
  CHECK_THROWS_AS(on.step(), ValidationError);
}

TEST_CASE("encoder-decoder preserves shape and honors dropout modes", "[nnet]") {
  ModelConfig config;
  config.channels = 5;
  config.hidden1 = 8;
  config.hidden2 = 4;
  config.kernel = 7;
  Rng init(11);
  EncoderDecoder model(config, init);

  for (Index t : {7, 20, 33}) {
    const Tensor3 x = random_tensor(2, 5, t, 100 + static_cast<std::uint64_t>(t));
    Rng fwd(1);
    const Tensor3 y = model.forward(x, false, fwd);
    CHECK(y.batch() == x.batch());
    CHECK(y.channels() == x.channels());
    CHECK(y.time() == x.time());
  }
  CHECK_THROWS_AS(
      [&] {
        Rng fwd(1);
        return model.forward(random_tensor(1, 5, 6, 1), false, fwd);  // T < kernel
      }(),
      ValidationError);

  // Evaluation mode is deterministic and equals train mode with p = 0.
  const Tensor3 x = random_tensor(1, 5, 20, 200);
  Rng ra(2), rb(3), rc(4);
  const Tensor3 eval_a = model.forward(x, false, ra);
  const Tensor3 eval_b = model.forward(x, false, rb);
  CHECK((eval_a.values[0] - eval_b.values[0]).cwiseAbs().maxCoeff() == 0.0);

  ModelConfig no_drop = config;
  no_drop.dropout_p = 0.0;
  Rng init2(11);  // same init seed: identical weights
  EncoderDecoder twin(no_drop, init2);
  const Tensor3 train_p0 = twin.forward(x, true, rc);
  Rng rd(5);
  const Tensor3 eval_twin = twin.forward(x, false, rd);
  CHECK((train_p0.values[0] - eval_twin.values[0]).cwiseAbs().maxCoeff() == 0.0);

  // Train mode with p > 0 uses inverted masks: entries are zeroed or scaled.
  DropoutLayer drop;
  drop.p = 0.5;
  Rng mask_rng(9);
  Matrix out;
  const Matrix mask = drop.forward_one(Matrix::Ones(20, 20), true, mask_rng, &out);
  int zeros = 0, scaled = 0;
  for (Index j = 0; j < 20; ++j)
    for (Index i = 0; i < 20; ++i) {
      if (mask(i, j) == 0.0) ++zeros;
      else if (mask(i, j) == Approx(2.0)) ++scaled;
    }
  CHECK(zeros + scaled == 400);
  CHECK(zeros > 100);
  CHECK(scaled > 100);
  CHECK((out - mask).cwiseAbs().maxCoeff() == 0.0);  // applied to ones
}

TEST_CASE("whole-model parameter gradients match finite differences", "[nnet]") {
  ModelConfig config;
  config.channels = 3;
  config.hidden1 = 4;
  config.hidden2 = 2;
  config.kernel = 7;
  config.dropout_p = 0.0;  // deterministic for differencing
  Rng init(21);
  EncoderDecoder model(config, init);

  const Tensor3 x = random_tensor(1, 3, 16, 300);
  const Tensor3 target = random_tensor(1, 3, 16, 301);
  LossWeights w;  // all four terms active

  Rng fwd(1);
  EncoderDecoder::Workspace ws;
  const Tensor3 pred = model.forward(x, false, fwd, &ws);
  Tensor3 grad;
  loss_with_grad(pred, target, w, &grad);
  model.zero_grad();
  const Tensor3 dx = model.backward(ws, grad);

  const auto loss_at = [&](EncoderDecoder& m) {
    Rng r(1);
    return loss_terms(m.forward(x, false, r), target, w).total;
  };

  const double h = 1e-5;
  int checked = 0;
  auto slots = model.parameters();
  Rng pick(77);
  for (ParamSlot& slot : slots) {
    // Sample a few indices per slot to keep runtime modest.
    for (int rep = 0; rep < 3; ++rep) {
      const std::size_t idx =
          static_cast<std::size_t>(pick.uniform() * static_cast<double>(slot.size));
      const double saved = slot.value[idx];
      slot.value[idx] = saved + h;
      const double lp = loss_at(model);
      slot.value[idx] = saved - h;
      const double lm = loss_at(model);
      slot.value[idx] = saved;
      const double fd = (lp - lm) / (2 * h);
      CHECK(rel_err(slot.grad[idx], fd) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 3 * static_cast<int>(slots.size()));

  // Input gradient from the same backward pass.
  for (int rep = 0; rep < 12; ++rep) {
    const Index i = static_cast<Index>(pick.uniform() * 3);
    const Index j = static_cast<Index>(pick.uniform() * 16);
    Tensor3 xp = x, xm = x;
    xp.values[0](i, j) += h;
    xm.values[0](i, j) -= h;
    Rng r1(1), r2(1);
    const double lp = loss_terms(model.forward(xp, false, r1), target, w).total;
    const double lm = loss_terms(model.forward(xm, false, r2), target, w).total;
    CHECK(rel_err(dx.values[0](i, j), (lp - lm) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("calibration layer is an identity until trained", "[nnet]") {
  CalibrationLayer cal(4);
  const Tensor3 x = random_tensor(2, 4, 10, 55);
  const Tensor3 y = cal.forward(x);
  for (std::size_t b = 0; b < x.values.size(); ++b)
    CHECK((y.values[b] - x.values[b]).cwiseAbs().maxCoeff() == 0.0);

  // Gradients match finite differences.
  const Tensor3 target = random_tensor(2, 4, 10, 56);
  LossWeights w;
  cal.zero_grad();
  Tensor3 grad;
  loss_with_grad(cal.forward(x), target, w, &grad);
  cal.backward(x, grad);

  const auto loss_at = [&](const CalibrationLayer& layer) {
    return loss_terms(layer.forward(x), target, w).total;
  };
  const double h = 1e-6;
  Rng pick(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Index i = static_cast<Index>(pick.uniform() * 4);
    const Index j = static_cast<Index>(pick.uniform() * 4);
    CalibrationLayer cp = cal, cm = cal;
    cp.mixing(i, j) += h;
    cm.mixing(i, j) -= h;
    const double fd = (loss_at(cp) - loss_at(cm)) / (2 * h);
    CHECK(rel_err(cal.mixing_grad(i, j), fd) < 1e-4);
  }
  for (Index i = 0; i < 4; ++i) {
    CalibrationLayer cp = cal, cm = cal;
    cp.bias[i] += h;
    cm.bias[i] -= h;
    const double fd = (loss_at(cp) - loss_at(cm)) / (2 * h);
    CHECK(rel_err(cal.bias_grad[i], fd) < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly", "[nnet]") {
  ModelConfig config;
  config.channels = 4;
  config.hidden1 = 6;
  config.hidden2 = 3;
  Rng init(31);
  EncoderDecoder model(config, init);

  const auto path = std::filesystem::temp_directory_path() / "imago_ckpt_test.bin";
  nlohmann::json extra;
  extra["config_hash"] = "deadbeef";
  save_checkpoint(path.string(), model, extra);

  auto [loaded, header] = load_checkpoint(path.string());
  CHECK(header.at("config_hash") == "deadbeef");
  CHECK(header.at("channels").get<Index>() == 4);
  CHECK(header.at("hidden1").get<Index>() == 6);

  auto a = model.parameters();
  auto b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    REQUIRE(a[s].size == b[s].size);
    for (std::size_t i = 0; i < a[s].size; ++i) CHECK(a[s].value[i] == b[s].value[i]);
  }

  // Same forward output.
  const Tensor3 x = random_tensor(1, 4, 12, 77);
  Rng r1(1), r2(1);
  CHECK((model.forward(x, false, r1).values[0] - loaded.forward(x, false, r2).values[0])
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // Truncated files are rejected.
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  CHECK_THROWS_AS(load_checkpoint(path.string()), ValidationError);
  std::filesystem::remove(path);
}
