#include "doctest.h"

#include "fedlora/error.hpp"
#include "fedlora/lora.hpp"
#include "fedlora/matrix.hpp"
#include "support.hpp"

using namespace fedlora;
using namespace fedlora::testing;

TEST_SUITE("lora") {

TEST_CASE("init_lora draws Kaiming-uniform A and zero B") {
  const LoraPair pair = init_lora(4, 4, 2, 16.0, 7);
  CHECK(pair.rank() == 2);
  CHECK(pair.b.isZero(0.0));
  CHECK(lora_delta(pair).isZero(0.0));

  // fan-in 8: bound sqrt(6/8) = 0.8660
  const LoraPair wide = init_lora(2, 8, 1, 16.0, 1);
  CHECK(wide.a.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 8.0));

  // Over many entries the draws fill the interval: the extremes come
  // close to the bound and the sample variance matches bound^2 / 3.
  const LoraPair big = init_lora(64, 64, 64, 16.0, 3);
  const double bound = std::sqrt(6.0 / 64.0);
  CHECK(big.a.cwiseAbs().maxCoeff() <= bound);
  CHECK(big.a.cwiseAbs().maxCoeff() > 0.99 * bound);
  const double var = big.a.squaredNorm() / static_cast<double>(big.a.size());
  CHECK(var == doctest::Approx(bound * bound / 3.0).epsilon(0.05));
}

TEST_CASE("init_lora is deterministic per seed") {
  const LoraPair x = init_lora(6, 5, 3, 8.0, 42);
  const LoraPair y = init_lora(6, 5, 3, 8.0, 42);
  const LoraPair z = init_lora(6, 5, 3, 8.0, 43);
  CHECK(std::memcmp(x.a.data(), y.a.data(), sizeof(double) * x.a.size()) == 0);
  CHECK(x.a != z.a);
}

TEST_CASE("init_lora rejects bad dimensions") {
  auto code_of = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  CHECK(code_of([] { init_lora(4, 4, 5, 1.0, 1); }) == ErrorCode::kInvalidDimensions);
  CHECK(code_of([] { init_lora(0, 4, 1, 1.0, 1); }) == ErrorCode::kInvalidDimensions);
  CHECK(code_of([] { init_lora(4, 4, 0, 1.0, 1); }) == ErrorCode::kInvalidDimensions);
  CHECK_THROWS_AS(init_lora(4, 4, 2, 0.0, 1), Error);
}

TEST_CASE("lora_delta scales the product by alpha / rank") {
  const LoraPair pair{mat(1, 2, {2, 3}), mat(2, 1, {1, 1}), 1.0};
  CHECK(lora_delta(pair).isApprox(mat(2, 2, {2, 3, 2, 3})));

  LoraPair doubled = pair;
  doubled.alpha = 2.0;
  CHECK(lora_delta(doubled).isApprox(2.0 * lora_delta(pair)));

  Rng rng(5);
  const LoraPair r{random_matrix(3, 5, rng), random_matrix(4, 3, rng), 6.0};
  LoraPair scaled = r;
  scaled.b *= -1.7;
  CHECK(lora_delta(scaled).isApprox(-1.7 * lora_delta(r)));
  CHECK(lora_delta(r).isApprox(2.0 * r.b * r.a));
}

TEST_CASE("effective_weight adds base, residual and delta") {
  FrozenLayer layer = FrozenLayer::from_weight(DenseMatrix::Identity(2, 2));
  CHECK(layer.residual.isZero(0.0));
  const LoraPair zero{mat(1, 2, {1, 1}), DenseMatrix::Zero(2, 1), 1.0};
  CHECK(effective_weight(layer, zero) == layer.w0);

  const LoraPair e11{mat(1, 2, {1, 0}), mat(2, 1, {1, 0}), 1.0};
  CHECK(effective_weight(layer, e11) == mat(2, 2, {2, 0, 0, 1}));

  FrozenLayer residual_only = FrozenLayer::from_weight(DenseMatrix::Zero(2, 2));
  residual_only.residual = mat(2, 2, {1, 2, 3, 4});
  CHECK(effective_weight(residual_only, zero) == residual_only.residual);

  const LoraPair wrong{mat(1, 3, {1, 0, 0}), mat(2, 1, {1, 0}), 1.0};
  CHECK_THROWS_AS(effective_weight(layer, wrong), Error);
}

TEST_CASE("lora_gradients edge cases") {
  Rng rng(11);
  const FrozenLayer layer = FrozenLayer::from_weight(random_matrix(3, 4, rng));
  const LoraPair pair{random_matrix(2, 4, rng), random_matrix(3, 2, rng), 4.0};
  const DenseMatrix x = random_matrix(5, 4, rng);

  const LoraGradients none = lora_gradients(layer, pair, x, DenseMatrix::Zero(5, 3));
  CHECK(none.a.isZero(0.0));
  CHECK(none.b.isZero(0.0));

  LoraPair zero_b = pair;
  zero_b.b.setZero();
  const LoraGradients g = lora_gradients(layer, zero_b, x, random_matrix(5, 3, rng));
  CHECK(g.a.isZero(0.0));
  CHECK(g.b.norm() > 0.0);

  CHECK_THROWS_AS(lora_gradients(layer, pair, x, DenseMatrix::Zero(4, 3)), Error);
}

TEST_CASE("lora_gradients match central finite differences") {
  // Loss 0.5 * ||x W_eff^T - target||^2 summed over the batch; its upstream
  // gradient is the residual.
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(100, StreamTag::kFixture, {trial}));
    FrozenLayer layer = FrozenLayer::from_weight(random_matrix(3, 3, rng));
    layer.residual = random_matrix(3, 3, rng, 0.1);
    LoraPair pair{random_matrix(2, 3, rng), random_matrix(3, 2, rng), 3.0};
    const DenseMatrix x = random_matrix(4, 3, rng);
    const DenseMatrix target = random_matrix(4, 3, rng);

    auto loss = [&](const LoraPair& p) {
      const DenseMatrix y = x * effective_weight(layer, p).transpose();
      return 0.5 * (y - target).squaredNorm();
    };
    const DenseMatrix gy = x * effective_weight(layer, pair).transpose() - target;
    const LoraGradients g = lora_gradients(layer, pair, x, gy);

    const double h = 1e-6;
    for (int which = 0; which < 2; ++which) {
      DenseMatrix& m = which == 0 ? pair.a : pair.b;
      const DenseMatrix& analytic = which == 0 ? g.a : g.b;
      for (Index i = 0; i < m.size(); ++i) {
        const double saved = m.data()[i];
        m.data()[i] = saved + h;
        const double up = loss(pair);
        m.data()[i] = saved - h;
        const double down = loss(pair);
        m.data()[i] = saved;
        CHECK(relative_error(analytic.data()[i], (up - down) / (2 * h)) <= 1e-5);
      }
    }
  }
}

TEST_CASE("validate_adapter_set rejects duplicate ids") {
  const LoraPair pair = init_lora(2, 2, 1, 1.0, 1);
  const FrozenLayer layer = FrozenLayer::from_weight(DenseMatrix::Zero(2, 2));
  AdapterSet set{{"q", layer, pair}, {"v", layer, pair}};
  CHECK_NOTHROW(validate_adapter_set(set));
  set.push_back({"q", layer, pair});
  CHECK_THROWS_AS(validate_adapter_set(set), Error);
}

TEST_CASE("matrix dump round-trips exactly") {
  Rng rng(3);
  const DenseMatrix m = random_matrix(3, 4, rng);
  const std::string text = dump_matrix(m);
  CHECK(text.substr(0, 4) == "3 4\n");
  CHECK(parse_matrix(text) == m);
  CHECK_THROWS_AS(parse_matrix("2 2\n1 2\n3"), Error);
  CHECK_THROWS_AS(parse_matrix("1 1\nx"), Error);
}

}  // TEST_SUITE
