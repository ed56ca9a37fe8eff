#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "support.hpp"
#include "vsap/encoder.hpp"
#include "vsap/error.hpp"

using namespace vsap;

namespace {

const std::vector<std::size_t> kSmall{6, 5, 4, 3};

double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

}  // namespace

TEST_CASE("default architecture and parameter layout") {
  const auto st = init_encoder(1);
  CHECK(st.input_dim() == 192u);
  CHECK(st.output_dim() == 64u);
  CHECK(st.parameter_count() == 192u * 128 + 128 + 128 * 128 + 128 + 128 * 64 + 64);
  CHECK(st.params.size() == st.parameter_count());
  CHECK(st.layer_offset(0) == 0u);
  CHECK(st.layer_offset(1) == 192u * 128 + 128);
  const double bound = 1.0 / std::sqrt(192.0);
  for (std::size_t k = 0; k < st.layer_offset(1); ++k) CHECK(std::fabs(st.params[k]) <= bound);
  CHECK(init_encoder(1) == st);
  CHECK(init_encoder(2) != st);
}

TEST_CASE("zero parameters give zero embeddings") {
  auto st = init_encoder(1, kSmall);
  std::fill(st.params.begin(), st.params.end(), 0.0);
  Rng rng(1);
  const Matrix out = forward(st, test::random_matrix(rng, 4, 6));
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("identical patches give identical embeddings") {
  const auto st = init_encoder(3, kSmall);
  Matrix x(2, 6);
  for (std::size_t c = 0; c < 6; ++c) x(0, c) = x(1, c) = 0.1 * double(c);
  const Matrix out = forward(st, x);
  for (std::size_t c = 0; c < 3; ++c) CHECK(out(0, c) == out(1, c));
}

TEST_CASE("forward validates shapes and parameters") {
  auto st = init_encoder(3, kSmall);
  CHECK_THROWS_AS(forward(st, Matrix(1, 5)), Error);
  st.params[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    forward(st, Matrix(1, 6));
    FAIL("expected corrupted state");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kCorruptedState);
  }
  CHECK(parse_activation("softplus") == Activation::kSoftplus);
  CHECK_THROWS(parse_activation("relu6"));
}

TEST_CASE("one-pixel perturbations are bounded by the weight norms") {
  // tanh and softplus are 1-Lipschitz, so the product of the layers'
  // Frobenius norms bounds the network's Lipschitz constant.
  Rng rng(4);
  for (auto act : {Activation::kTanh, Activation::kSoftplus}) {
    const auto st = init_encoder(5, kSmall, act);
    double lip = 1.0;
    for (std::size_t l = 0; l < st.num_layers(); ++l) {
      double f = 0.0;
      for (std::size_t k = 0; k < st.dims[l] * st.dims[l + 1]; ++k) f += st.params[st.layer_offset(l) + k] * st.params[st.layer_offset(l) + k];
      lip *= std::sqrt(f);
    }
    for (int t = 0; t < 50; ++t) {
      Matrix x = test::random_matrix(rng, 1, 6);
      const Matrix y0 = forward(st, x);
      const double eps = rng.uniform(1e-4, 1e-1);
      x.data[rng.below(6)] += eps;
      const Matrix y1 = forward(st, x);
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += (y1.data[c] - y0.data[c]) * (y1.data[c] - y0.data[c]);
      CHECK(std::sqrt(d) <= lip * eps * (1 + 1e-12));
    }
  }
}

TEST_CASE("backward matches finite differences") {
  Rng rng(6);
  for (auto act : {Activation::kTanh, Activation::kSoftplus}) {
    for (int t = 0; t < 5; ++t) {
      auto st = init_encoder(10 + t, kSmall, act);
      const Matrix x = test::random_matrix(rng, 3, 6);
      const Matrix up = test::random_matrix(rng, 3, 3);
      ForwardCache cache;
      forward(st, x, &cache);
      const auto g = backward(st, cache, up);
      REQUIRE(g.size() == st.parameter_count());
      double worst = 0.0;
      const double h = 1e-5;
      for (std::size_t k = 0; k < st.params.size(); ++k) {
        const double keep = st.params[k];
        st.params[k] = keep + h;
        const double fp = inner(forward(st, x), up);
        st.params[k] = keep - h;
        const double fm = inner(forward(st, x), up);
        st.params[k] = keep;
        const double fd = (fp - fm) / (2 * h);
        worst = std::max(worst, std::fabs(fd - g[k]) / std::max(1e-6, std::max(std::fabs(fd), std::fabs(g[k]))));
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("backward is linear in the upstream gradient") {
  Rng rng(7);
  const auto st = init_encoder(2, kSmall);
  const Matrix x = test::random_matrix(rng, 4, 6);
  ForwardCache cache;
  forward(st, x, &cache);
  const Matrix g1 = test::random_matrix(rng, 4, 3), g2 = test::random_matrix(rng, 4, 3);
  Matrix sum = g1;
  for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data[k] += g2.data[k];
  const auto a = backward(st, cache, g1), b = backward(st, cache, g2), c = backward(st, cache, sum);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::fabs(c[k] - a[k] - b[k]) < 1e-10);
  const auto z = backward(st, cache, Matrix(4, 3, 0.0));
  for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("Adam: zero gradient leaves parameters unchanged") {
  std::vector<double> p{1.0, -2.0, 3.0};
  const auto before = p;
  auto opt = init_optimizer(3);
  for (int k = 0; k < 10; ++k) CHECK(adam_step(opt, p, std::vector<double>(3, 0.0)));
  CHECK(p == before);
  CHECK(opt.step == 10u);
}

TEST_CASE("Adam: constant gradients move every parameter by lr against the sign") {
  std::vector<double> p(4, 0.0);
  const std::vector<double> g{2.0, -0.001, 50.0, -7.0};
  auto opt = init_optimizer(4, {.learning_rate = 1e-3});
  for (int k = 0; k < 100; ++k) {
    const auto before = p;
    adam_step(opt, p, g);
    for (std::size_t i = 0; i < 4; ++i) {
      const double step = p[i] - before[i];
      // With bias correction m_hat = g and v_hat = g^2 exactly.
      CHECK(step == doctest::Approx(-1e-3 * g[i] / (std::fabs(g[i]) + 1e-8)).epsilon(1e-9));
    }
  }
}

TEST_CASE("Adam: non-finite gradient skips the step") {
  std::vector<double> p{1.0, 2.0};
  auto opt = init_optimizer(2);
  const auto before = opt;
  CHECK(!adam_step(opt, p, std::vector<double>{1.0, std::numeric_limits<double>::infinity()}));
  CHECK(opt == before);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(adam_step(opt, p, std::vector<double>{1.0}), Error);
}

TEST_CASE("checkpoints round-trip bitwise") {
  Checkpoint c;
  c.encoder = init_encoder(9, kSmall, Activation::kSoftplus);
  c.optimizer = init_optimizer(c.encoder.parameter_count(), {.learning_rate = 3e-4});
  std::vector<double> g(c.encoder.parameter_count(), 0.25);
  adam_step(c.optimizer, c.encoder.params, g);
  c.train_step = 17;
  const auto bytes = encode_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VSCK");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back == c);
  CHECK(encode_checkpoint(back) == bytes);

  test::TempDir dir("ckpt");
  std::filesystem::create_directories(dir.path);
  save_checkpoint(dir.path / "c.bin", c);
  const Checkpoint loaded = load_checkpoint(dir.path / "c.bin");
  Rng rng(1);
  const Matrix x = test::random_matrix(rng, 3, 6);
  CHECK(forward(loaded.encoder, x) == forward(c.encoder, x));
}

TEST_CASE("corrupted checkpoints are rejected") {
  Checkpoint c;
  c.encoder = init_encoder(9, kSmall);
  c.optimizer = init_optimizer(c.encoder.parameter_count());
  auto bytes = encode_checkpoint(c);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(truncated), Error);
  auto bad_magic = bytes;
  bad_magic[1] = 'Z';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), Error);
  c.encoder.params[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    decode_checkpoint(encode_checkpoint(c));
    FAIL("expected corrupted state");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kCorruptedState);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), Error);
}
