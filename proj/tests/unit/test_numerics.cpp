#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "deskmvs/numerics/gradcheck.hpp"
#include "deskmvs/numerics/init.hpp"
#include "deskmvs/numerics/ops.hpp"
#include "deskmvs/numerics/optim.hpp"
#include "deskmvs/numerics/random.hpp"
#include "deskmvs/numerics/serialize.hpp"

using namespace deskmvs;

TEST_CASE("tensor indexing and reshape") {
  Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  CHECK(t.at({1, 2}) == 5.0);
  CHECK(t.dim(-1) == 3);
  const Tensor r = t.reshape({3, 2});
  CHECK(r.at({2, 0}) == 4.0);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
}

TEST_CASE("float32 storage rounds values") {
  Tensor t({1}, 0.1);
  t.set_dtype(DType::kFloat32);
  CHECK(t[0] == static_cast<double>(0.1f));
}

TEST_CASE("require_finite names the offender") {
  Tensor t({2}, std::vector<double>{1.0, std::nan("")});
  CHECK_THROWS_WITH_AS(require_finite(t, "probe"), doctest::Contains("probe"), NumericError);
}

TEST_CASE("matmul matches a hand computed product") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  const Var b = tape.constant(Tensor({2, 1}, std::vector<double>{5, 6}));
  const Tensor c = matmul(a, b).value();
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);
  CHECK_THROWS_AS(matmul(b, b), ShapeError);
}

TEST_CASE("softmax rows sum to one and respect the scale") {
  const Tensor x({2, 3}, std::vector<double>{1, 2, 3, -1, 0, 1000});
  const Tensor p = softmax_scaled(x, 0.5);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[1] / p[0] == doctest::Approx(std::exp(0.5)));
  CHECK(p[5] == doctest::Approx(1.0));
}

TEST_CASE("layer norm output is standardised") {
  const Tensor x({1, 4}, std::vector<double>{1, 2, 3, 10});
  const Tensor y = layer_norm(x, Tensor({4}, 1.0), Tensor({4}, 0.0));
  double m = 0.0, v = 0.0;
  for (int i = 0; i < 4; ++i) m += y[i] / 4.0;
  for (int i = 0; i < 4; ++i) v += (y[i] - m) * (y[i] - m) / 4.0;
  CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("frozen parameters never receive gradient") {
  Param w("w", Tensor({2}, 1.0)), frozen("f", Tensor({2}, 2.0), false);
  Tape tape;
  const Var loss = sum(mul(tape.param(w), tape.param(frozen)));
  tape.backward(loss);
  CHECK(w.grad[0] == 2.0);
  CHECK((frozen.grad.empty() || frozen.grad[0] == 0.0));
  CHECK_FALSE(tape.param(frozen).requires_grad());
}

TEST_CASE("inference tapes refuse backward") {
  Param w("w", Tensor({1}, 1.0));
  Tape tape(false);
  const Var loss = sum(tape.param(w));
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("gradients accumulate over reuse of a variable") {
  Param w("w", Tensor({1}, 3.0));
  Tape tape;
  const Var x = tape.param(w);
  tape.backward(sum(add(mul(x, x), x)));  // d/dx (x^2 + x) = 2x + 1
  CHECK(w.grad[0] == doctest::Approx(7.0));
}

TEST_CASE("gradient checker catches a wrong backward") {
  Param w("w", Tensor({3}, std::vector<double>{0.3, -0.2, 0.5}));
  // Forward is x^2 but the backward claims 3x.
  auto broken = [](Tape& t, Var x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v * v;
    return t.record("bad_square", out, {x}, [x](Tape& tt, const Tensor& g, const Tensor&) {
      Tensor gx = g;
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] *= 3.0 * x.value()[i];
      tt.accumulate(x, gx);
    });
  };
  const auto bad = check_gradient([&](Tape& t) { return sum(broken(t, t.param(w))); }, {&w});
  CHECK(bad.max_rel_error > 0.1);
  const auto good = check_gradient([&](Tape& t) { return sum(mul(t.param(w), t.param(w))); }, {&w});
  CHECK(good.max_rel_error < 1e-8);
  CHECK(good.coords_checked == 3);
}

TEST_CASE("adam moves trainable params and skips frozen ones") {
  Param a("a", Tensor({2}, 1.0)), f("f", Tensor({2}, 1.0), false);
  Adam opt({&a, &f}, AdamOptions{});
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    Tape tape;
    tape.backward(sum(mul(mul(tape.param(a), tape.param(a)), tape.param(f))));
    opt.step();
  }
  CHECK(a.value[0] < 1.0);
  CHECK(f.value[0] == 1.0);
  CHECK(opt.steps() == 10);
}

TEST_CASE("adam clip bounds the update direction") {
  Param a("a", Tensor({1}, 0.0));
  AdamOptions o;
  o.lr = 0.1;
  o.clip_norm = 1.0;
  Adam opt({&a}, o);
  opt.zero_grad();
  a.grad = Tensor({1}, 1e6);
  opt.step();
  // First Adam step has magnitude lr regardless of the gradient scale.
  CHECK(a.value[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("tensor records round-trip in both precisions") {
  Rng rng(3);
  Tensor t = rng.normal_tensor({2, 3, 4});
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(max_abs_diff(read_tensor(ss), t) == 0.0);

  Tensor f = t;
  f.set_dtype(DType::kFloat32);
  std::stringstream ss32;
  write_tensor(ss32, f);
  const Tensor back = read_tensor(ss32);
  CHECK(back.dtype() == DType::kFloat32);
  CHECK(max_abs_diff(back, f) == 0.0);
}

TEST_CASE("checkpoints restore params by name") {
  const auto path = std::filesystem::temp_directory_path() / "deskmvs_ckpt_test.bin";
  Rng rng(4);
  Param a("a", rng.normal_tensor({3})), b("b", rng.normal_tensor({2, 2}), false);
  save_checkpoint(path, {&a, &b});
  Param a2("a", Tensor({3})), b2("b", Tensor({2, 2}));
  load_checkpoint(path, {&a2, &b2});
  CHECK(max_abs_diff(a.value, a2.value) == 0.0);
  CHECK(max_abs_diff(b.value, b2.value) == 0.0);
  Param wrong("a", Tensor({4}));
  CHECK_THROWS(load_checkpoint(path, {&wrong}));
  Param missing("zzz", Tensor({3}));
  CHECK_THROWS(load_checkpoint(path, {&missing}));
  std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoints are rejected") {
  const auto path = std::filesystem::temp_directory_path() / "deskmvs_ckpt_trunc.bin";
  Param a("a", Tensor({64}, 1.0));
  save_checkpoint(path, {&a});
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("affine init stays within the fan-in bound") {
  Rng rng(5);
  const Param p = affine_init("w", {16, 9}, 9, rng);
  for (const double v : p.value.values()) CHECK(std::abs(v) <= 1.0 / 3.0);
}

TEST_CASE("seeded streams are reproducible") {
  Rng a(11), b(11);
  CHECK(max_abs_diff(a.normal_tensor({5}), b.normal_tensor({5})) == 0.0);
  Rng c = a.fork(), d = b.fork();
  CHECK(c.next_u64() == d.next_u64());
}
