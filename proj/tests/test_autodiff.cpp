#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "anymole/autodiff.hpp"
#include "anymole/errors.hpp"
#include "anymole/rng.hpp"
#include "support/oracles.hpp"

using namespace anymole;
using ad::Graph;
using ad::Tensor;

namespace {

// Checks d(loss)/d(param) for every element of every parameter against
// central finite differences.
void check_gradients(std::vector<Tensor*> params,
                     const std::function<double(Graph&, std::vector<Graph::Id>&)>& build,
                     double tol = 5e-6, double h = 1e-6) {
  std::vector<Tensor> grads;
  {
    Graph g;
    std::vector<Graph::Id> ids;
    for (auto* p : params) ids.push_back(g.param(p));
    std::vector<Graph::Id> ids_copy = ids;
    const double base = build(g, ids_copy);
    (void)base;
    for (auto id : ids) grads.push_back(g.grad(id));
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (int k = 0; k < params[pi]->numel(); ++k) {
      const double saved = params[pi]->v[static_cast<size_t>(k)];
      auto eval = [&]() {
        Graph g;
        std::vector<Graph::Id> ids;
        for (auto* p : params) ids.push_back(g.param(p));
        return build(g, ids);
      };
      params[pi]->v[static_cast<size_t>(k)] = saved + h;
      const double plus = eval();
      params[pi]->v[static_cast<size_t>(k)] = saved - h;
      const double minus = eval();
      params[pi]->v[static_cast<size_t>(k)] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double an = grads[pi].v[static_cast<size_t>(k)];
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      INFO("param ", pi, " element ", k, " fd=", fd, " an=", an);
      CHECK(err < tol);
    }
  }
}

Tensor randn(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("elementwise ops: add/sub/mul/affine/tanh") {
  Tensor a = randn({3, 4}, 1), b = randn({3, 4}, 2);
  check_gradients({&a, &b}, [](Graph& g, std::vector<Graph::Id>& ids) {
    Graph::Id x = g.mul(g.add(ids[0], ids[1]), g.sub(ids[0], ids[1]));
    x = g.tanh_act(g.affine_scalar(x, 0.3, -0.1));
    const double v = g.val(g.sum_all(x)).v[0];
    g.backward(g.sum_all(x));
    return v;
  });
}

TEST_CASE("matmul and linear") {
  Tensor a = randn({3, 5}, 3, 0.5), b = randn({5, 2}, 4, 0.5);
  check_gradients({&a, &b}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id loss = g.sum_all(g.tanh_act(g.matmul(ids[0], ids[1])));
    g.backward(loss);
    return g.val(loss).v[0];
  });

  Tensor x = randn({4, 3}, 5, 0.5), w = randn({2, 3}, 6, 0.5), bias = randn({2}, 7, 0.2);
  check_gradients({&x, &w, &bias}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id loss = g.sq_diff_sum(g.linear(ids[0], ids[1], ids[2]), Tensor({4, 2}, 0.3));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("conv2d gradients (kernel 3, padding 1)") {
  Tensor x = randn({2, 3, 5, 4}, 8, 0.5);
  Tensor w = randn({2, 3, 3, 3}, 9, 0.3);
  Tensor b = randn({2}, 10, 0.2);
  check_gradients({&x, &w, &b}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id out = g.conv2d(ids[0], ids[1], ids[2], 1);
    const Graph::Id loss = g.sq_diff_sum(g.tanh_act(out), Tensor({2, 2, 5, 4}, 0.1));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("conv2d 1x1 without padding") {
  Tensor x = randn({3, 4, 2, 2}, 11, 0.5);
  Tensor w = randn({5, 4, 1, 1}, 12, 0.3);
  Tensor b = randn({5}, 13, 0.1);
  check_gradients({&x, &w, &b}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id loss = g.sum_all(g.tanh_act(g.conv2d(ids[0], ids[1], ids[2], 0)));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("softmax_rows gradients and row normalization") {
  Tensor x = randn({3, 6}, 14);
  {
    Graph g;
    const auto soft = g.softmax_rows(g.constant(x));
    for (int r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (int c = 0; c < 6; ++c) acc += g.val(soft).v[static_cast<size_t>(r * 6 + c)];
      CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  Tensor coords = randn({6, 2}, 15);
  check_gradients({&x}, [&coords](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id soft = g.softmax_rows(ids[0]);
    const Graph::Id exp = g.matmul(soft, g.constant(coords));
    const Graph::Id loss = g.sq_diff_sum(exp, Tensor({3, 2}, 0.25));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("concat, slice, stack, reshape, upsample") {
  Tensor a = randn({2, 3}, 16), b = randn({2, 2}, 17);
  check_gradients({&a, &b}, [](Graph& g, std::vector<Graph::Id>& ids) {
    Graph::Id cat = g.concat({ids[0], ids[1]}, 1);  // (2,5)
    Graph::Id row = g.slice_row(cat, 1);            // (5,)
    Graph::Id stacked = g.stack_rows({row, row});   // (2,5)
    Graph::Id cols = g.slice_cols(stacked, 1, 4);   // (2,3)
    const Graph::Id loss = g.sum_all(g.tanh_act(cols));
    g.backward(loss);
    return g.val(loss).v[0];
  });

  Tensor x = randn({1, 2, 3, 3}, 18, 0.5);
  check_gradients({&x}, [](Graph& g, std::vector<Graph::Id>& ids) {
    Graph::Id up = g.upsample2x(ids[0]);
    Graph::Id flat = g.reshape(up, {2, 36});
    const Graph::Id loss = g.sq_diff_sum(flat, Tensor({2, 36}, 0.2));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("broadcast helpers: channel bias, spatial broadcast, frame mixing") {
  Tensor z = randn({3, 2, 2, 2}, 19, 0.5);
  Tensor v = randn({2}, 20, 0.5);
  Tensor m = randn({2, 2, 2}, 21, 0.5);
  Tensor w = randn({4, 3}, 22, 0.4);
  check_gradients({&z, &v, &m, &w}, [](Graph& g, std::vector<Graph::Id>& ids) {
    Graph::Id h = g.add_channel_bias(ids[0], ids[1]);
    h = g.add_spatial_broadcast(h, ids[2]);
    h = g.frame_dense(h, ids[3]);  // (4,2,2,2)
    const Graph::Id loss = g.sum_all(g.tanh_act(h));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("bilinear_sample gradients w.r.t. features and coordinates") {
  Tensor f = randn({3, 6, 5}, 23, 0.8);
  Tensor xy({4, 2});
  xy.v = {1.3, 2.7, 0.4, 0.9, 3.6, 4.2, 2.5, 1.5};  // interior, off-integer
  check_gradients(
      {&f, &xy},
      [](Graph& g, std::vector<Graph::Id>& ids) {
        const Graph::Id s = g.bilinear_sample(ids[0], ids[1]);
        const Graph::Id loss = g.sq_diff_sum(g.tanh_act(s), Tensor({4, 3}, 0.1));
        g.backward(loss);
        return g.val(loss).v[0];
      },
      1e-5, 1e-6);
}

TEST_CASE("bilinear_sample: grid nodes, midpoints, border clamps") {
  Tensor f({1, 3, 3});
  f.v = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  Graph g;
  Tensor xy({3, 2});
  xy.v = {1.0, 1.0, 0.5, 0.0, -2.0, 5.0};
  const auto s = g.bilinear_sample(g.constant(f), g.constant(xy));
  CHECK(g.val(s).v[0] == doctest::Approx(5.0));           // exact node
  CHECK(g.val(s).v[1] == doctest::Approx(1.5));           // midpoint of 1 and 2
  CHECK(g.val(s).v[2] == doctest::Approx(7.0));           // clamped to bottom-left
  CHECK(g.border_clamp_count() == 1);
}

TEST_CASE("quaternion ops agree with Eigen and with finite differences") {
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    const auto qa = oracles::random_unit_quaternion(rng);
    const auto qb = oracles::random_unit_quaternion(rng);
    Tensor a({4}), b({4});
    a.v = {qa.w(), qa.x(), qa.y(), qa.z()};
    b.v = {qb.w(), qb.x(), qb.y(), qb.z()};
    Graph g;
    const auto prod = g.quat_mul(g.constant(a), g.constant(b));
    const auto expected = qa * qb;
    CHECK(g.val(prod).v[0] == doctest::Approx(expected.w()).epsilon(1e-12));
    CHECK(g.val(prod).v[1] == doctest::Approx(expected.x()).epsilon(1e-12));
    CHECK(g.val(prod).v[2] == doctest::Approx(expected.y()).epsilon(1e-12));
    CHECK(g.val(prod).v[3] == doctest::Approx(expected.z()).epsilon(1e-12));

    Tensor vec({3});
    vec.v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto rotated = g.quat_rotate(g.constant(a), g.constant(vec));
    const Eigen::Vector3d ev = qa * Eigen::Vector3d(vec.v[0], vec.v[1], vec.v[2]);
    for (int k = 0; k < 3; ++k)
      CHECK(g.val(rotated).v[static_cast<size_t>(k)] == doctest::Approx(ev[k]).epsilon(1e-12));
  }

  Tensor a = randn({4}, 25, 0.5);
  Tensor b = randn({4}, 26, 0.5);
  Tensor v3 = randn({3}, 27, 0.8);
  a.v[0] += 1.5;
  b.v[0] += 1.5;  // keep away from zero norm
  check_gradients({&a, &b, &v3}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id prod = g.quat_mul(ids[0], ids[1]);
    const Graph::Id rot = g.quat_rotate(prod, ids[2]);
    const Graph::Id loss = g.sq_diff_sum(rot, Tensor({3}, 0.3));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("quat_normalize_rows gradients") {
  Tensor q = randn({3, 4}, 28, 0.7);
  for (int j = 0; j < 3; ++j) q.v[static_cast<size_t>(j) * 4] += 1.2;
  check_gradients({&q}, [](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id n = g.quat_normalize_rows(ids[0]);
    const Graph::Id loss = g.sq_diff_sum(n, Tensor({3, 4}, 0.2));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("affine_rows matches its definition and gradients") {
  Eigen::Matrix3d a;
  a << 2, 0.5, -1, 0, 1.5, 0.25, -0.5, 0, 3;
  const Eigen::Vector3d b(1, -2, 0.5);
  Tensor x = randn({4, 3}, 29, 0.6);
  check_gradients({&x}, [&](Graph& g, std::vector<Graph::Id>& ids) {
    const Graph::Id out = g.affine_rows(ids[0], a, b);
    const Graph::Id loss = g.sq_diff_sum(out, Tensor({4, 3}, 0.0));
    g.backward(loss);
    return g.val(loss).v[0];
  });
}

TEST_CASE("luminance op uses the Rec.601 weights") {
  Tensor rgb = randn({3, 2, 2}, 30, 0.4);
  Graph g;
  const auto lum = g.luminance(g.constant(rgb));
  CHECK(g.val(lum).v[0] ==
        doctest::Approx(0.299 * rgb.v[0] + 0.587 * rgb.v[4] + 0.114 * rgb.v[8]));
  check_gradients({&rgb}, [](Graph& g2, std::vector<Graph::Id>& ids) {
    const Graph::Id loss = g2.sq_diff_sum(g2.luminance(ids[0]), Tensor({2, 2}, 0.1));
    g2.backward(loss);
    return g2.val(loss).v[0];
  });
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Tensor x = randn({2, 2}, 31);
  const auto id = g.constant(x);
  CHECK_THROWS_AS(g.backward(id), ContractViolation);
}
