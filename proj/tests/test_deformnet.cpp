#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "stan/deformnet.hpp"
#include "stan/gradcheck.hpp"
#include "stan/io.hpp"
#include "test_support.hpp"

using namespace stan;

namespace {

// Independent closed-form parameter count straight from the scale table:
// sum(out*in*k^3 + out) over conv layers plus the FC head.
std::int64_t closed_form_params(DeformScale scale, int dof, std::int64_t c) {
    std::vector<std::int64_t> filters, widths;
    const std::int64_t quarter = std::max<std::int64_t>(1, c / 4);
    switch (scale) {
        case DeformScale::Small:
            filters = {2};
            widths = {quarter};
            break;
        case DeformScale::Medium:
            filters = {3, 2};
            widths = {c, quarter};
            break;
        case DeformScale::Large:
            filters = {4, 3, 2};
            widths = {4 * c, c, quarter};
            break;
    }
    std::int64_t total = 0, in = c;
    for (size_t i = 0; i < filters.size(); ++i) {
        total += widths[i] * in * filters[i] * filters[i] * filters[i] + widths[i];
        in = widths[i];
    }
    return total + dof * in + dof;
}

double min_abs_preact(const DeformNetCache<double>& cache) {
    double m = 1e300;
    for (const auto& conv : cache.convs)
        for (double v : conv.preact.data) m = std::min(m, std::fabs(v));
    return m;
}

// Smallest gap between the best and second-best element over all pooling
// windows; finite differences need this to stay above the probe size.
double min_pool_gap(const Tensor5<double>& x, std::int64_t k) {
    double gap = 1e300;
    const std::int64_t to = pooled_len(x.t(), k), ho = pooled_len(x.h(), k),
                       wo = pooled_len(x.w(), k);
    for (std::int64_t n = 0; n < x.n(); ++n)
        for (std::int64_t c = 0; c < x.c(); ++c)
            for (std::int64_t t = 0; t < to; ++t)
                for (std::int64_t h = 0; h < ho; ++h)
                    for (std::int64_t w = 0; w < wo; ++w) {
                        double best = -1e300, second = -1e300;
                        int count = 0;
                        for (std::int64_t ti = t * k; ti < std::min(x.t(), (t + 1) * k); ++ti)
                            for (std::int64_t hi = h * k; hi < std::min(x.h(), (h + 1) * k); ++hi)
                                for (std::int64_t wi = w * k; wi < std::min(x.w(), (w + 1) * k);
                                     ++wi) {
                                    const double v = x.at(n, c, ti, hi, wi);
                                    ++count;
                                    if (v > best) {
                                        second = best;
                                        best = v;
                                    } else if (v > second) {
                                        second = v;
                                    }
                                }
                        if (count > 1) gap = std::min(gap, best - second);
                    }
    return gap;
}

}  // namespace

TEST_CASE("conv3d k=1 identity kernel") {
    Conv3dLayer<double> layer(1, 1, 1);
    layer.weights.value.data[0] = 1.0;
    auto rng = testsup::make_rng(101);
    auto x = testsup::random_tensor<double>({1, 1, 2, 3, 3}, rng, 0.1, 1.0);
    auto y = conv3d_forward(layer, x);
    CHECK(y.data == x.data);
}

TEST_CASE("conv3d all-ones 2^3 kernel counts its support") {
    Conv3dLayer<double> layer(1, 1, 2);
    layer.weights.value.fill(1.0);
    Tensor5<double> x({1, 1, 2, 2, 2}, 1.0);
    auto y = conv3d_forward(layer, x);
    // even kernel pads on the high side: voxel (0,0,0) sees the full window
    CHECK(y.at(0, 0, 0, 0, 0) == 8.0);
    CHECK(y.at(0, 0, 0, 0, 1) == 4.0);
    CHECK(y.at(0, 0, 1, 1, 1) == 1.0);

    CHECK_THROWS_AS(conv3d_forward(layer, Tensor5<double>({1, 2, 2, 2, 2}, 0.0)), ShapeError);
}

TEST_CASE("conv3d output keeps spatial extents for odd and even kernels") {
    auto rng = testsup::make_rng(103);
    for (std::int64_t k : {1, 2, 3, 4}) {
        Conv3dLayer<double> layer(2, 3, k);
        for (auto& v : layer.weights.value.data)
            v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
        auto x = testsup::random_tensor<double>({1, 2, 3, 5, 4}, rng);
        auto y = conv3d_forward(layer, x);
        CHECK(y.shape == Shape5{1, 3, 3, 5, 4});
    }
}

TEST_CASE("conv3d gradients match finite differences") {
    auto rng = testsup::make_rng(107);
    const Shape5 shape{1, 2, 3, 4, 4};
    Conv3dLayer<double> layer(2, 3, 2);
    Tensor5<double> x;
    Conv3dCache<double> cache;
    // keep inputs positive and preactivations away from the ReLU kink
    for (int attempt = 0;; ++attempt) {
        REQUIRE(attempt < 100);
        for (auto& v : layer.weights.value.data)
            v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        for (auto& v : layer.bias.value.data)
            v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
        x = testsup::random_tensor<double>(shape, rng, 0.2, 1.2);
        conv3d_forward(layer, x, &cache);
        double margin = 1e300;
        for (double v : cache.preact.data) margin = std::min(margin, std::fabs(v));
        if (margin > 1e-3) break;
    }
    auto w = testsup::random_tensor<double>({1, 3, 3, 4, 4}, rng);
    auto loss = [&](const Conv3dLayer<double>& probe, const Tensor5<double>& in) {
        auto out = conv3d_forward(probe, in);
        double acc = 0;
        for (size_t i = 0; i < out.data.size(); ++i) acc += w.data[i] * out.data[i];
        return acc;
    };

    layer.weights.zero_grad();
    layer.bias.zero_grad();
    auto dx = conv3d_backward(layer, cache, w);

    auto num_dx = finite_diff_grad([&](const Tensor5<double>& v) { return loss(layer, v); }, x, 1e-6);
    CHECK(max_rel_err(dx, num_dx) < 1e-5);

    Conv3dLayer<double> probe = layer;
    auto num_dw = finite_diff_grad(
        [&](const Tensor5<double>& v) {
            probe.weights.value = v;
            return loss(probe, x);
        },
        layer.weights.value, 1e-6);
    CHECK(max_rel_err(layer.weights.grad, num_dw) < 1e-5);

    probe = layer;
    auto num_db = finite_diff_grad(
        [&](const Tensor5<double>& v) {
            probe.bias.value = v;
            return loss(probe, x);
        },
        layer.bias.value, 1e-6);
    CHECK(max_rel_err(layer.bias.grad, num_db) < 1e-5);
}

TEST_CASE("maxpool3d") {
    auto rng = testsup::make_rng(109);
    auto x = testsup::random_tensor<double>({1, 2, 2, 3, 3}, rng);
    auto same = maxpool3d_forward(std::int64_t(1), x);
    CHECK(same.data == x.data);

    Tensor5<double> m({1, 1, 1, 2, 2}, 0.0);
    m.data = {1, 5, 2, 3};
    auto top = maxpool3d_forward(std::int64_t(2), m);
    CHECK(top.size() == 1);
    CHECK(top.data[0] == 5.0);

    // ceil mode pools the trailing remainder as a smaller window
    Tensor5<double> r({1, 1, 1, 2, 3}, 0.0);
    r.data = {1, 2, 9, 4, 5, 6};
    Pool3dCache<double> cache;
    auto pooled = maxpool3d_forward(std::int64_t(2), r, &cache);
    CHECK(pooled.shape == Shape5{1, 1, 1, 1, 2});
    CHECK(pooled.data[0] == 5.0);
    CHECK(pooled.data[1] == 9.0);

    Tensor5<double> up(pooled.shape, 1.0);
    auto back = maxpool3d_backward(cache, up);
    CHECK(back.data == std::vector<double>{0, 0, 1, 0, 1, 0});
}

TEST_CASE("maxpool3d ties route gradient to the first element in scan order") {
    Tensor5<double> x({1, 1, 1, 1, 2}, 7.0);
    Pool3dCache<double> cache;
    auto out = maxpool3d_forward(std::int64_t(2), x, &cache);
    CHECK(out.data[0] == 7.0);
    Tensor5<double> up(out.shape, 3.0);
    auto back = maxpool3d_backward(cache, up);
    CHECK(back.data[0] == 3.0);
    CHECK(back.data[1] == 0.0);
}

TEST_CASE("deformnet config table") {
    DeformNetConfig medium{DeformScale::Medium, 12, 96};
    auto net = build_deformnet<double>(medium, 1);
    REQUIRE(net.convs.size() == 2);
    CHECK(net.convs[0].in_ch == 96);
    CHECK(net.convs[0].out_ch == 96);
    CHECK(net.convs[0].k == 3);
    CHECK(net.convs[1].in_ch == 96);
    CHECK(net.convs[1].out_ch == 24);
    CHECK(net.convs[1].k == 2);
    CHECK(net.fc_w.value.n() == 12);
    CHECK(net.fc_w.value.c() == 24);
    CHECK(count_params(net) == 267684);
    CHECK(count_params(net) == closed_form_params(DeformScale::Medium, 12, 96));

    DeformNetConfig small{DeformScale::Small, 12, 96};
    auto snet = build_deformnet<double>(small, 1);
    REQUIRE(snet.convs.size() == 1);
    CHECK(snet.convs[0].in_ch == 96);
    CHECK(snet.convs[0].out_ch == 24);
    CHECK(snet.convs[0].k == 2);
    CHECK(count_params(snet) == 18756);

    DeformNetConfig large{DeformScale::Large, 12, 96};
    CHECK(count_params(build_deformnet<double>(large, 1)) == 3373860);

    CHECK_THROWS_AS(build_deformnet<double>({DeformScale::Small, 12, 2}, 1), ConfigError);
    CHECK_THROWS_AS(build_deformnet<double>({DeformScale::Small, 7, 96}, 1), ConfigError);
}

TEST_CASE("count_params matches the closed form over the full grid") {
    for (auto scale : {DeformScale::Small, DeformScale::Medium, DeformScale::Large})
        for (int dof : {6, 12})
            for (std::int64_t c : {4, 16, 96}) {
                auto net = build_deformnet<double>({scale, dof, c}, 3);
                CHECK(count_params(net) == closed_form_params(scale, dof, c));
            }
}

TEST_CASE("equal seeds build identical nets") {
    DeformNetConfig cfg{DeformScale::Medium, 12, 8};
    auto a = build_deformnet<double>(cfg, 42);
    auto b = build_deformnet<double>(cfg, 42);
    auto c = build_deformnet<double>(cfg, 43);
    REQUIRE(a.convs.size() == b.convs.size());
    bool different_seed_differs = false;
    for (size_t i = 0; i < a.convs.size(); ++i) {
        CHECK(a.convs[i].weights.value.data == b.convs[i].weights.value.data);
        if (a.convs[i].weights.value.data != c.convs[i].weights.value.data)
            different_seed_differs = true;
    }
    CHECK(different_seed_differs);
}

TEST_CASE("fresh deformnet predicts the zero vector, hence the identity theta") {
    auto rng = testsup::make_rng(113);
    auto net = build_deformnet<double>({DeformScale::Medium, 12, 4}, 7);
    auto x = testsup::random_tensor<double>({2, 4, 3, 5, 5}, rng);
    auto params = deformnet_forward(net, x);
    REQUIRE(params.size() == 2);
    for (const auto& pv : params) {
        for (double v : pv.p) CHECK(v == 0.0);
        auto th = build_theta(pv);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) CHECK(th.at(r, c) == (r == c ? 1.0 : 0.0));
    }

    // zero input with zero conv biases also yields exactly the FC bias
    auto zeros = Tensor5<double>({1, 4, 2, 4, 4}, 0.0);
    auto pz = deformnet_forward(net, zeros);
    for (double v : pz[0].p) CHECK(v == 0.0);

    CHECK_THROWS_AS(deformnet_forward(net, Tensor5<double>({1, 5, 2, 4, 4}, 0.0)), ShapeError);
}

TEST_CASE("deformnet gradients match finite differences") {
    auto rng = testsup::make_rng(127);
    const Shape5 shape{2, 4, 3, 4, 4};
    DeformNet<double> net;
    Tensor5<double> x;
    DeformNetCache<double> cache;
    for (int attempt = 0;; ++attempt) {
        REQUIRE(attempt < 100);
        net = build_deformnet<double>({DeformScale::Medium, 12, 4}, 1000 + std::uint64_t(attempt));
        // non-trivial head so every path carries gradient
        for (auto& v : net.fc_w.value.data)
            v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
        for (auto& v : net.fc_b.value.data)
            v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
        x = testsup::random_tensor<double>(shape, rng, 0.2, 1.2);
        deformnet_forward(net, x, &cache);
        if (min_abs_preact(cache) < 1e-3) continue;
        bool pools_ok = true;
        for (size_t i = 0; i < net.convs.size(); ++i) {
            Tensor5<double> post(cache.convs[i].preact.shape, 0.0);
            for (size_t j = 0; j < post.data.size(); ++j)
                post.data[j] = std::max(0.0, cache.convs[i].preact.data[j]);
            if (min_pool_gap(post, net.convs[i].k) < 1e-3) pools_ok = false;
        }
        if (pools_ok) break;
    }

    std::vector<std::vector<double>> w(2, std::vector<double>(12));
    for (auto& row : w)
        for (auto& v : row) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    auto loss_with = [&](DeformNet<double>& probe, const Tensor5<double>& in) {
        auto params = deformnet_forward(probe, in);
        double acc = 0;
        for (size_t n = 0; n < params.size(); ++n)
            for (size_t i = 0; i < 12; ++i) acc += w[n][i] * params[n].p[i];
        return acc;
    };

    zero_grad(net);
    auto dx = deformnet_backward(net, cache, w);

    auto num_dx = finite_diff_grad([&](const Tensor5<double>& v) { return loss_with(net, v); }, x,
                                   1e-6);
    CHECK(max_rel_err(dx, num_dx) < 1e-5);

    // every parameter buffer against the oracle
    auto run_param_check = [&](const Tensor5<double>& value, const Tensor5<double>& grad,
                               auto setter) {
        auto num = finite_diff_grad(
            [&](const Tensor5<double>& v) {
                auto local = net;
                setter(local, v);
                return loss_with(local, x);
            },
            value, 1e-6);
        CHECK(max_rel_err(grad, num) < 1e-5);
    };
    for (size_t li = 0; li < net.convs.size(); ++li) {
        run_param_check(net.convs[li].weights.value, net.convs[li].weights.grad,
                        [li](DeformNet<double>& m, const Tensor5<double>& v) {
                            m.convs[li].weights.value = v;
                        });
        run_param_check(net.convs[li].bias.value, net.convs[li].bias.grad,
                        [li](DeformNet<double>& m, const Tensor5<double>& v) {
                            m.convs[li].bias.value = v;
                        });
    }
    run_param_check(net.fc_w.value, net.fc_w.grad,
                    [](DeformNet<double>& m, const Tensor5<double>& v) { m.fc_w.value = v; });
    run_param_check(net.fc_b.value, net.fc_b.grad,
                    [](DeformNet<double>& m, const Tensor5<double>& v) { m.fc_b.value = v; });
}

TEST_CASE("deformnet checkpoint round trip") {
    auto rng = testsup::make_rng(131);
    auto net = build_deformnet<float>({DeformScale::Small, 6, 4}, 5);
    for (auto& v : net.fc_w.value.data)
        v = float(std::uniform_real_distribution<double>(-1, 1)(rng));
    const auto dir = std::filesystem::temp_directory_path() / "stan_test_deformnet";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "net.ckpt").string();

    auto params = named_parameters(net, "stan.");
    NamedTensorList<float> buffers;
    for (auto& p : params) buffers.emplace_back(p.name, &p.param->value);
    save_checkpoint(path, buffers);

    auto restored = build_deformnet<float>({DeformScale::Small, 6, 4}, 99);
    auto loaded = load_checkpoint<float>(path);
    auto rparams = named_parameters(restored, "stan.");
    REQUIRE(loaded.size() == rparams.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded[i].first == rparams[i].name);
        REQUIRE(loaded[i].second.shape == rparams[i].param->value.shape);
        rparams[i].param->value = loaded[i].second;
    }
    CHECK(restored.fc_w.value.data == net.fc_w.value.data);
    CHECK(restored.convs[0].weights.value.data == net.convs[0].weights.value.data);
    std::filesystem::remove_all(dir);
}
