#include <catch2/catch_amalgamated.hpp>

#include "bmcx/model.hpp"
#include "bmcx/rng.hpp"
#include "test_util.hpp"

using namespace bmcx;
using namespace bmcx::testutil;

TEST_CASE("parameter counts") {
    SECTION("hand-counted MLP 4-8-3") {
        REQUIRE(count_params(mlp_spec({4, 8, 3})) == 67);
    }
    SECTION("single conv layer 1->2, k=3") {
        ModelSpec spec;
        spec.input_shape = {1, 8, 8};
        spec.layers.push_back(Conv2dSpec{1, 2, 3, 1, 1, true});
        REQUIRE(count_params(spec) == 20);
    }
    SECTION("linear 10x10") {
        ModelSpec spec;
        spec.input_shape = {10};
        spec.layers.push_back(LinearSpec{10, 10, true});
        REQUIRE(count_params(spec) == 110);
    }
    SECTION("empty spec") {
        ModelSpec spec;
        spec.input_shape = {10};
        REQUIRE(count_params(spec) == 0);
    }
    SECTION("MLP 784-512-10") {
        REQUIRE(count_params(mlp_spec({784, 512, 10})) == 407050);
    }
    SECTION("built model matches count_params") {
        const ModelSpec spec = mlp_spec({12, 20, 7, 4});
        const Model model(spec);
        REQUIRE(model.param_count() == count_params(spec));
        REQUIRE(model.init_params(3).size() == count_params(spec));
    }
}

TEST_CASE("initialization is deterministic per (spec, seed)") {
    const Model model(mlp_spec({4, 8, 3}));
    const ParamVector a = model.init_params(42);
    const ParamVector b = model.init_params(42);
    REQUIRE(bit_equal(a.values, b.values));
    const ParamVector c = model.init_params(43);
    REQUIRE(!bit_equal(a.values, c.values));
}

TEST_CASE("non-composing spec names the first bad layer pair") {
    ModelSpec spec;
    spec.input_shape = {4};
    spec.layers.push_back(LinearSpec{4, 8, true});
    spec.layers.push_back(LinearSpec{9, 2, true});
    REQUIRE_THROWS_WITH(Model(spec), Catch::Matchers::ContainsSubstring("layer 1") &&
                                         Catch::Matchers::ContainsSubstring("linear") &&
                                         Catch::Matchers::ContainsSubstring("(8)"));

    ModelSpec conv_on_flat;
    conv_on_flat.input_shape = {16};
    conv_on_flat.layers.push_back(Conv2dSpec{1, 2, 3, 1, 1, true});
    REQUIRE_THROWS_WITH(Model(conv_on_flat), Catch::Matchers::ContainsSubstring("layer 0"));
}

TEST_CASE("flatten then unflatten of a param vector is the identity") {
    RngStream rng(17);
    const Model model(mlp_spec({6, 10, 5}));
    ParamVector v = model.init_params(9);
    for (auto& x : v.values) x = rng.normal();

    // Slice per manifest entry, then reassemble at the recorded offsets.
    std::vector<double> rebuilt(v.values.size(), 0.0);
    for (const auto& e : model.layout()->entries) {
        std::vector<double> piece(v.values.begin() + e.offset, v.values.begin() + e.offset + e.size);
        REQUIRE(static_cast<int64_t>(piece.size()) == Tensor::numel_of(e.shape));
        std::copy(piece.begin(), piece.end(), rebuilt.begin() + e.offset);
    }
    REQUIRE(bit_equal(v.values, rebuilt));
}

TEST_CASE("zero batch through zero weights gives zero logits") {
    const Model model(mlp_spec({4, 6, 3}));
    ParamVector zeros(model.layout(), std::vector<double>(static_cast<size_t>(model.param_count()), 0.0));
    Tape tape;
    const ForwardResult fwd = model.forward(tape, zeros, Tensor::zeros({5, 4}));
    REQUIRE(tape.value(fwd.logits).data == std::vector<double>(15, 0.0));
}

TEST_CASE("forward is a pure function of params and batch") {
    RngStream rng(3);
    const Model model(mlp_spec({4, 6, 3}));
    const ParamVector params = model.init_params(1);
    const Tensor batch = random_tensor({7, 4}, rng);
    Tape t1, t2;
    const auto a = model.forward(t1, params, batch);
    const auto b = model.forward(t2, params, batch);
    REQUIRE(bit_equal(t1.value(a.logits).data, t2.value(b.logits).data));
}

TEST_CASE("forward rejects mismatched batch shape") {
    const Model model(mlp_spec({4, 6, 3}));
    const ParamVector params = model.init_params(1);
    Tape tape;
    REQUIRE_THROWS_WITH(model.forward(tape, params, Tensor::zeros({5, 3})),
                        Catch::Matchers::ContainsSubstring("batch shape"));
}

TEST_CASE("single linear layer without bias: forward(a*p) = a*forward(p)") {
    RngStream rng(29);
    ModelSpec spec;
    spec.input_shape = {6};
    spec.layers.push_back(LinearSpec{6, 4, false});
    const Model model(spec);
    ParamVector p = model.init_params(5);
    const Tensor batch = random_tensor({7, 6}, rng);
    Tape t1;
    const Tensor base = t1.value(model.forward(t1, p, batch).logits);
    ParamVector scaled = p;
    for (auto& v : scaled.values) v *= 4.0;  // power of two: exact scaling
    Tape t2;
    const Tensor out = t2.value(model.forward(t2, scaled, batch).logits);
    for (size_t i = 0; i < out.data.size(); ++i) {
        REQUIRE(out.data[i] == Catch::Approx(4.0 * base.data[i]).margin(1e-12));
    }
}

TEST_CASE("pure linear model without bias is homogeneous in params") {
    RngStream rng(23);
    ModelSpec spec;
    spec.input_shape = {5};
    spec.layers.push_back(LinearSpec{5, 4, false});
    spec.layers.push_back(LinearSpec{4, 3, false});
    const Model model(spec);
    ParamVector p = model.init_params(2);
    const Tensor batch = random_tensor({6, 5}, rng);

    Tape t1;
    const Tensor base = t1.value(model.forward(t1, p, batch).logits);

    // forward(a*p) == a^L * forward(p) per linear layer; with two layers and
    // scale a applied to one layer only, the output scales by a exactly.
    const double a = 2.0;  // power of two keeps the scaling bit-exact
    ParamVector scaled = p;
    for (const auto& e : model.layout()->entries) {
        if (e.name == "layer0.weight") {
            for (int64_t i = 0; i < e.size; ++i) scaled.values[static_cast<size_t>(e.offset + i)] *= a;
        }
    }
    Tape t2;
    const Tensor out = t2.value(model.forward(t2, scaled, batch).logits);
    for (size_t i = 0; i < out.data.size(); ++i) {
        REQUIRE(out.data[i] == Catch::Approx(a * base.data[i]).margin(1e-12));
    }
}

TEST_CASE("cross-entropy gradient through a model passes the finite-difference oracle") {
    RngStream rng(31);
    SECTION("MLP") {
        const Model model(mlp_spec({5, 9, 4}));
        const ParamVector params = model.init_params(7);
        const Tensor batch = random_tensor({6, 5}, rng);
        const std::vector<int32_t> labels{0, 1, 2, 3, 1, 0};
        REQUIRE(finite_diff_check(model_ce(model, batch, labels), params.values, 1e-5) < 1e-4);
    }
    SECTION("small CNN") {
        ModelSpec spec;
        spec.input_shape = {1, 6, 6};
        spec.layers.push_back(Conv2dSpec{1, 3, 3, 1, 1, true});
        spec.layers.push_back(ReluSpec{});
        spec.layers.push_back(MaxPool2dSpec{2});
        spec.layers.push_back(FlattenSpec{});
        spec.layers.push_back(LinearSpec{27, 4, true});
        const Model model(spec);
        const ParamVector params = model.init_params(5);
        const Tensor batch = random_tensor({3, 1, 6, 6}, rng);
        const std::vector<int32_t> labels{0, 1, 2};

        // Keep the probe clear of relu/pool kinks before trusting the check.
        Tape probe;
        model.forward(probe, params, batch);
        REQUIRE(probe.min_relu_margin() > 1e-4);
        REQUIRE(finite_diff_check(model_ce(model, batch, labels), params.values, 1e-5) < 1e-4);
    }
}
