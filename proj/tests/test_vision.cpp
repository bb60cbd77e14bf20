#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "pis/dataset.hpp"
#include "pis/gradcheck.hpp"
#include "pis/losses.hpp"
#include "pis/model.hpp"

using namespace pis;

namespace {

const Vocab& vocab() {
    static Vocab v = Vocab::build(grammar_words());
    return v;
}

ModelConfig cfg32() {
    ModelConfig cfg;
    cfg.vocab_size = vocab().size();
    return cfg;
}

ModelConfig cfg8() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.vocab_size = vocab().size();
    return cfg;
}

}  // namespace

TEST_CASE("patch count matches shape arithmetic") {
    const auto cfg = cfg32();
    CHECK(cfg.num_patches() == 64);  // (32/4)^2
    auto pg = init_params<float>(cfg, 11);
    Rng rng(1);
    auto img = Tensor::randn({32, 32, 3}, rng, 0.3f);
    auto feats = embed_image(img, pg, cfg);
    CHECK(feats.shape() == std::vector<int>{64, cfg.model_dim});
}

TEST_CASE("all-zero image gives identical patch embeddings before position") {
    // With equal patch contents, differences can come only from the
    // positional embedding; subtracting it must leave equal rows.
    const auto cfg = cfg8();
    auto pg = init_params<float>(cfg, 13);
    auto img = Tensor::zeros({8, 8, 3});
    auto with_pos = embed_image(img, pg, cfg);
    (void)with_pos;

    auto zero_pos = pg.at("vision.pos").clone();
    for (auto& v : pg.at("vision.pos").data()) v = 0.0f;
    auto feats = embed_image(img, pg, cfg);
    for (int p = 1; p < cfg.num_patches(); ++p)
        for (int j = 0; j < cfg.model_dim; ++j) CHECK(feats.at(p, j) == feats.at(0, j));
    pg.at("vision.pos").data() = zero_pos.data();
}

TEST_CASE("embed_image rejects wrong resolution") {
    const auto cfg = cfg32();
    auto pg = init_params<float>(cfg, 17);
    auto img = Tensor::zeros({8, 8, 3});
    CHECK_THROWS_AS(embed_image(img, pg, cfg), std::invalid_argument);
}

TEST_CASE("embed_image is deterministic") {
    const auto cfg = cfg8();
    auto pg = init_params<float>(cfg, 29);
    Rng rng(4);
    auto img = Tensor::randn({8, 8, 3}, rng, 0.5f);
    auto a = embed_image(img, pg, cfg);
    auto b = embed_image(img, pg, cfg);
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
}

TEST_CASE("zero-init head adapters: Simple and Concept maps are identical") {
    const auto cfg = cfg8();
    auto pg = init_params<float>(cfg, 37);
    Rng rng(6);
    auto img = Tensor::randn({8, 8, 3}, rng, 0.4f);
    const auto toks = tokenize("red square", vocab());

    auto pc = model_forward(img, toks, RoutingMode::Concept, pg, cfg);
    auto ps = model_forward(img, toks, RoutingMode::Simple, pg, cfg);
    auto px = model_forward(img, toks, RoutingMode::Complex, pg, cfg);
    CHECK(std::memcmp(pc.data().data(), ps.data().data(), pc.data().size() * sizeof(float)) == 0);
    CHECK(std::memcmp(pc.data().data(), px.data().data(), pc.data().size() * sizeof(float)) == 0);
}

TEST_CASE("predict_branches matches the per-mode forwards") {
    const auto cfg = cfg8();
    auto pg = init_params<float>(cfg, 39);
    Rng rng(3);
    for (auto& [name, t] : pg.entries)
        if (is_adapter_param(name) && name.find(".up.") != std::string::npos)
            for (auto& v : t.data()) v = static_cast<float>(rng.next_gaussian() * 0.1);
    auto img = Tensor::randn({8, 8, 3}, rng, 0.4f);
    const auto simple = tokenize("select the small red square on the board", vocab());
    const auto complex_t = tokenize("which item can hold water for the camp?", vocab());
    const auto np = tokenize("red square", vocab());

    const BranchPrediction b = predict_branches(img, simple, complex_t, pg, cfg, np);
    auto same = [](const Tensor& a, const Tensor& x) {
        return std::memcmp(a.data().data(), x.data().data(), a.data().size() * sizeof(float)) == 0;
    };
    CHECK(same(b.p_simple, model_forward(img, simple, RoutingMode::Simple, pg, cfg)));
    CHECK(same(b.p_complex, model_forward(img, complex_t, RoutingMode::Complex, pg, cfg)));
    REQUIRE(b.p_concept.defined());
    CHECK(same(b.p_concept, model_forward(img, np, RoutingMode::Concept, pg, cfg)));
    for (float v : b.p_complex.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("mask prediction shape and range") {
    const auto cfg = cfg32();
    auto pg = init_params<float>(cfg, 43);
    auto rec = generate_record(5, {4, false});
    auto ex = materialize(rec);
    auto probs = model_forward(image_tensor(ex.image), tokenize(rec.concept_np, vocab()), RoutingMode::Concept, pg, cfg);
    CHECK(probs.shape() == std::vector<int>{32, 32});
    for (float v : probs.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    // nearest-neighbor upsample: every 4x4 block is constant
    for (int by = 0; by < 8; ++by)
        for (int bx = 0; bx < 8; ++bx)
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx)
                    CHECK(probs.at(by * 4 + dy, bx * 4 + dx) == probs.at(by * 4, bx * 4));
}

TEST_CASE("predict_mask composed with seg_loss passes a gradient check at 8x8") {
    using T = double;
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.vocab_size = vocab().size();
    auto pg = init_params<T>(cfg, 47);
    Rng rng(8);
    for (auto& [name, t] : pg.entries)
        if (name.find(".up.") != std::string::npos)
            for (auto& v : t.data()) v = rng.next_gaussian() * 0.05;
    pg.set_all_trainable();

    auto img = TensorT<T>::randn({8, 8, 3}, rng, 0.4);
    const auto toks = tokenize("segment the red square in the top left part of the board", vocab());
    auto gt = TensorT<T>::zeros({8, 8});
    for (int i = 0; i < 32; ++i) gt.data()[static_cast<size_t>(i)] = 1.0;

    std::function<TensorT<T>(ParameterGroupT<T>&)> f = [&](ParameterGroupT<T>& p) {
        return seg_loss(model_forward(img, toks, RoutingMode::Complex, p, cfg), gt);
    };
    GradCheckOptions opt;
    opt.eps = 1e-6;
    opt.max_coords_per_param = 3;
    CHECK(gradient_check_full(f, pg, opt).max_rel_error < 1e-4);
}
