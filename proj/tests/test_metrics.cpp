#include <catch2/catch_amalgamated.hpp>

#include "pis/metrics.hpp"
#include "pis/trainer.hpp"

using namespace pis;

namespace {

Mask mask_of(int h, int w, std::vector<uint8_t> v) {
    Mask m;
    m.h = h;
    m.w = w;
    m.v = std::move(v);
    return m;
}

// Brute-force per-pixel counting oracle, independent of the implementation.
double iou_oracle(const Mask& a, const Mask& b) {
    long inter = 0, uni = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        if (a.v[i] && b.v[i]) ++inter;
        if (a.v[i] || b.v[i]) ++uni;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace

TEST_CASE("binarize thresholds inclusively") {
    auto high = binarize(Tensor::filled({2, 2}, 0.6f));
    for (uint8_t v : high.v) CHECK(v == 1);
    auto low = binarize(Tensor::filled({2, 2}, 0.4f));
    for (uint8_t v : low.v) CHECK(v == 0);
    auto tie = binarize(Tensor::filled({2, 2}, 0.5f));
    for (uint8_t v : tie.v) CHECK(v == 1);
}

TEST_CASE("iou basics") {
    const Mask a = mask_of(2, 2, {1, 1, 0, 0});
    CHECK(iou(a, a) == 1.0);

    const Mask b = mask_of(2, 2, {0, 0, 1, 1});
    CHECK(iou(a, b) == 0.0);

    // 2x2 square vs the same square shifted one column on a 2x3 canvas
    const Mask sq = mask_of(2, 3, {1, 1, 0, 1, 1, 0});
    const Mask sh = mask_of(2, 3, {0, 1, 1, 0, 1, 1});
    CHECK(iou(sq, sh) == Catch::Approx(1.0 / 3.0));

    const Mask empty = mask_of(2, 2, {0, 0, 0, 0});
    CHECK(iou(empty, empty) == 1.0);
    CHECK(iou(a, empty) == 0.0);

    CHECK_THROWS_AS(iou(a, mask_of(2, 3, {0, 0, 0, 0, 0, 0})), std::invalid_argument);

    CHECK(iou(a, b) == iou(b, a));
}

TEST_CASE("giou and p@50") {
    CHECK(giou_metric({1.0, 0.0}) == 0.5);
    CHECK(giou_metric({0.7}) == 0.7);
    CHECK(giou_metric({1.0 / 3, 1.0 / 3, 1.0 / 3}) == Catch::Approx(1.0 / 3));
    CHECK_THROWS_AS(giou_metric({}), std::invalid_argument);

    CHECK(p_at_50({0.6, 0.4, 0.5}) == Catch::Approx(66.6667).margin(0.01));
    CHECK(p_at_50({1.0, 1.0}) == 100.0);
    CHECK(p_at_50({0.0, 0.0}) == 0.0);
    CHECK_THROWS_AS(p_at_50({}), std::invalid_argument);
}

TEST_CASE("metrics match the brute-force oracle on random masks") {
    Rng rng(31);
    std::vector<double> ours, oracle;
    for (int i = 0; i < 100; ++i) {
        const int h = rng.next_int(1, 8), w = rng.next_int(1, 8);
        Mask a, b;
        a.h = b.h = h;
        a.w = b.w = w;
        for (int k = 0; k < h * w; ++k) {
            a.v.push_back(rng.next_bool(0.4) ? 1 : 0);
            b.v.push_back(rng.next_bool(0.4) ? 1 : 0);
        }
        ours.push_back(iou(a, b));
        oracle.push_back(iou_oracle(a, b));
        CHECK(ours.back() == oracle.back());
    }
    CHECK(giou_metric(ours) == giou_metric(oracle));
    CHECK(p_at_50(ours) == p_at_50(oracle));
}

TEST_CASE("evaluate with a perfect and an empty predictor") {
    const auto examples = make_examples(11, 6, {4, false});

    MaskPredictor perfect = [&](const LoadedExample& ex, const Instruction& ins) {
        const Mask& gt = ins.level == Level::Concept ? ex.concept_mask : ex.target_mask;
        auto t = Tensor::zeros({gt.h, gt.w});
        for (size_t i = 0; i < gt.v.size(); ++i) t.data()[i] = gt.v[i] ? 1.0f : 0.0f;
        return t;
    };
    for (Level level : {Level::Concept, Level::Simple, Level::Complex}) {
        const EvalResult r = evaluate(examples, level, perfect);
        CHECK(r.giou == 1.0);
        CHECK(r.p_at_50 == 100.0);
        CHECK(r.n_samples == (level == Level::Concept ? 6 : 12));
    }

    MaskPredictor empty = [](const LoadedExample&, const Instruction&) { return Tensor::zeros({32, 32}); };
    const EvalResult r = evaluate(examples, Level::Simple, empty);
    CHECK(r.giou == 0.0);
    CHECK(r.p_at_50 == 0.0);

    CHECK_THROWS_AS(evaluate({}, Level::Simple, empty), std::invalid_argument);
}

TEST_CASE("evaluate_model is deterministic") {
    const Vocab vocab = Vocab::build(grammar_words());
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    auto pg = init_params<float>(cfg, 5);
    const auto examples = make_examples(13, 3, {4, false});
    const EvalResult a = evaluate_model(pg, cfg, vocab, examples, Level::Simple);
    const EvalResult b = evaluate_model(pg, cfg, vocab, examples, Level::Simple);
    CHECK(a.giou == b.giou);
    CHECK(a.p_at_50 == b.p_at_50);
}

TEST_CASE("np baseline collapses complex instructions to the concept branch") {
    const Vocab vocab = Vocab::build(grammar_words());
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    auto pg = init_params<float>(cfg, 9);
    const auto examples = make_examples(17, 3, {4, false});

    // with zero-init adapters the baseline and the model agree bitwise at
    // concept level (identity NP extraction, same concept routing)
    const EvalResult m = evaluate_model(pg, cfg, vocab, examples, Level::Concept);
    const EvalResult b = evaluate_np_baseline(pg, cfg, vocab, examples, Level::Concept);
    CHECK(m.giou == b.giou);
    CHECK(m.p_at_50 == b.p_at_50);
}

TEST_CASE("eval csv layout") {
    EvalRow row;
    row.model_tag = "model";
    row.result.level = Level::Simple;
    row.result.giou = 0.54;
    row.result.p_at_50 = 59.6;
    row.result.n_samples = 10;
    const auto path = (std::filesystem::temp_directory_path() / "pis_eval_test.csv").string();
    write_eval_csv({row}, path);
    std::ifstream f(path);
    std::string header, line;
    std::getline(f, header);
    std::getline(f, line);
    CHECK(header == "level,n,giou,p_at_50,model_tag");
    CHECK(line == "simple,10,54.0,59.6,model");
    std::remove(path.c_str());
}
