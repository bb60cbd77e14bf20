#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "pis/checkpoint.hpp"
#include "pis/metrics.hpp"
#include "pis/trainer.hpp"

using namespace pis;

namespace {

struct Fixture {
    Vocab vocab = Vocab::build(grammar_words());
    ModelConfig cfg;
    std::vector<LoadedExample> data;

    Fixture() {
        cfg.vocab_size = vocab.size();
        data = make_examples(77, 4, {4, false});
    }
};

std::map<std::string, uint64_t> hash_all(const ParameterGroup& pg) {
    std::map<std::string, uint64_t> h;
    for (const auto& [name, t] : pg.entries) h[name] = parameter_hash(pg, name);
    return h;
}

}  // namespace

TEST_CASE("trainable sets per stage") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 1);

    const auto s0 = trainable_set(0, pg);
    const auto s1 = trainable_set(1, pg);
    const auto s2 = trainable_set(2, pg);
    const auto s3 = trainable_set(3, pg);

    for (const auto& n : s0) CHECK_FALSE(is_adapter_param(n));
    CHECK(s0.count("vision.patch.w") == 1);
    CHECK(s0.count("text.emb") == 1);
    CHECK(s0.count("head.logit.scale") == 1);

    for (const auto& n : s1) {
        CHECK(n.rfind("vision.", 0) != 0);
        CHECK((n.rfind("text.S.", 0) == 0 || n.rfind("head.S.", 0) == 0));
    }
    CHECK(s1.count("text.S.0.down.w") == 1);
    CHECK(s1.count("head.S.up.w") == 1);

    for (const auto& n : s2) CHECK((n.rfind("text.C.", 0) == 0 || n.rfind("head.C.", 0) == 0));

    // the alternate stage-2 reading also trains S
    const auto s2b = trainable_set(2, pg, /*stage2_train_s=*/true);
    CHECK(s2b.count("text.S.0.down.w") == 1);
    CHECK(s2b.count("text.C.0.down.w") == 1);

    CHECK(s3.count("text.S.0.down.w") == 1);
    CHECK(s3.count("text.C.0.down.w") == 1);
    CHECK(s3.count("head.S.down.w") == 1);
    CHECK(s3.count("head.C.down.w") == 1);
    for (const auto& n : s3) CHECK(is_adapter_param(n));
}

TEST_CASE("stage-2 start inherits C from trained S bitwise") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 2);
    Rng rng(3);
    for (auto& [name, t] : pg.entries)
        if (name.rfind("text.S.", 0) == 0 || name.rfind("head.S.", 0) == 0)
            for (auto& v : t.data()) v = static_cast<float>(rng.next_gaussian());

    inherit_c_from_s(pg);
    for (const auto& [name, t] : pg.entries) {
        if (name.rfind("text.S.", 0) != 0 && name.rfind("head.S.", 0) != 0) continue;
        const std::string cname = name.substr(0, 5) == "text." ? "text.C." + name.substr(7) : "head.C." + name.substr(7);
        const auto& c = pg.at(cname);
        CHECK(std::memcmp(c.data().data(), t.data().data(), t.data().size() * sizeof(float)) == 0);
    }
}

TEST_CASE("stage-1 steps leave C-adapters and the backbone untouched") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 4);
    const auto before = hash_all(pg);

    TrainLog log;
    StageConfig sc;
    sc.stage = 1;
    sc.steps = 3;
    sc.batch_size = 2;
    sc.seed = 11;
    run_stage(sc, fx.data, pg, fx.cfg, fx.vocab, log);

    bool s_changed = false;
    for (const auto& [name, t] : pg.entries) {
        const uint64_t now = parameter_hash(pg, name);
        const bool s_adapter = name.rfind("text.S.", 0) == 0 || name.rfind("head.S.", 0) == 0;
        if (s_adapter) {
            if (now != before.at(name)) s_changed = true;
        } else {
            CHECK(now == before.at(name));  // frozen bitwise
        }
    }
    CHECK(s_changed);
}

TEST_CASE("stage-3 breakdown satisfies the objective identity") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 6);
    pg.set_trainable(trainable_set(3, pg));
    Adam opt(pg, 1e-3f);
    Rng pick(9);
    StageConfig sc;
    sc.stage = 3;
    std::vector<const LoadedExample*> batch = {&fx.data[0], &fx.data[1]};
    const LossBreakdown b = train_step(batch, sc, pg, fx.cfg, fx.vocab, opt, pick);
    CHECK(b.l_train == Catch::Approx(b.l_seg + b.l_align + b.l_hard).epsilon(1e-12));
    CHECK(b.l_seg > 0.0);

    // ablation flags zero the corresponding columns
    StageConfig sc2 = sc;
    sc2.loss_flags = {false, false};
    const LossBreakdown b2 = train_step(batch, sc2, pg, fx.cfg, fx.vocab, opt, pick);
    CHECK(b2.l_align == 0.0);
    CHECK(b2.l_hard == 0.0);
    CHECK(b2.l_train == b2.l_seg);
}

TEST_CASE("training is deterministic given the seed") {
    Fixture fx;
    auto run_once = [&]() {
        auto pg = init_params<float>(fx.cfg, 21);
        TrainLog log;
        StageConfig sc;
        sc.stage = 0;
        sc.steps = 4;
        sc.batch_size = 2;
        sc.seed = 31;
        run_stage(sc, fx.data, pg, fx.cfg, fx.vocab, log);
        return std::make_pair(checkpoint_hash(pg), log.rows().back().parts.l_seg);
    };
    const auto a = run_once();
    const auto b = run_once();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("batch level mismatch raises") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 8);
    pg.set_trainable(trainable_set(1, pg));
    Adam opt(pg, 1e-3f);
    Rng pick(1);
    // strip simple positives from a record copy
    LoadedExample broken = fx.data[0];
    std::vector<Instruction> complex_only;
    for (const auto& ins : broken.record.positives)
        if (ins.level == Level::Complex) complex_only.push_back(ins);
    broken.record.positives = complex_only;
    StageConfig sc;
    sc.stage = 1;
    std::vector<const LoadedExample*> batch = {&broken};
    CHECK_THROWS_AS(train_step(batch, sc, pg, fx.cfg, fx.vocab, opt, pick), std::invalid_argument);
}

TEST_CASE("curriculum chain: freeze hashes and skip-stage2 inheritance") {
    Fixture fx;
    std::map<int, StageConfig> cfgs;
    for (int s = 0; s <= 3; ++s) {
        StageConfig c;
        c.stage = s;
        c.steps = 2;
        c.batch_size = 2;
        c.seed = 100 + static_cast<uint64_t>(s);
        cfgs[s] = c;
    }

    auto pg = init_params<float>(fx.cfg, 42);
    TrainLog log;
    auto snaps = run_curriculum(cfgs, fx.data, pg, fx.cfg, fx.vocab, log);
    REQUIRE(snaps.size() == 4);

    // frozen names identical across the stage-1..3 chain
    for (const auto& [name, t] : snaps.at(1).entries) {
        if (is_adapter_param(name)) continue;
        CHECK(parameter_hash(snaps.at(1), name) == parameter_hash(snaps.at(0), name));
        CHECK(parameter_hash(snaps.at(2), name) == parameter_hash(snaps.at(0), name));
        CHECK(parameter_hash(snaps.at(3), name) == parameter_hash(snaps.at(0), name));
    }
    // S frozen through stage 2 (default reading)
    for (const auto& [name, t] : snaps.at(2).entries)
        if (name.rfind("text.S.", 0) == 0 || name.rfind("head.S.", 0) == 0)
            CHECK(parameter_hash(snaps.at(2), name) == parameter_hash(snaps.at(1), name));

    // skip-stage2: C equals trained S at stage-3 start
    auto pg2 = init_params<float>(fx.cfg, 42);
    TrainLog log2;
    CurriculumOptions opts;
    opts.skip_stage2 = true;
    std::map<int, StageConfig> cfgs2 = cfgs;
    cfgs2[3].steps = 0;  // stop right at the start of stage 3
    auto snaps2 = run_curriculum(cfgs2, fx.data, pg2, fx.cfg, fx.vocab, log2, opts);
    CHECK(snaps2.count(2) == 0);
    for (const auto& [name, t] : snaps2.at(3).entries) {
        if (name.rfind("text.C.", 0) != 0 && name.rfind("head.C.", 0) != 0) continue;
        const std::string sname =
            name.substr(0, 5) == "text." ? "text.S." + name.substr(7) : "head.S." + name.substr(7);
        CHECK(parameter_hash(snaps2.at(3), name) ==
              fnv1a(snaps2.at(3).at(sname).data().data(), t.data().size() * sizeof(float), fnv1a(name)));
    }
}

TEST_CASE("stage-0 loss trends down on a small overfit set") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 55);
    TrainLog log;
    StageConfig sc;
    sc.stage = 0;
    sc.steps = 40;
    sc.batch_size = 2;
    sc.seed = 7;
    run_stage(sc, fx.data, pg, fx.cfg, fx.vocab, log);

    const auto& rows = log.rows();
    double first_q = 0, last_q = 0;
    const size_t q = rows.size() / 4;
    for (size_t i = 0; i < q; ++i) first_q += rows[i].parts.l_seg;
    for (size_t i = rows.size() - q; i < rows.size(); ++i) last_q += rows[i].parts.l_seg;
    CHECK(last_q / q < first_q / q);
}

TEST_CASE("pooled text embedding is word-order sensitive after stage-1 training") {
    Fixture fx;
    auto pg = init_params<float>(fx.cfg, 60);
    TrainLog log;
    StageConfig s0;
    s0.stage = 0;
    s0.steps = 10;
    s0.batch_size = 2;
    s0.seed = 1;
    run_stage(s0, fx.data, pg, fx.cfg, fx.vocab, log);
    StageConfig s1 = s0;
    s1.stage = 1;
    run_stage(s1, fx.data, pg, fx.cfg, fx.vocab, log);

    auto a = text_encode(tokenize("red square", fx.vocab), RoutingMode::Simple, pg, fx.cfg).pooled;
    auto b = text_encode(tokenize("square red", fx.vocab), RoutingMode::Simple, pg, fx.cfg).pooled;
    double dist = 0;
    for (int i = 0; i < fx.cfg.model_dim; ++i) dist += std::abs(a.at(i) - b.at(i));
    CHECK(dist > 1e-4);
}

TEST_CASE("train log CSV carries the breakdown columns") {
    Fixture fx;
    const auto path = (std::filesystem::temp_directory_path() / "pis_trainlog_test.csv").string();
    {
        TrainLog log(path);
        auto pg = init_params<float>(fx.cfg, 70);
        StageConfig sc;
        sc.stage = 0;
        sc.steps = 2;
        sc.batch_size = 2;
        sc.seed = 2;
        run_stage(sc, fx.data, pg, fx.cfg, fx.vocab, log);
    }
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,stage,l_seg,l_align,l_hard,l_train");
    int lines = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 2);
    std::remove(path.c_str());
}
