#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "pis/checkpoint.hpp"
#include "pis/rng.hpp"

using namespace pis;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(77);
    ParameterGroup pg;
    pg.add("text.emb", Tensor::randn({7, 5}, rng, 0.3f));
    pg.add("head.logit.scale", Tensor::from({1}, {0.125f}));
    pg.add("vision.pos", Tensor::randn({4, 5}, rng, 1.0f));

    const auto path = temp_path("pis_ckpt_test.ckpt");
    save_checkpoint(pg, path);
    ParameterGroup back = load_checkpoint(path);

    REQUIRE(back.entries.size() == pg.entries.size());
    for (const auto& [name, t] : pg.entries) {
        REQUIRE(back.has(name));
        const auto& o = back.at(name);
        CHECK(o.shape() == t.shape());
        CHECK(std::memcmp(o.data().data(), t.data().data(), t.data().size() * sizeof(float)) == 0);
    }
    CHECK(checkpoint_hash(pg) == checkpoint_hash(back));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint serialization is deterministic") {
    Rng rng(3);
    ParameterGroup pg;
    pg.add("a.w", Tensor::randn({3, 3}, rng, 1.0f));
    pg.add("b.w", Tensor::randn({2}, rng, 1.0f));
    CHECK(checkpoint_serialize(pg) == checkpoint_serialize(pg));
}

TEST_CASE("version header is enforced") {
    std::string bytes = checkpoint_serialize(ParameterGroup{});
    CHECK(bytes.rfind("pis-ckpt-v1\n", 0) == 0);

    std::string wrong = bytes;
    wrong[9] = '2';  // pis-ckpt-v2
    CHECK_THROWS_WITH(checkpoint_deserialize(wrong), Catch::Matchers::ContainsSubstring("pis-ckpt-v1"));

    CHECK_THROWS_AS(checkpoint_deserialize("garbage"), std::runtime_error);
}

TEST_CASE("truncated files are rejected") {
    Rng rng(5);
    ParameterGroup pg;
    pg.add("w", Tensor::randn({4, 4}, rng, 1.0f));
    std::string bytes = checkpoint_serialize(pg);
    bytes.resize(bytes.size() - 7);
    CHECK_THROWS_AS(checkpoint_deserialize(bytes), std::runtime_error);
}

TEST_CASE("parameter payload hash tracks content") {
    ParameterGroup pg;
    pg.add("w", Tensor::from({2}, {1.0f, 2.0f}));
    const uint64_t h0 = parameter_hash(pg, "w");
    pg.at("w").data()[0] = 1.5f;
    CHECK(parameter_hash(pg, "w") != h0);
    pg.at("w").data()[0] = 1.0f;
    CHECK(parameter_hash(pg, "w") == h0);
}
