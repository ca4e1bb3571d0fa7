#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tg/rng.hpp"
#include "tg/serialize.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_path(const char* name) {
    auto dir = fs::temp_directory_path() / "tg_serialize_test";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("tensor container round-trips random contents") {
    tg::Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        tg::TensorFile tf;
        tf.set_meta("kind", "test");
        tf.set_meta("trial", std::to_string(trial));
        std::vector<float> f(1 + rng.uniform_int(64));
        for (auto& v : f) v = static_cast<float>(rng.normal());
        std::vector<double> d(1 + rng.uniform_int(16));
        for (auto& v : d) v = rng.normal();
        std::vector<uint32_t> u(1 + rng.uniform_int(32));
        for (auto& v : u) v = static_cast<uint32_t>(rng.next_u64());
        std::vector<uint64_t> s{rng.next_u64(), rng.next_u64()};
        tf.add_f32("weights", {static_cast<int>(f.size())}, f);
        tf.add_f64("precise", {static_cast<int>(d.size())}, d);
        tf.add_u32("tokens", {static_cast<int>(u.size())}, u);
        tf.add_u64("state", {2}, s);

        const auto path = temp_path("roundtrip.bin");
        tf.save(path.string());
        auto back = tg::TensorFile::load(path.string());
        CHECK(back.get_meta("kind") == "test");
        CHECK(back.get_meta("trial") == std::to_string(trial));
        CHECK(back.get_f32("weights") == f);
        CHECK(back.get_f64("precise") == d);
        CHECK(back.get_u32("tokens") == u);
        CHECK(back.get_u64("state") == s);
        CHECK(back.get("weights").dims == std::vector<int>{static_cast<int>(f.size())});
    }
}

TEST_CASE("corrupted checkpoint fails the checksum") {
    tg::TensorFile tf;
    tf.add_f32("w", {4}, {1, 2, 3, 4});
    const auto path = temp_path("corrupt.bin");
    tf.save(path.string());

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    char byte = 0x5A;
    f.write(&byte, 1);
    f.close();

    CHECK_THROWS_WITH_AS(tg::TensorFile::load(path.string()), doctest::Contains("checksum"),
                         tg::CheckpointError);
}

TEST_CASE("missing records and wrong files raise checkpoint errors") {
    tg::TensorFile tf;
    tf.add_f32("w", {1}, {0.5f});
    const auto path = temp_path("lookup.bin");
    tf.save(path.string());
    auto back = tg::TensorFile::load(path.string());
    CHECK_THROWS_AS(back.get("nope"), tg::CheckpointError);
    CHECK_THROWS_AS(back.get_u32("w"), tg::CheckpointError);

    const auto junk = temp_path("junk.bin");
    std::ofstream j(junk, std::ios::binary);
    j << "not a container at all";
    j.close();
    CHECK_THROWS_AS(tg::TensorFile::load(junk.string()), tg::CheckpointError);
    CHECK_THROWS_AS(tg::TensorFile::load("/definitely/not/here.bin"), tg::CheckpointError);
}
