#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "card/checkpoint.hpp"
#include "card/error.hpp"
#include "card/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using card::Tensor;

TEST_SUITE("checkpoint") {

TEST_CASE("round-trip preserves names, shapes, and bits") {
    testutil::TempDir dir("ckpt");
    card::Rng rng(31);
    Tensor a = testutil::random_tensor({4, 7}, rng, -10.0, 10.0);
    Tensor b = testutil::random_tensor({9}, rng);
    Tensor c = Tensor::scalar(-0.0); // signed zero should survive
    Tensor d = testutil::random_tensor({2, 3}, rng);
    d[0] = 1e-308; // subnormal-adjacent extremes
    d[1] = 1.7976931348623157e308;

    const std::string path = dir.file("net.ckpt");
    card::save_checkpoint(path, {{"layer.weight", &a}, {"layer.bias", &b}, {"s", &c}, {"d", &d}});

    auto loaded = card::load_checkpoint(path);
    REQUIRE(loaded.size() == 4);
    REQUIRE(loaded.count("layer.weight") == 1);
    CHECK(loaded["layer.weight"].shape() == a.shape());
    CHECK(testutil::max_abs_diff(loaded["layer.weight"], a) == 0.0);
    CHECK(loaded["layer.bias"].shape() == b.shape());
    CHECK(testutil::max_abs_diff(loaded["layer.bias"], b) == 0.0);
    CHECK(loaded["d"][0] == d[0]);
    CHECK(loaded["d"][1] == d[1]);
    CHECK(std::signbit(loaded["s"][0]));

    // restore_into copies by name
    Tensor a2({4, 7}), b2({9});
    card::restore_into(loaded, {{"layer.weight", &a2}, {"layer.bias", &b2}});
    CHECK(testutil::max_abs_diff(a2, a) == 0.0);
    CHECK(testutil::max_abs_diff(b2, b) == 0.0);
}

TEST_CASE("missing file and malformed container raise data errors") {
    testutil::TempDir dir("ckpt");
    CHECK_THROWS_AS(card::load_checkpoint(dir.file("absent.ckpt")), card::DataError);

    const std::string junk = dir.file("junk.ckpt");
    testutil::write_text_file(junk, "definitely not a checkpoint");
    CHECK_THROWS_AS(card::load_checkpoint(junk), card::DataError);

    // truncated file: valid header, cut payload
    card::Rng rng(32);
    Tensor a = testutil::random_tensor({64, 64}, rng);
    const std::string full = dir.file("full.ckpt");
    card::save_checkpoint(full, {{"w", &a}});
    std::ifstream in(full, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string cut = dir.file("cut.ckpt");
    testutil::write_text_file(cut, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(card::load_checkpoint(cut), card::DataError);
}

TEST_CASE("restore_into names the offending entry") {
    testutil::TempDir dir("ckpt");
    card::Rng rng(33);
    Tensor a = testutil::random_tensor({3, 3}, rng);
    const std::string path = dir.file("net.ckpt");
    card::save_checkpoint(path, {{"w", &a}});
    auto loaded = card::load_checkpoint(path);

    Tensor missing_dest({3, 3});
    CHECK_THROWS_WITH_AS(card::restore_into(loaded, {{"nonexistent", &missing_dest}}),
                         doctest::Contains("nonexistent"), card::DataError);

    Tensor wrong_shape({2, 2});
    CHECK_THROWS_WITH_AS(card::restore_into(loaded, {{"w", &wrong_shape}}),
                         doctest::Contains("w"), card::DataError);
}

TEST_CASE("save to an unwritable path raises a data error") {
    Tensor a({2});
    CHECK_THROWS_AS(card::save_checkpoint("/nonexistent-dir/x.ckpt", {{"a", &a}}),
                    card::DataError);
}

} // TEST_SUITE
