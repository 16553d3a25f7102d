#include <catch2/catch_amalgamated.hpp>

#include <rsdpe/default_state.hpp>

using rsdpe::DefaultState;
using rsdpe::Error;

TEST_CASE("bitstring round trip") {
    for (int n = 1; n <= 6; ++n) {
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            DefaultState z(mask, n);
            DefaultState back = DefaultState::from_bitstring(z.bitstring());
            CHECK(back.mask == mask);
            CHECK(back.n_stocks == n);
        }
    }
    CHECK(DefaultState::from_bitstring("010").bitstring() == "010");
    CHECK(DefaultState::from_bitstring("010").defaulted(1));
    CHECK_FALSE(DefaultState::from_bitstring("010").defaulted(0));
    CHECK_FALSE(DefaultState::from_bitstring("010").defaulted(2));
}

TEST_CASE("leftmost bitstring character is stock 1") {
    DefaultState z = DefaultState::from_bitstring("100");
    CHECK(z.defaulted(0));
    CHECK(z.cardinality() == 1);
    CHECK(z.survivors() == std::vector<int>{1, 2});
}

TEST_CASE("cardinality counts defaults") {
    CHECK(DefaultState(0, 4).cardinality() == 0);
    CHECK(DefaultState(0b1111, 4).cardinality() == 4);
    CHECK(DefaultState(0b1111, 4).all_defaulted());
    CHECK(DefaultState(0b0101, 4).cardinality() == 2);
}

TEST_CASE("neighbor is an involution and changes cardinality by one") {
    for (std::uint32_t mask = 0; mask < (1u << 4); ++mask) {
        DefaultState z(mask, 4);
        for (int j = 0; j < 4; ++j) {
            DefaultState w = neighbor(z, j);
            CHECK(neighbor(w, j).mask == z.mask);
            const int dk = w.cardinality() - z.cardinality();
            CHECK((dk == 1 || dk == -1));
            CHECK(w.defaulted(j) != z.defaulted(j));
        }
    }
}

TEST_CASE("states_by_cardinality enumerates every state exactly once") {
    const int n = 5;
    auto layers = rsdpe::states_by_cardinality(n);
    REQUIRE(layers.size() == static_cast<size_t>(n) + 1);
    std::vector<bool> seen(1u << n, false);
    size_t total = 0;
    for (size_t k = 0; k < layers.size(); ++k) {
        for (const DefaultState& z : layers[k]) {
            CHECK(z.cardinality() == static_cast<int>(k));
            CHECK_FALSE(seen[z.mask]);
            seen[z.mask] = true;
            ++total;
        }
        // ascending mask order inside a layer
        for (size_t a = 1; a < layers[k].size(); ++a)
            CHECK(layers[k][a - 1].mask < layers[k][a].mask);
    }
    CHECK(total == (1u << n));
}

TEST_CASE("invalid construction is rejected") {
    CHECK_THROWS_AS(DefaultState(0, 0), Error);
    CHECK_THROWS_AS(DefaultState(0, 21), Error);
    CHECK_THROWS_AS(DefaultState(1u << 3, 3), Error);
    CHECK_THROWS_AS(DefaultState::from_bitstring("01x"), Error);
    CHECK_THROWS_AS(DefaultState::from_bitstring(""), Error);
}

TEST_CASE("stock index bounds are enforced") {
    DefaultState z(0, 3);
    CHECK_THROWS_AS(z.defaulted(3), Error);
    CHECK_THROWS_AS(z.defaulted(-1), Error);
    CHECK_THROWS_AS(neighbor(z, 3), Error);
}
