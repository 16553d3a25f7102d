#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "rsdpe/common.hpp"

namespace rsdpe {

// Joint default indicator for up to 20 stocks. Bit j set means stock j has
// defaulted. Stock indices are 0-based in code; the bitstring form puts
// stock 0 in the leftmost character.
struct DefaultState {
    std::uint32_t mask = 0;
    int n_stocks = 0;

    DefaultState() = default;
    DefaultState(std::uint32_t m, int n) : mask(m), n_stocks(n) {
        require(n >= 1 && n <= 20, "invalid_state", "stock count must be in [1, 20]");
        require(m < (1u << n), "invalid_state", "default mask has bits beyond stock count");
    }

    bool defaulted(int j) const {
        check_index(j);
        return (mask >> j) & 1u;
    }

    int cardinality() const { return std::popcount(mask); }

    bool all_defaulted() const { return mask + 1u == (1u << n_stocks); }

    std::string bitstring() const {
        std::string s(static_cast<size_t>(n_stocks), '0');
        for (int j = 0; j < n_stocks; ++j)
            if ((mask >> j) & 1u) s[static_cast<size_t>(j)] = '1';
        return s;
    }

    static DefaultState from_bitstring(const std::string& s) {
        require(!s.empty() && s.size() <= 20, "invalid_state",
                "bitstring \"" + s + "\" must have between 1 and 20 characters");
        std::uint32_t m = 0;
        for (size_t j = 0; j < s.size(); ++j) {
            require(s[j] == '0' || s[j] == '1', "invalid_state",
                    "bitstring \"" + s + "\" contains a character other than 0/1");
            if (s[j] == '1') m |= 1u << j;
        }
        return DefaultState(m, static_cast<int>(s.size()));
    }

    std::vector<int> survivors() const {
        std::vector<int> out;
        for (int j = 0; j < n_stocks; ++j)
            if (!((mask >> j) & 1u)) out.push_back(j);
        return out;
    }

    friend bool operator==(const DefaultState& a, const DefaultState& b) {
        return a.mask == b.mask && a.n_stocks == b.n_stocks;
    }

    void check_index(int j) const {
        if (j < 0 || j >= n_stocks)
            fail("index_out_of_range", "stock index " + std::to_string(j) +
                                           " outside [0, " + std::to_string(n_stocks - 1) + "]");
    }
};

// Flips the default bit of stock j. Involution: neighbor(neighbor(z, j), j) == z.
inline DefaultState neighbor(const DefaultState& z, int j) {
    z.check_index(j);
    DefaultState out = z;
    out.mask ^= 1u << j;
    return out;
}

// All default states grouped by number of defaults: result[k] holds the
// C(N, k) states with exactly k defaults, each group in ascending mask order.
// The backward recursion walks k = N down to 0.
inline std::vector<std::vector<DefaultState>> states_by_cardinality(int n_stocks) {
    require(n_stocks >= 1 && n_stocks <= 20, "invalid_state", "stock count must be in [1, 20]");
    std::vector<std::vector<DefaultState>> layers(static_cast<size_t>(n_stocks) + 1);
    for (std::uint32_t m = 0; m < (1u << n_stocks); ++m) {
        DefaultState z(m, n_stocks);
        layers[static_cast<size_t>(z.cardinality())].push_back(z);
    }
    return layers;
}

}  // namespace rsdpe
