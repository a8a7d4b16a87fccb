#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "optstrat/rng.hpp"

using namespace optstrat::rng;

TEST_CASE("xoshiro stream is deterministic for a given seed") {
    Xoshiro256ss a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next();
        all_equal = all_equal && (va == b.next());
        any_diff = any_diff || (va != c.next());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform01 stays in [0,1) and fills the range") {
    Xoshiro256ss gen(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = uniform01(gen);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("uniform_below covers every residue with near-uniform frequency") {
    Xoshiro256ss gen(8);
    const int bound = 7;
    std::vector<int> counts(bound, 0);
    const int reps = 70000;
    for (int i = 0; i < reps; ++i)
        counts[static_cast<std::size_t>(uniform_below(gen, bound))] += 1;
    const double expect = static_cast<double>(reps) / bound;
    for (int v = 0; v < bound; ++v)
        CHECK(std::abs(counts[static_cast<std::size_t>(v)] - expect) <
              5.0 * std::sqrt(expect));
}

TEST_CASE("normal has mean 0 and variance 1 within Monte Carlo bands") {
    Xoshiro256ss gen(9);
    const int reps = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < reps; ++i) {
        const double z = normal(gen);
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / reps;
    const double var = sumsq / reps - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(reps)));
    CHECK(std::abs(var - 1.0) < 6.0 / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("substream seeds decorrelate adjacent streams") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t master : {0ull, 1ull, 99ull})
        for (std::uint64_t stream = 0; stream < 100; ++stream)
            seeds.insert(substream_seed(master, stream));
    CHECK(seeds.size() == 300);  // no collisions across masters/streams
}
