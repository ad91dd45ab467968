#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "nucomplete/dataio.hpp"
#include "test_util.hpp"

using namespace nucomplete;

namespace {

// Reference SplitMix64 written from the published constants, independent of the library.
std::uint64_t ref_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t ref_draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t i) {
    const std::uint64_t key = ref_mix(seed ^ ref_mix(stream + 0x632BE59BD9B4E019ULL));
    return ref_mix(key + (i + 1) * 0x9E3779B97F4A7C15ULL);
}

ObservationSet obs_of(std::size_t rows, std::size_t cols, std::vector<Sample> s) {
    return ObservationSet{rows, cols, std::move(s)};
}

} // namespace

TEST(CounterRng, MatchesReferenceSplitMix) {
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL}) {
        for (std::uint64_t stream : {0ULL, 5ULL, 10ULL}) {
            CounterRng rng(seed, stream);
            for (std::uint64_t i = 0; i < 100; ++i) ASSERT_EQ(rng.next(), ref_draw(seed, stream, i));
        }
    }
}

TEST(CounterRng, SplitMixFinalizerKnownValue) {
    // SplitMix64 with state 0: first output is mix(0x9E3779B97F4A7C15).
    EXPECT_EQ(CounterRng::mix(0x9E3779B97F4A7C15ULL), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(ref_mix(0x9E3779B97F4A7C15ULL), 0xE220A8397B1DCDAFULL);
}

TEST(CounterRng, DerivedDrawsFollowTheContract) {
    CounterRng rng(7, 3);
    const double u = rng.uniform();
    EXPECT_EQ(u, static_cast<double>(ref_draw(7, 3, 0) >> 11) * 0x1.0p-53);
    const std::size_t k = rng.index(10);
    EXPECT_EQ(k, static_cast<std::size_t>((static_cast<unsigned __int128>(ref_draw(7, 3, 1)) * 10) >> 64));
}

TEST(CounterRng, StreamsAreIndependentOfConsumption) {
    CounterRng a(5, streams::noise);
    CounterRng other(5, streams::positions);
    for (int i = 0; i < 1000; ++i) other.next();
    CounterRng b(5, streams::noise);
    EXPECT_EQ(a.next(), b.next());
    EXPECT_NE(CounterRng(5, streams::noise).next(), CounterRng(5, streams::positions).next());
}

TEST(CounterRng, NormalMoments) {
    CounterRng rng(8);
    double s = 0.0, ss = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        ss += z * z;
    }
    // 5 sigma bands for the mean and the second moment.
    EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(ss / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Synthetic, AllOnesFactorsGiveAllOnes) {
    const std::size_t d = 6;
    const DenseMatrix ones = DenseMatrix::Ones(d, 1);
    const SyntheticData s = generate_from_factors(ones, ones, ones, ones, 50, 0.0, 1);
    EXPECT_EQ(s.b_star, DenseMatrix::Ones(d, d));
    EXPECT_LE((s.p_star.array() - 1.0 / 36).abs().maxCoeff(), 1e-17);
    for (const auto& o : s.obs.samples) EXPECT_EQ(o.value, 1.0);
}

TEST(Synthetic, PStarPositiveAndNormalized) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticSpec spec;
        spec.seed = seed;
        const SyntheticData s = generate_synthetic(spec);
        EXPECT_EQ(s.b_star.rows(), 100);
        EXPECT_GT(s.p_star.minCoeff(), 0.0);
        EXPECT_NEAR(s.p_star.sum(), 1.0, 1e-12);
        EXPECT_EQ(s.obs.size(), 1000u);
    }
}

TEST(Synthetic, RankOfBStarAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SyntheticSpec spec;
        spec.d = 50;
        spec.rank_b = 5;
        spec.rank_p = 5;
        spec.seed = seed;
        EXPECT_EQ(testutil::rank_eig(generate_synthetic(spec).b_star, 1e-9), 5u) << seed;
    }
}

TEST(Synthetic, DeterministicAndFactorsIndependentOfN) {
    SyntheticSpec spec;
    spec.d = 20;
    spec.rank_b = spec.rank_p = 3;
    spec.seed = 4;
    const SyntheticData a = generate_synthetic(spec), b = generate_synthetic(spec);
    EXPECT_EQ(a.b_star, b.b_star);
    EXPECT_EQ(a.p_star, b.p_star);
    EXPECT_EQ(a.obs.samples, b.obs.samples);
    spec.n = 5000;
    const SyntheticData c = generate_synthetic(spec);
    EXPECT_EQ(a.b_star, c.b_star);
    EXPECT_EQ(a.p_star, c.p_star);
    spec.seed = 5;
    EXPECT_NE(a.b_star, generate_synthetic(spec).b_star);
}

TEST(Synthetic, SpecValidation) {
    SyntheticSpec spec;
    spec.rank_b = 101;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);
    spec.rank_b = 5;
    spec.noise_sd = -1.0;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(MovieLens, ParsesLines) {
    std::istringstream in("1\t2\t3\t881250949\n196\t242\t4.5\t0\r\n\n");
    const RatingsTable t = parse_movielens(in);
    ASSERT_EQ(t.ratings.size(), 2u);
    EXPECT_EQ(t.ratings[0].user, 1);
    EXPECT_EQ(t.ratings[0].item, 2);
    EXPECT_EQ(t.ratings[0].value, 3.0);
    EXPECT_EQ(t.ratings[0].timestamp, 881250949);
    EXPECT_EQ(t.ratings[1].value, 4.5);
    EXPECT_TRUE(t.warnings.empty());
}

TEST(MovieLens, EmptyFileWarns) {
    std::istringstream in("");
    const RatingsTable t = parse_movielens(in);
    EXPECT_TRUE(t.ratings.empty());
    ASSERT_EQ(t.warnings.size(), 1u);
}

TEST(MovieLens, MalformedLinesCarryLineNumbers) {
    std::istringstream bad("1\t2\t3\t4\n1\t2\tfive\t4\n");
    try {
        parse_movielens(bad);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    std::istringstream short_line("1\t2\t3\n");
    EXPECT_THROW(parse_movielens(short_line), ParseError);
    std::istringstream frac("1.5\t2\t3\t4\n");
    EXPECT_THROW(parse_movielens(frac), ParseError);
}

TEST(MovieLens, MissingFileIsIoError) {
    EXPECT_THROW(load_movielens("/nonexistent/u.data"), IoError);
}

TEST(MovieLens, LoadFromDisk) {
    const auto path = std::filesystem::temp_directory_path() / "nucomplete_udata_test.tsv";
    {
        std::ofstream out(path);
        out << "10\t20\t5\t1\n11\t20\t1\t2\n";
    }
    EXPECT_EQ(load_movielens(path.string()).ratings.size(), 2u);
    std::filesystem::remove(path);
}

TEST(DenseSubmatrix, UniformCountsKeepEveryoneAtTheThreshold) {
    RatingsTable t;
    for (std::int64_t u = 0; u < 4; ++u)
        for (std::int64_t i = 0; i < 4; ++i) t.ratings.push_back({u * 10, i + 100, 1.0, 0});
    const IndexedObservations d = dense_submatrix(t);
    EXPECT_EQ(d.obs.n_rows, 4u);
    EXPECT_EQ(d.obs.n_cols, 4u);
    EXPECT_EQ(d.obs.size(), 16u);
}

TEST(DenseSubmatrix, ThresholdAndReindexing) {
    // Users 7 and 9 rate many items, user 8 rates one; item 3 is popular.
    RatingsTable t;
    for (std::int64_t i = 1; i <= 4; ++i) {
        t.ratings.push_back({7, i, 1.0, 0});
        t.ratings.push_back({9, i, 2.0, 0});
    }
    t.ratings.push_back({8, 3, 3.0, 0});
    for (std::int64_t u = 20; u < 24; ++u) t.ratings.push_back({u, 3, 4.0, 0});
    // User counts: 7:4, 8:1, 9:4, 20..23:1 -> 0.75 threshold at position 5 of 7 sorted = 4.
    // Item counts: 1:2, 2:2, 3:7, 4:2 -> position 3 of 4 = 7.
    const IndexedObservations d = dense_submatrix(t, 0.75, 0.75);
    EXPECT_EQ(d.row_ids, (std::vector<std::int64_t>{7, 9}));
    EXPECT_EQ(d.col_ids, (std::vector<std::int64_t>{3}));
    ASSERT_EQ(d.obs.size(), 2u);
    for (const auto& s : d.obs.samples) {
        EXPECT_EQ(d.col_ids[s.col], 3);
        EXPECT_EQ(s.value, d.row_ids[s.row] == 7 ? 1.0 : 2.0);
    }
}

TEST(DenseSubmatrix, QuantileZeroPassesEverythingThrough) {
    CounterRng rng(71);
    RatingsTable t;
    for (int k = 0; k < 200; ++k) {
        t.ratings.push_back({static_cast<std::int64_t>(rng.index(30)) * 3, static_cast<std::int64_t>(rng.index(40)) + 1000,
                             static_cast<double>(1 + rng.index(5)), k});
    }
    const IndexedObservations d = dense_submatrix(t, 0.0, 0.0);
    ASSERT_EQ(d.obs.size(), t.ratings.size());
    std::set<std::int64_t> users, items;
    for (const auto& r : t.ratings) {
        users.insert(r.user);
        items.insert(r.item);
    }
    EXPECT_EQ(d.obs.n_rows, users.size());
    EXPECT_EQ(d.obs.n_cols, items.size());
    for (std::size_t k = 0; k < t.ratings.size(); ++k) {
        EXPECT_EQ(d.row_ids[d.obs.samples[k].row], t.ratings[k].user);
        EXPECT_EQ(d.col_ids[d.obs.samples[k].col], t.ratings[k].item);
        EXPECT_EQ(d.obs.samples[k].value, t.ratings[k].value);
    }
    EXPECT_TRUE(std::is_sorted(d.row_ids.begin(), d.row_ids.end()));
}

TEST(DenseSubmatrix, Errors) {
    EXPECT_THROW(dense_submatrix(RatingsTable{}), ConfigError);
    RatingsTable t;
    t.ratings.push_back({1, 1, 1.0, 0});
    EXPECT_THROW(dense_submatrix(t, 1.0, 0.5), ConfigError);
    EXPECT_THROW(dense_submatrix(t, -0.1, 0.5), ConfigError);
}

TEST(Preprocess, ZeroMapsToZeroBeforeStandardizing) {
    EXPECT_EQ(log1p_checked(0.0), 0.0);
    EXPECT_THROW(log1p_checked(-1.0), DomainError);
    EXPECT_THROW(preprocess_labstyle(obs_of(1, 1, {{0, 0, -2.0}})), DomainError);
}

TEST(Preprocess, ColumnStandardizationExample) {
    // Column 0 raw (0, e-1) -> log values (0, 1), mean 1/2, population sd 1/2.
    const ObservationSet obs = obs_of(2, 2, {{0, 0, 0.0}, {1, 0, std::exp(1.0) - 1.0}, {0, 1, 3.0}, {1, 1, 3.0}});
    const Preprocessed p = preprocess_labstyle(obs);
    EXPECT_NEAR(p.stats.mean[0], 0.5, 1e-15);
    EXPECT_NEAR(p.stats.sd[0], 0.5, 1e-15);
    EXPECT_NEAR(p.obs.samples[0].value, -1.0, 1e-15);
    EXPECT_NEAR(p.obs.samples[1].value, 1.0, 1e-15);
    // Constant column: sd floored, values standardized to exactly 0.
    EXPECT_EQ(p.stats.sd[1], sd_floor);
    EXPECT_EQ(p.obs.samples[2].value, 0.0);
    EXPECT_EQ(p.obs.samples[3].value, 0.0);
}

TEST(Preprocess, RoundTripRecoversRawValues) {
    CounterRng rng(72);
    ObservationSet obs{6, 5, {}};
    for (int k = 0; k < 60; ++k) obs.samples.push_back({rng.index(6), rng.index(5), rng.uniform(0.0, 50.0)});
    const Preprocessed p = preprocess_labstyle(obs);
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const double back = invert_column_stats(p.obs.samples[k].value, obs.samples[k].col, p.stats);
        EXPECT_NEAR(back, obs.samples[k].value, 1e-10 * (1.0 + obs.samples[k].value));
    }
    DenseMatrix z = DenseMatrix::Zero(6, 5);
    const DenseMatrix raw = invert_column_stats(z, p.stats);
    for (Eigen::Index k = 0; k < 5; ++k) EXPECT_NEAR(raw(0, k), std::expm1(p.stats.mean[static_cast<std::size_t>(k)]), 1e-12);
}

TEST(Preprocess, StatsComeFromTrainingObservationsOnly) {
    const ObservationSet train = obs_of(2, 1, {{0, 0, 0.0}, {1, 0, std::exp(2.0) - 1.0}});
    // A test value far away must not move the statistics.
    const ObservationSet all = obs_of(2, 1, {{0, 0, 0.0}, {1, 0, std::exp(2.0) - 1.0}, {0, 0, 1e6}});
    const Preprocessed p = preprocess_labstyle(all, train);
    EXPECT_NEAR(p.stats.mean[0], 1.0, 1e-15);
    EXPECT_NEAR(p.stats.sd[0], 1.0, 1e-15);
    EXPECT_NEAR(p.obs.samples[2].value, std::log1p(1e6) - 1.0, 1e-12);
}

TEST(Preprocess, UnseenColumnsGetIdentityStats) {
    const Preprocessed p = preprocess_labstyle(obs_of(1, 2, {{0, 1, 2.0}}), obs_of(1, 2, {{0, 0, 1.0}}));
    EXPECT_EQ(p.stats.mean[1], 0.0);
    EXPECT_EQ(p.stats.sd[1], 1.0);
    EXPECT_NEAR(p.obs.samples[0].value, std::log(3.0), 1e-15);
}

TEST(AverageDuplicates, AveragesPerCell) {
    const ObservationSet out =
        average_duplicates(obs_of(2, 2, {{1, 1, 1.0}, {0, 0, 2.0}, {1, 1, 4.0}, {1, 1, 7.0}}));
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out.samples[0], (Sample{0, 0, 2.0}));
    EXPECT_EQ(out.samples[1], (Sample{1, 1, 4.0}));
}
