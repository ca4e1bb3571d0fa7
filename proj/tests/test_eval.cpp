#include <cmath>

#include "doctest.h"
#include "testutil.hpp"
#include "tg/eval.hpp"

namespace {

// 3x3 inverse by adjugate; part of the Denman-Beavers oracle below.
std::vector<double> inverse3(const std::vector<double>& m) {
    const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
    const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
    const double det = a * A + b * B + c * C;
    REQUIRE(std::abs(det) > 1e-12);
    return {A / det,
            -(b * i - c * h) / det,
            (b * f - c * e) / det,
            B / det,
            (a * i - c * g) / det,
            -(a * f - c * d) / det,
            C / det,
            -(a * h - b * g) / det,
            (a * e - b * d) / det};
}

std::vector<double> matmul3(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> out(9, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) out[i * 3 + j] += x[i * 3 + k] * y[k * 3 + j];
    return out;
}

// Denman-Beavers iteration: Y_{k+1} = (Y_k + Z_k^-1)/2, Z_{k+1} = (Z_k + Y_k^-1)/2
// converges to Y = sqrtm(M). Entirely independent of the Jacobi route used by
// the implementation.
double trace_sqrtm_db(const std::vector<double>& m) {
    std::vector<double> Y = m;
    std::vector<double> Z = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int it = 0; it < 60; ++it) {
        const auto Zi = inverse3(Z);
        const auto Yi = inverse3(Y);
        for (int k = 0; k < 9; ++k) {
            const double y = 0.5 * (Y[k] + Zi[k]);
            const double z = 0.5 * (Z[k] + Yi[k]);
            Y[k] = y;
            Z[k] = z;
        }
    }
    return Y[0] + Y[4] + Y[8];
}

std::vector<double> random_spd3(tg::Rng& rng) {
    std::vector<double> L(9);
    for (auto& v : L) v = rng.normal();
    std::vector<double> LT = {L[0], L[3], L[6], L[1], L[4], L[7], L[2], L[5], L[8]};
    auto m = matmul3(L, LT);
    for (int i = 0; i < 3; ++i) m[i * 3 + i] += 0.5;  // keep well-conditioned
    return m;
}

}  // namespace

TEST_CASE("frechet distance: degenerate identities") {
    tg::FrechetStats a;
    a.dim = 3;
    a.mean = {1.0, -2.0, 0.5};
    a.cov = {2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0};
    CHECK(tg::frechet_distance(a, a) == 0.0);

    // Equal covariances: distance is exactly the squared mean gap.
    tg::FrechetStats b = a;
    b.mean = {2.0, 0.0, 0.5};
    const double expect = 1.0 * 1.0 + 2.0 * 2.0;
    CHECK(tg::frechet_distance(a, b) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(tg::frechet_distance(b, a) == doctest::Approx(tg::frechet_distance(a, b)).epsilon(1e-9));

    tg::FrechetStats c;
    c.dim = 2;
    c.mean = {0, 0};
    c.cov = {1, 0, 0, 1};
    CHECK_THROWS_AS(tg::frechet_distance(a, c), tg::DimensionError);
}

TEST_CASE("frechet distance agrees with the Denman-Beavers oracle on random instances") {
    tg::Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        tg::FrechetStats a, b;
        a.dim = b.dim = 3;
        a.mean.resize(3);
        b.mean.resize(3);
        for (int i = 0; i < 3; ++i) {
            a.mean[static_cast<size_t>(i)] = rng.normal();
            b.mean[static_cast<size_t>(i)] = rng.normal();
        }
        a.cov = random_spd3(rng);
        b.cov = random_spd3(rng);

        double mean_term = 0, tr_a = 0, tr_b = 0;
        for (int i = 0; i < 3; ++i) {
            const double d = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
            mean_term += d * d;
            tr_a += a.cov[static_cast<size_t>(i * 3 + i)];
            tr_b += b.cov[static_cast<size_t>(i * 3 + i)];
        }
        const double oracle = mean_term + tr_a + tr_b - 2.0 * trace_sqrtm_db(matmul3(a.cov, b.cov));
        CHECK(tg::frechet_distance(a, b) == doctest::Approx(oracle).epsilon(1e-6));
    }
}

TEST_CASE("frechet stats from samples: symmetric covariance, sane moments") {
    tg::Rng rng(60);
    std::vector<std::vector<double>> features;
    for (int i = 0; i < 500; ++i)
        features.push_back({rng.normal(1.0, 0.5), rng.normal(-2.0, 2.0), rng.normal(0.0, 1.0)});
    const auto stats = tg::compute_frechet_stats(features);
    CHECK(stats.mean[0] == doctest::Approx(1.0).epsilon(0.15));
    CHECK(stats.mean[1] == doctest::Approx(-2.0).epsilon(0.15));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(stats.cov[static_cast<size_t>(i * 3 + j)] ==
                  doctest::Approx(stats.cov[static_cast<size_t>(j * 3 + i)]));
    CHECK(stats.cov[0] == doctest::Approx(0.25).epsilon(0.3));
    CHECK_THROWS_AS(tg::compute_frechet_stats({{1.0, 2.0}}), tg::DimensionError);
}

TEST_CASE("token accuracy: baseline for random predictions, vacuous t=0") {
    const uint32_t n_cb = 16;
    tg::Rng rng(70);
    std::vector<tg::TokenGrid> grids;
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) {
        tg::TokenGrid g(8, 8);
        for (auto& v : g.idx) v = static_cast<uint32_t>(rng.uniform_int(n_cb));
        grids.push_back(g);
        labels.push_back(i % 4);
    }

    // Hash-random predictions, independent of the clean tokens.
    tg::PredictFn random_fn = [n_cb](const tg::TokenGrid& tokens, int label, float t) {
        tg::LogitsGrid out(tokens.h, tokens.w, static_cast<int>(n_cb));
        for (size_t p = 0; p < tokens.idx.size(); ++p) {
            const uint32_t hash = (static_cast<uint32_t>(p) * 2654435761u +
                                   tokens.idx[p] * 97u + static_cast<uint32_t>(label + 2) * 13u +
                                   static_cast<uint32_t>(t * 256));
            out.scores[p * n_cb + (hash % n_cb)] = 10.0f;
        }
        return out;
    };

    const double acc = tg::token_accuracy(random_fn, grids, labels, n_cb, 0.75, 100, rng);
    const double n = 100.0 * 0.75 * 64.0;
    const double p = 1.0 / n_cb;
    const double sigma = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(acc - p) < 4.0 * sigma);

    CHECK(tg::token_accuracy(random_fn, grids, labels, n_cb, 0.0, 10, rng) == 1.0);

    const double in_range = tg::token_accuracy(random_fn, grids, labels, n_cb, 0.3, 20, rng);
    CHECK(in_range >= 0.0);
    CHECK(in_range <= 1.0);
    CHECK_THROWS_AS(tg::token_accuracy(random_fn, grids, labels, n_cb, 0.5, 0, rng), tg::ConfigError);
}

TEST_CASE("oracle classifier learns the toy classes") {
    tg::ToyDatasetSpec spec;
    spec.n = 300;
    spec.image_size = 16;
    spec.num_classes = 10;
    spec.seed = 21;
    const auto data = tg::generate_toy_dataset(spec);

    tg::ShapeClassifier clf(10, 5);
    tg::Rng rng(22);
    clf.train(data, 600, 16, 1e-3, rng);
    CHECK(clf.accuracy(data) > 0.9);

    const auto path = std::string("/tmp/tg_classifier.ckpt");
    clf.save(path);
    auto loaded = tg::ShapeClassifier::load(path);
    CHECK(loaded.classify(data[0].image) == clf.classify(data[0].image));
}

TEST_CASE("sweep: validation, table shape, bitwise reproducibility") {
    // Tiny codec + predictor + classifier, all untrained; the sweep's
    // structure is what matters here.
    tg::CodecConfig cc;
    cc.image_h = cc.image_w = 16;
    cc.f = 4;
    cc.n_cb = 16;
    cc.z = 4;
    cc.channels = {8, 16, 16};
    tg::VqCodec codec(cc, 31);

    tg::PredictorConfig pc;
    pc.n_cb = 16;
    pc.num_classes = 10;
    pc.levels = 2;
    pc.base_channels = 16;
    pc.channel_mult = {1, 2};
    pc.attention_levels = {1};
    pc.res_blocks = 1;
    pc.token_embed_dim = 8;
    pc.cond_dim = 16;
    pc.time_dim = 16;
    tg::TokenPredictor predictor(pc, 32);

    tg::ShapeClassifier oracle(10, 33);

    tg::ToyDatasetSpec spec;
    spec.n = 24;
    spec.image_size = 16;
    spec.seed = 34;
    std::vector<tg::Image> held;
    for (auto& s : tg::generate_toy_dataset(spec)) held.push_back(std::move(s.image));

    tg::SweepInputs in;
    in.predictor = &predictor;
    in.codec = &codec;
    in.oracle = &oracle;
    in.reference = tg::compute_frechet_stats(tg::pooled_latent_features(codec, held));
    in.grid_h = in.grid_w = 4;

    CHECK_THROWS_AS(tg::sweep(in, {2}, {1.0}, 0, 1), tg::ConfigError);
    CHECK_THROWS_AS(tg::sweep(in, {}, {1.0}, 4, 1), tg::ConfigError);

    const auto cells = tg::sweep(in, {1, 2}, {1.0, 2.0}, 4, 99);
    REQUIRE(cells.size() == 4);
    const auto again = tg::sweep(in, {1, 2}, {1.0, 2.0}, 4, 99);
    for (size_t i = 0; i < cells.size(); ++i) {
        CHECK(cells[i].frechet == again[i].frechet);
        CHECK(cells[i].oracle_accuracy == again[i].oracle_accuracy);
    }

    const std::string table = tg::sweep_table(cells);
    CHECK(table.find("steps\tcfg_weight\tfrechet\toracle_accuracy") == 0);
    size_t lines = 0;
    for (char ch : table) lines += ch == '\n';
    CHECK(lines == 5);  // header + 4 cells
}
