#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csikit/channel.hpp"
#include "csikit/errors.hpp"

using namespace csikit;
namespace fs = std::filesystem;

namespace {

// Dense-matrix reference transform, kept independent of the FFT path.
CMat oracle_dft_matrix(int n) {
    CMat f(n, n);
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < n; ++k) {
        for (int m = 0; m < n; ++m) {
            const double ang = -2.0 * M_PI * k * m / n;
            f.at(k, m) = cplx(std::cos(ang) * s, std::sin(ang) * s);
        }
    }
    return f;
}

CMat oracle_matmul(const CMat& a, const CMat& b) {
    REQUIRE(a.cols == b.rows);
    CMat out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            cplx acc(0, 0);
            for (int p = 0; p < a.cols; ++p) {
                acc += a.at(i, p) * b.at(p, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

CMat oracle_conj_transpose(const CMat& a) {
    CMat out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            out.at(j, i) = std::conj(a.at(i, j));
        }
    }
    return out;
}

CMat oracle_forward(const CMat& h) {
    const CMat fc = oracle_dft_matrix(h.rows);
    const CMat ft = oracle_dft_matrix(h.cols);
    return oracle_matmul(oracle_matmul(fc, h), oracle_conj_transpose(ft));
}

CMat random_cmat(int rows, int cols, Rng& rng) {
    CMat m(rows, cols);
    for (cplx& z : m.v) {
        z = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    }
    return m;
}

double max_abs_diff(const CMat& a, const CMat& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double worst = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        worst = std::max(worst, std::abs(a.v[i] - b.v[i]));
    }
    return worst;
}

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("dft_forward matches the dense oracle and is unitary") {
    Rng rng(100);
    for (auto [rows, cols] : {std::pair{16, 4}, std::pair{12, 6}, std::pair{8, 8}}) {
        CMat h = random_cmat(rows, cols, rng);
        CMat got = dft_forward(h);
        CMat want = oracle_forward(h);
        CHECK(max_abs_diff(got, want) < 1e-10);
        CHECK(std::abs(got.frob_norm() - h.frob_norm()) < 1e-10);
    }

    CMat zero(16, 4);
    CMat z = dft_forward(zero);
    for (const cplx& v : z.v) {
        CHECK(std::abs(v) == 0.0);
    }
}

TEST_CASE("dft_forward recovers a sparse matrix planted by the inverse oracle") {
    Rng rng(101);
    const int n_c = 16, n_t = 4;
    CMat x(n_c, n_t);
    x.at(0, 0) = cplx(1.0, -0.5);
    x.at(3, 2) = cplx(-2.0, 1.0);
    x.at(5, 1) = cplx(0.25, 0.75);
    // h = F_c^H * x * F_t, so the forward transform must return x
    const CMat fc = oracle_dft_matrix(n_c);
    const CMat ft = oracle_dft_matrix(n_t);
    const CMat h = oracle_matmul(oracle_matmul(oracle_conj_transpose(fc), x), ft);
    CHECK(max_abs_diff(dft_forward(h), x) < 1e-10);
    CHECK(max_abs_diff(dft_inverse(x), h) < 1e-10);
}

TEST_CASE("truncate keeps the leading rows") {
    Rng rng(102);
    CMat hp = random_cmat(16, 4, rng);
    AngularDelayCsi ha = truncate(hp, 5);
    CHECK(ha.m.rows == 5);
    CHECK(ha.m.cols == 4);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 4; ++c) {
            CHECK(ha.m.at(r, c) == hp.at(r, c));
        }
    }

    AngularDelayCsi full = truncate(hp, 16);
    CHECK(max_abs_diff(full.m, hp) == 0.0);

    CHECK_THROWS_AS(truncate(hp, 17), ConfigError);
}

TEST_CASE("reconstruct_full inverts truncation for delay-limited input") {
    Rng rng(103);
    const int n_c = 16, n_t = 4, n_a = 6;
    // nonzero only in the first n_a angular-delay rows
    CMat sparse(n_c, n_t);
    for (int r = 0; r < n_a; ++r) {
        for (int c = 0; c < n_t; ++c) {
            sparse.at(r, c) = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        }
    }
    CMat h = dft_inverse(sparse);
    SpatialFreqCsi rec = reconstruct_full(truncate(dft_forward(h), n_a), n_c);
    CHECK(max_abs_diff(rec.m, h) < 1e-10);

    AngularDelayCsi zero;
    zero.m = CMat(4, 4);
    SpatialFreqCsi zrec = reconstruct_full(zero, 16);
    for (const cplx& v : zrec.m.v) {
        CHECK(std::abs(v) == 0.0);
    }
}

TEST_CASE("reconstruct_full of a single impulse is the oracle rank-1 product") {
    const int n_c = 8, n_t = 4, n_a = 3;
    AngularDelayCsi ha;
    ha.m = CMat(n_a, n_t);
    ha.m.at(0, 0) = cplx(1.0, 0.0);
    const SpatialFreqCsi got = reconstruct_full(ha, n_c);

    CMat padded(n_c, n_t);
    padded.at(0, 0) = cplx(1.0, 0.0);
    const CMat fc = oracle_dft_matrix(n_c);
    const CMat ft = oracle_dft_matrix(n_t);
    const CMat want =
        oracle_matmul(oracle_matmul(oracle_conj_transpose(fc), padded), ft);
    CHECK(max_abs_diff(got.m, want) < 1e-12);
}

TEST_CASE("generate_synthetic is deterministic and delay-limited") {
    ChannelConfig cfg;
    cfg.n_t = 4;
    cfg.n_c = 32;
    cfg.n_a = 8;
    cfg.paths = 3;
    cfg.max_delay_tap = 6;
    cfg.seed = 777;

    const auto a = generate_synthetic(cfg, 5);
    const auto b = generate_synthetic(cfg, 5);
    REQUIRE(a.size() == 5);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(max_abs_diff(a[i].m, b[i].m) == 0.0);
    }

    // per-sample streams: generating a suffix reproduces the same samples
    const auto tail = generate_synthetic(cfg, 3, 2);
    for (size_t i = 0; i < tail.size(); ++i) {
        CHECK(max_abs_diff(tail[i].m, a[i + 2].m) == 0.0);
    }

    for (const SpatialFreqCsi& s : a) {
        const CMat hp = oracle_forward(s.m);
        double total = 0.0, beyond = 0.0;
        for (int r = 0; r < hp.rows; ++r) {
            for (int c = 0; c < hp.cols; ++c) {
                const double e = std::norm(hp.at(r, c));
                total += e;
                if (r >= cfg.n_a) {
                    beyond += e;
                }
            }
        }
        CHECK(total > 0.0);
        CHECK(beyond < 1e-10 * total);
    }
}

TEST_CASE("single path with zero delay concentrates in angular-delay row 0") {
    ChannelConfig cfg;
    cfg.n_t = 4;
    cfg.n_c = 16;
    cfg.n_a = 4;
    cfg.paths = 1;
    cfg.max_delay_tap = 0; // forces delay tap 0
    cfg.seed = 31337;

    for (const SpatialFreqCsi& s : generate_synthetic(cfg, 4)) {
        const CMat hp = oracle_forward(s.m);
        double total = 0.0, row0 = 0.0;
        for (int r = 0; r < hp.rows; ++r) {
            for (int c = 0; c < hp.cols; ++c) {
                const double e = std::norm(hp.at(r, c));
                total += e;
                if (r == 0) {
                    row0 += e;
                }
            }
        }
        CHECK(row0 > (1.0 - 1e-10) * total);
    }
}

TEST_CASE("to_real / from_real") {
    AngularDelayCsi one;
    one.m = CMat(1, 1);
    one.m.at(0, 0) = cplx(3.0, 4.0);
    const double scale = compute_scale({one});
    CHECK(scale == 4.0); // smallest power of two >= 4
    RealCsi r = to_real(one, scale);
    REQUIRE(r.values.size() == 2);
    CHECK(r.values[0] > 0.0);
    CHECK(r.values[0] < 1.0);
    CHECK(r.values[1] > 0.0);
    CHECK(r.values[1] < 1.0);
    CHECK(r.values[0] == doctest::Approx(0.5 + 3.0 / 16.0).epsilon(1e-7));
    CHECK(r.values[1] == doctest::Approx(0.5 + 4.0 / 16.0).epsilon(1e-7));

    AngularDelayCsi zero;
    zero.m = CMat(2, 3);
    RealCsi rz = to_real(zero, 1.0);
    for (double v : rz.values) {
        CHECK(v == 0.5);
    }

    // round trip: real -> complex -> real is exact on the storage grid
    Rng rng(55);
    RealCsi stored;
    stored.n_a = 4;
    stored.n_t = 3;
    stored.scale = 2.0;
    stored.values.resize(24);
    for (double& v : stored.values) {
        v = static_cast<double>(static_cast<float>(rng.uniform(0.25, 0.75)));
    }
    const AngularDelayCsi back = from_real(stored);
    const RealCsi again = to_real(back, stored.scale);
    for (size_t i = 0; i < stored.values.size(); ++i) {
        CHECK(again.values[i] == stored.values[i]);
    }

    // complex -> real -> complex reproduces anything a dataset can hold
    const AngularDelayCsi twice = from_real(to_real(back, stored.scale));
    CHECK(max_abs_diff(twice.m, back.m) == 0.0);
}

TEST_CASE("normalization keeps every stored value inside [0, 1]") {
    ChannelConfig cfg;
    cfg.n_t = 4;
    cfg.n_c = 16;
    cfg.n_a = 8;
    cfg.paths = 4;
    cfg.max_delay_tap = 6;
    cfg.seed = 9;
    std::vector<AngularDelayCsi> angular;
    for (const SpatialFreqCsi& s : generate_synthetic(cfg, 20)) {
        angular.push_back(truncate(dft_forward(s.m), cfg.n_a));
    }
    const double scale = compute_scale(angular);
    CHECK(std::exp2(std::round(std::log2(scale))) == scale); // power of two
    for (const AngularDelayCsi& a : angular) {
        const RealCsi r = to_real(a, scale);
        for (double v : r.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("dataset save/load round trip is byte exact") {
    ChannelConfig cfg;
    cfg.n_t = 4;
    cfg.n_c = 16;
    cfg.n_a = 8;
    cfg.paths = 2;
    cfg.max_delay_tap = 5;
    cfg.seed = 4242;

    Dataset ds;
    ds.n_a = cfg.n_a;
    ds.n_t = cfg.n_t;
    std::vector<AngularDelayCsi> angular;
    for (const SpatialFreqCsi& s : generate_synthetic(cfg, 6)) {
        angular.push_back(truncate(dft_forward(s.m), cfg.n_a));
    }
    ds.scale = compute_scale(angular);
    for (const AngularDelayCsi& a : angular) {
        ds.samples.push_back(to_real(a, ds.scale));
    }

    const std::string p1 = temp_path("csikit_ds1.csid");
    const std::string p2 = temp_path("csikit_ds2.csid");
    save_dataset(p1, ds);
    Dataset loaded = load_dataset(p1);
    REQUIRE(loaded.samples.size() == ds.samples.size());
    CHECK(loaded.scale == ds.scale);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(loaded.samples[i].values == ds.samples[i].values);
    }
    save_dataset(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
}

TEST_CASE("dataset loader rejects corruption with distinct errors") {
    Dataset ds;
    ds.n_a = 2;
    ds.n_t = 2;
    ds.scale = 1.0;
    for (int i = 0; i < 10; ++i) {
        RealCsi s;
        s.n_a = 2;
        s.n_t = 2;
        s.scale = 1.0;
        s.values.assign(8, 0.5);
        ds.samples.push_back(s);
    }
    const std::string path = temp_path("csikit_ds_corrupt.csid");
    save_dataset(path, ds);

    auto patch = [&](size_t offset, char value, auto truncate_to) {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        if (offset != SIZE_MAX) {
            bytes[offset] = value;
        }
        if (truncate_to != SIZE_MAX) {
            bytes.resize(truncate_to);
        }
        const std::string out = temp_path("csikit_ds_patched.csid");
        std::ofstream o(out, std::ios::binary | std::ios::trunc);
        o.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        return out;
    };

    CHECK_THROWS_AS(load_dataset(patch(0, 'X', SIZE_MAX)), BadMagicError);
    CHECK_THROWS_AS(load_dataset(patch(4, 9, SIZE_MAX)), VersionError);
    // header says 10 samples, payload holds 9
    const size_t full = 4 + 2 + 4 + 2 + 2 + 8 + 10 * 8 * sizeof(float);
    CHECK_THROWS_AS(load_dataset(patch(SIZE_MAX, 0, full - 8 * sizeof(float))),
                    TruncatedError);
    CHECK_THROWS_AS(load_dataset(temp_path("does_not_exist.csid")), IoError);
}

TEST_CASE("raw import matches the native loader on the same payload") {
    // build a raw float32 file by hand
    const std::string raw = temp_path("csikit_raw.f32");
    std::ofstream f(raw, std::ios::binary | std::ios::trunc);
    Rng rng(66);
    std::vector<float> payload(3 * 2 * 2 * 2); // 3 samples of 2 x 4
    for (float& v : payload) {
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    f.close();

    Dataset imported = import_raw(raw, 2, 2, 0.25);
    REQUIRE(imported.samples.size() == 3);
    for (size_t i = 0; i < payload.size(); ++i) {
        CHECK(imported.samples[i / 8].values[i % 8] ==
              static_cast<double>(payload[i]));
    }

    // the native format round trips the imported data identically
    const std::string path = temp_path("csikit_imported.csid");
    save_dataset(path, imported);
    Dataset loaded = load_dataset(path);
    for (size_t i = 0; i < imported.samples.size(); ++i) {
        CHECK(loaded.samples[i].values == imported.samples[i].values);
    }

    // wrong dims: size no longer divides
    CHECK_THROWS_AS(import_raw(raw, 5, 3, 0.25), DataError);
}

TEST_CASE("channel config validation") {
    ChannelConfig cfg;
    cfg.n_a = 64;
    cfg.n_c = 32;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ChannelConfig{};
    cfg.paths = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ChannelConfig{};
    cfg.max_delay_tap = 32;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ChannelConfig{};
    cfg.n_r = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
