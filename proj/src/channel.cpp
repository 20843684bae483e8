#include "csikit/channel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csikit/errors.hpp"

namespace csikit {

void ChannelConfig::validate() const {
    if (n_t < 1 || n_c < 1 || n_a < 1) {
        throw ConfigError("channel dims must be positive");
    }
    if (n_a > n_c) {
        throw ConfigError("n_a must not exceed n_c");
    }
    if (n_r != 1) {
        throw ConfigError("n_r is fixed to 1");
    }
    if (paths < 1) {
        throw ConfigError("paths must be >= 1");
    }
    if (max_delay_tap < 0 || max_delay_tap >= n_a) {
        throw ConfigError("max_delay_tap must lie in [0, n_a)");
    }
}

double CMat::frob_norm() const {
    double s = 0.0;
    for (const cplx& z : v) {
        s += std::norm(z);
    }
    return std::sqrt(s);
}

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place radix-2 transform, sign = -1 forward / +1 inverse kernel.
// No scaling applied here.
void fft_pow2(std::vector<cplx>& x, int sign) {
    const size_t n = x.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(x[i], x[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const cplx u = x[i + j];
                const cplx t = x[i + j + len / 2] * w;
                x[i + j] = u + t;
                x[i + j + len / 2] = u - t;
                w *= wl;
            }
        }
    }
}

// O(n^2) fallback for non power-of-two sizes.
void dft_direct(std::vector<cplx>& x, int sign) {
    const size_t n = x.size();
    std::vector<cplx> out(n, cplx(0.0, 0.0));
    for (size_t k = 0; k < n; ++k) {
        for (size_t m = 0; m < n; ++m) {
            const double ang =
                sign * 2.0 * M_PI * static_cast<double>(k * m % n) / static_cast<double>(n);
            out[k] += x[m] * cplx(std::cos(ang), std::sin(ang));
        }
    }
    x = std::move(out);
}

// Unitary transform: 1/sqrt(n) scale in both directions.
void unitary_transform(std::vector<cplx>& x, bool inverse) {
    const int sign = inverse ? +1 : -1;
    if (is_pow2(static_cast<int>(x.size()))) {
        fft_pow2(x, sign);
    } else {
        dft_direct(x, sign);
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (cplx& z : x) {
        z *= s;
    }
}

void transform_cols(CMat& m, bool inverse) {
    std::vector<cplx> buf(static_cast<size_t>(m.rows));
    for (int c = 0; c < m.cols; ++c) {
        for (int r = 0; r < m.rows; ++r) {
            buf[static_cast<size_t>(r)] = m.at(r, c);
        }
        unitary_transform(buf, inverse);
        for (int r = 0; r < m.rows; ++r) {
            m.at(r, c) = buf[static_cast<size_t>(r)];
        }
    }
}

void transform_rows(CMat& m, bool inverse) {
    std::vector<cplx> buf(static_cast<size_t>(m.cols));
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            buf[static_cast<size_t>(c)] = m.at(r, c);
        }
        unitary_transform(buf, inverse);
        for (int c = 0; c < m.cols; ++c) {
            m.at(r, c) = buf[static_cast<size_t>(c)];
        }
    }
}

} // namespace

CMat dft_forward(const CMat& h) {
    if (h.rows < 1 || h.cols < 1) {
        throw DimensionError("dft_forward: empty matrix");
    }
    CMat out = h;
    // F_c on the left: forward transform down each column. F_t^H on the
    // right: inverse-kernel transform along each row.
    transform_cols(out, false);
    transform_rows(out, true);
    return out;
}

CMat dft_inverse(const CMat& hp) {
    if (hp.rows < 1 || hp.cols < 1) {
        throw DimensionError("dft_inverse: empty matrix");
    }
    CMat out = hp;
    transform_cols(out, true);
    transform_rows(out, false);
    return out;
}

AngularDelayCsi truncate(const CMat& hp, int n_a) {
    if (n_a > hp.rows) {
        throw ConfigError("truncate: n_a exceeds row count");
    }
    AngularDelayCsi ha;
    ha.m = CMat(n_a, hp.cols);
    for (int r = 0; r < n_a; ++r) {
        for (int c = 0; c < hp.cols; ++c) {
            ha.m.at(r, c) = hp.at(r, c);
        }
    }
    return ha;
}

SpatialFreqCsi reconstruct_full(const AngularDelayCsi& ha, int n_c) {
    if (n_c < ha.m.rows) {
        throw DimensionError("reconstruct_full: n_c smaller than n_a");
    }
    CMat padded(n_c, ha.m.cols);
    for (int r = 0; r < ha.m.rows; ++r) {
        for (int c = 0; c < ha.m.cols; ++c) {
            padded.at(r, c) = ha.m.at(r, c);
        }
    }
    SpatialFreqCsi out;
    out.m = dft_inverse(padded);
    return out;
}

std::vector<SpatialFreqCsi> generate_synthetic(const ChannelConfig& cfg, int count,
                                               uint64_t sample_offset) {
    cfg.validate();
    if (count < 1) {
        throw ConfigError("generate_synthetic: count must be >= 1");
    }
    std::vector<SpatialFreqCsi> out;
    out.reserve(static_cast<size_t>(count));
    for (int s = 0; s < count; ++s) {
        Rng rng = Rng::stream(cfg.seed, sample_offset + static_cast<uint64_t>(s));
        CMat h(cfg.n_c, cfg.n_t);
        const double path_scale = 1.0 / std::sqrt(2.0 * cfg.paths);
        for (int p = 0; p < cfg.paths; ++p) {
            const cplx gain(rng.normal() * path_scale, rng.normal() * path_scale);
            const int tap = rng.uniform_int(0, cfg.max_delay_tap);
            const double sin_theta = std::sin(rng.uniform(-M_PI / 2.0, M_PI / 2.0));
            // Delay tap `tap` makes the column transform land exactly on
            // delay row `tap`; the angle shapes the antenna response.
            for (int n = 0; n < cfg.n_c; ++n) {
                const double dphi = 2.0 * M_PI * static_cast<double>(n) *
                                    static_cast<double>(tap) / static_cast<double>(cfg.n_c);
                const cplx g = gain * cplx(std::cos(dphi), std::sin(dphi));
                for (int m = 0; m < cfg.n_t; ++m) {
                    const double aphi = -M_PI * static_cast<double>(m) * sin_theta;
                    h.at(n, m) += g * cplx(std::cos(aphi), std::sin(aphi));
                }
            }
        }
        out.push_back(SpatialFreqCsi{std::move(h)});
    }
    return out;
}

double compute_scale(const std::vector<AngularDelayCsi>& samples) {
    double max_abs = 0.0;
    for (const AngularDelayCsi& s : samples) {
        for (const cplx& z : s.m.v) {
            max_abs = std::max({max_abs, std::abs(z.real()), std::abs(z.imag())});
        }
    }
    if (max_abs == 0.0) {
        return 1.0;
    }
    return std::exp2(std::ceil(std::log2(max_abs)));
}

RealCsi to_real(const AngularDelayCsi& ha, double scale) {
    if (scale <= 0.0) {
        throw ConfigError("to_real: scale must be positive");
    }
    RealCsi r;
    r.n_a = ha.m.rows;
    r.n_t = ha.m.cols;
    r.scale = scale;
    r.values.resize(static_cast<size_t>(r.n_a) * 2 * r.n_t);
    const double inv = 1.0 / (4.0 * scale);
    for (int i = 0; i < r.n_a; ++i) {
        for (int j = 0; j < r.n_t; ++j) {
            const cplx z = ha.m.at(i, j);
            r.values[static_cast<size_t>(i) * 2 * r.n_t + j] =
                static_cast<double>(static_cast<float>(0.5 + z.real() * inv));
            r.values[static_cast<size_t>(i) * 2 * r.n_t + r.n_t + j] =
                static_cast<double>(static_cast<float>(0.5 + z.imag() * inv));
        }
    }
    return r;
}

AngularDelayCsi from_real(const RealCsi& r) {
    AngularDelayCsi ha;
    ha.m = CMat(r.n_a, r.n_t);
    const double s4 = 4.0 * r.scale;
    for (int i = 0; i < r.n_a; ++i) {
        for (int j = 0; j < r.n_t; ++j) {
            const double re = (r.values[static_cast<size_t>(i) * 2 * r.n_t + j] - 0.5) * s4;
            const double im =
                (r.values[static_cast<size_t>(i) * 2 * r.n_t + r.n_t + j] - 0.5) * s4;
            ha.m.at(i, j) = cplx(re, im);
        }
    }
    return ha;
}

// ---- dataset file ---------------------------------------------------------
//
// Layout: "CSID" | u16 version=1 | u32 count | u16 n_a | u16 n_t | f64 scale
// followed by count samples of n_a x 2*n_t float32, all little endian.

namespace {

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return f.gcount() == static_cast<std::streamsize>(sizeof(T));
}

constexpr char kDatasetMagic[4] = {'C', 'S', 'I', 'D'};
constexpr uint16_t kDatasetVersion = 1;

} // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    for (const RealCsi& s : ds.samples) {
        if (s.n_a != ds.n_a || s.n_t != ds.n_t || s.scale != ds.scale) {
            throw ConfigError("save_dataset: sample dims/scale mismatch");
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("save_dataset: cannot open " + path);
    }
    f.write(kDatasetMagic, 4);
    write_pod(f, kDatasetVersion);
    write_pod(f, static_cast<uint32_t>(ds.samples.size()));
    write_pod(f, static_cast<uint16_t>(ds.n_a));
    write_pod(f, static_cast<uint16_t>(ds.n_t));
    write_pod(f, ds.scale);
    for (const RealCsi& s : ds.samples) {
        for (double v : s.values) {
            write_pod(f, static_cast<float>(v));
        }
    }
    if (!f) {
        throw IoError("save_dataset: write failed for " + path);
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("load_dataset: cannot open " + path);
    }
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0) {
        throw BadMagicError("load_dataset: bad magic in " + path);
    }
    uint16_t version = 0;
    if (!read_pod(f, version)) {
        throw TruncatedError("load_dataset: truncated header in " + path);
    }
    if (version != kDatasetVersion) {
        throw VersionError("load_dataset: unsupported version " +
                           std::to_string(version));
    }
    uint32_t count = 0;
    uint16_t n_a = 0, n_t = 0;
    double scale = 0.0;
    if (!read_pod(f, count) || !read_pod(f, n_a) || !read_pod(f, n_t) ||
        !read_pod(f, scale)) {
        throw TruncatedError("load_dataset: truncated header in " + path);
    }
    Dataset ds;
    ds.n_a = n_a;
    ds.n_t = n_t;
    ds.scale = scale;
    ds.samples.reserve(count);
    const size_t per_sample = static_cast<size_t>(n_a) * 2 * n_t;
    for (uint32_t i = 0; i < count; ++i) {
        RealCsi s;
        s.n_a = n_a;
        s.n_t = n_t;
        s.scale = scale;
        s.values.resize(per_sample);
        for (size_t j = 0; j < per_sample; ++j) {
            float v = 0.0f;
            if (!read_pod(f, v)) {
                throw TruncatedError("load_dataset: payload ends inside sample " +
                                     std::to_string(i));
            }
            s.values[j] = static_cast<double>(v);
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset import_raw(const std::string& path, int n_a, int n_t, double scale) {
    if (n_a < 1 || n_t < 1 || scale <= 0.0) {
        throw ConfigError("import_raw: invalid dims or scale");
    }
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        throw IoError("import_raw: cannot open " + path);
    }
    const std::streamsize bytes = f.tellg();
    f.seekg(0);
    const size_t per_sample = static_cast<size_t>(n_a) * 2 * n_t;
    const size_t sample_bytes = per_sample * sizeof(float);
    if (bytes <= 0 || static_cast<size_t>(bytes) % sample_bytes != 0) {
        throw DataError("import_raw: file size is not a multiple of the sample size");
    }
    const size_t count = static_cast<size_t>(bytes) / sample_bytes;
    Dataset ds;
    ds.n_a = n_a;
    ds.n_t = n_t;
    ds.scale = scale;
    ds.samples.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        RealCsi s;
        s.n_a = n_a;
        s.n_t = n_t;
        s.scale = scale;
        s.values.resize(per_sample);
        for (size_t j = 0; j < per_sample; ++j) {
            float v = 0.0f;
            if (!read_pod(f, v)) {
                throw TruncatedError("import_raw: short read");
            }
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw DataError("import_raw: value outside [0, 1]");
            }
            s.values[j] = static_cast<double>(v);
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace csikit
