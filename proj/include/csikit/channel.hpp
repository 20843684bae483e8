#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "csikit/rng.hpp"

namespace csikit {

using cplx = std::complex<double>;

struct ChannelConfig {
    int n_t = 32;        // transmit antennas
    int n_c = 1024;      // subcarriers
    int n_a = 32;        // retained delay rows
    int n_r = 1;         // receive antennas, fixed
    int paths = 4;       // multipath components
    int max_delay_tap = 24;
    uint64_t seed = 1;

    void validate() const;
};

// Complex matrix, row major.
struct CMat {
    int rows = 0;
    int cols = 0;
    std::vector<cplx> v;

    CMat() = default;
    CMat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c) {}

    cplx& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    const cplx& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    double frob_norm() const;
};

// Spatial-frequency channel, n_c x n_t.
struct SpatialFreqCsi {
    CMat m;
};

// Delay-truncated angular-delay channel, n_a x n_t.
struct AngularDelayCsi {
    CMat m;
};

/// Real network-facing form: n_a x 2*n_t, real parts in the left columns,
/// imaginary parts in the right. Values live on the single-precision grid of
/// the dataset payload and inside [0, 1]; `scale` is the shared power-of-two
/// normalization constant (see to_real).
struct RealCsi {
    int n_a = 0;
    int n_t = 0;
    std::vector<double> values; // n_a x 2*n_t row major
    double scale = 1.0;
};

/// H' = F_c * H * F_t^H with unitary (1/sqrt(N)-scaled) DFT matrices;
/// norm-preserving in both directions.
CMat dft_forward(const CMat& h);
/// Inverse of dft_forward: F_c^H * Hp * F_t.
CMat dft_inverse(const CMat& hp);

AngularDelayCsi truncate(const CMat& hp, int n_a);
SpatialFreqCsi reconstruct_full(const AngularDelayCsi& ha, int n_c);

/// Multipath ULA channel: each path carries a random complex gain, an
/// integer delay tap in [0, max_delay_tap] and a random angle of departure.
/// Integer taps put the whole angular-delay support inside the first n_a
/// rows, so truncation loses nothing. Sample i draws from the independent
/// stream (seed, sample_offset + i), which makes generation order-free.
std::vector<SpatialFreqCsi> generate_synthetic(const ChannelConfig& cfg, int count,
                                               uint64_t sample_offset = 0);

/// Smallest power of two >= the max |Re|,|Im| over all samples (1.0 for an
/// all-zero set). Power-of-two scales keep de-normalization exact.
double compute_scale(const std::vector<AngularDelayCsi>& samples);

/// Affine map x -> 0.5 + x / (4*scale), rounded to the float32 grid the
/// dataset payload uses. Requires |x| <= scale, which lands every value in
/// [0.25, 0.75]. from_real(to_real(h)) is exact for any h already on the
/// grid (everything loaded from a dataset); for fresh full-precision values
/// the one float32 rounding here is the only loss.
RealCsi to_real(const AngularDelayCsi& ha, double scale);
/// Exact inverse x = (y - 0.5) * 4*scale (power-of-two scale, Sterbenz-safe
/// subtraction: no rounding anywhere).
AngularDelayCsi from_real(const RealCsi& r);

struct Dataset {
    int n_a = 0;
    int n_t = 0;
    double scale = 1.0;
    std::vector<RealCsi> samples;
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

/// Headerless float32 little-endian import with caller-declared dims. The
/// payload must already be normalized to [0, 1]; sample count is inferred
/// from the file size.
Dataset import_raw(const std::string& path, int n_a, int n_t, double scale);

} // namespace csikit
