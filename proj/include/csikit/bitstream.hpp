#pragma once

#include <cstdint>
#include <vector>

namespace csikit {

enum class QuantizerId : uint8_t {
    svqvae = 0,
    uniform = 1,
    mulaw = 2,
    basevv = 3,
};

/// Feedback payload. Wire layout: "CSIQ" | u8 quantizer id | u16 codeword
/// length L | u8 bits per index B | u16 embedding length D (0 when unused) |
/// payload of big-endian bit-packed indices, zero-padded to a byte boundary.
struct Bitstream {
    QuantizerId id = QuantizerId::uniform;
    uint16_t codeword_len = 0; // L
    uint8_t bits = 0;          // B
    uint16_t embed_dim = 0;    // D, 0 when not applicable
    std::vector<uint8_t> payload;

    size_t index_count() const;
    size_t payload_bits() const { return index_count() * bits; }
};

/// MSB-first packing of `count` indices at `bits` bits each.
std::vector<uint8_t> pack_indices(const std::vector<int>& indices, int bits);
std::vector<int> unpack_indices(const std::vector<uint8_t>& payload, size_t count,
                                int bits);

Bitstream make_bitstream(QuantizerId id, int codeword_len, int bits, int embed_dim,
                         const std::vector<int>& indices);
std::vector<int> bitstream_indices(const Bitstream& bs);

std::vector<uint8_t> serialize_bitstream(const Bitstream& bs);
Bitstream parse_bitstream(const std::vector<uint8_t>& bytes);

} // namespace csikit
