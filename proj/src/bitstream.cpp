#include "csikit/bitstream.hpp"

#include <cstring>

#include "csikit/errors.hpp"

namespace csikit {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'I', 'Q'};

} // namespace

size_t Bitstream::index_count() const {
    // One index per codeword element, except the whole-vector scheme which
    // groups D elements per index.
    if (id == QuantizerId::basevv) {
        return embed_dim == 0 ? 0 : static_cast<size_t>(codeword_len) / embed_dim;
    }
    return codeword_len;
}

std::vector<uint8_t> pack_indices(const std::vector<int>& indices, int bits) {
    if (bits < 1 || bits > 16) {
        throw ConfigError("pack_indices: bits must be in [1, 16]");
    }
    const int limit = 1 << bits;
    std::vector<uint8_t> out((indices.size() * static_cast<size_t>(bits) + 7) / 8, 0);
    size_t bitpos = 0;
    for (int idx : indices) {
        if (idx < 0 || idx >= limit) {
            throw UsageError("pack_indices: index does not fit in bit width");
        }
        for (int b = bits - 1; b >= 0; --b) {
            if ((idx >> b) & 1) {
                out[bitpos / 8] |= static_cast<uint8_t>(0x80u >> (bitpos % 8));
            }
            ++bitpos;
        }
    }
    return out;
}

std::vector<int> unpack_indices(const std::vector<uint8_t>& payload, size_t count,
                                int bits) {
    if (bits < 1 || bits > 16) {
        throw ConfigError("unpack_indices: bits must be in [1, 16]");
    }
    if (payload.size() * 8 < count * static_cast<size_t>(bits)) {
        throw TruncatedError("unpack_indices: payload too short");
    }
    std::vector<int> out(count, 0);
    size_t bitpos = 0;
    for (size_t i = 0; i < count; ++i) {
        int v = 0;
        for (int b = 0; b < bits; ++b) {
            v = (v << 1) |
                ((payload[bitpos / 8] >> (7 - bitpos % 8)) & 1);
            ++bitpos;
        }
        out[i] = v;
    }
    return out;
}

Bitstream make_bitstream(QuantizerId id, int codeword_len, int bits, int embed_dim,
                         const std::vector<int>& indices) {
    Bitstream bs;
    bs.id = id;
    bs.codeword_len = static_cast<uint16_t>(codeword_len);
    bs.bits = static_cast<uint8_t>(bits);
    bs.embed_dim = static_cast<uint16_t>(embed_dim);
    if (indices.size() != bs.index_count()) {
        throw UsageError("make_bitstream: wrong index count for header");
    }
    bs.payload = pack_indices(indices, bits);
    return bs;
}

std::vector<int> bitstream_indices(const Bitstream& bs) {
    return unpack_indices(bs.payload, bs.index_count(), bs.bits);
}

std::vector<uint8_t> serialize_bitstream(const Bitstream& bs) {
    std::vector<uint8_t> out;
    out.reserve(10 + bs.payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<uint8_t>(bs.id));
    out.push_back(static_cast<uint8_t>(bs.codeword_len & 0xFF));
    out.push_back(static_cast<uint8_t>(bs.codeword_len >> 8));
    out.push_back(bs.bits);
    out.push_back(static_cast<uint8_t>(bs.embed_dim & 0xFF));
    out.push_back(static_cast<uint8_t>(bs.embed_dim >> 8));
    out.insert(out.end(), bs.payload.begin(), bs.payload.end());
    return out;
}

Bitstream parse_bitstream(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 10) {
        throw TruncatedError("parse_bitstream: shorter than the header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw BadMagicError("parse_bitstream: bad magic");
    }
    Bitstream bs;
    const uint8_t id = bytes[4];
    if (id > static_cast<uint8_t>(QuantizerId::basevv)) {
        throw CorruptStreamError("parse_bitstream: unknown quantizer id");
    }
    bs.id = static_cast<QuantizerId>(id);
    bs.codeword_len = static_cast<uint16_t>(bytes[5] | (bytes[6] << 8));
    bs.bits = bytes[7];
    bs.embed_dim = static_cast<uint16_t>(bytes[8] | (bytes[9] << 8));
    if (bs.bits < 1 || bs.bits > 16) {
        throw CorruptStreamError("parse_bitstream: bad bit width");
    }
    if (bs.id == QuantizerId::basevv &&
        (bs.embed_dim == 0 || bs.codeword_len % bs.embed_dim != 0)) {
        throw CorruptStreamError("parse_bitstream: embed dim inconsistent with L");
    }
    const size_t expect = (bs.index_count() * bs.bits + 7) / 8;
    if (bytes.size() - 10 != expect) {
        throw TruncatedError("parse_bitstream: payload size mismatch");
    }
    bs.payload.assign(bytes.begin() + 10, bytes.end());
    return bs;
}

} // namespace csikit
