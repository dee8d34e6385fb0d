#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elpq/error.hpp"

namespace elpq {

// ---------------------------------------------------------------------------
// ELP_BSD: a weight is scale * sum of signed/unsigned power-of-two digits.
// Each digit stores an index into a restricted set of shift counts, plus an
// optional sign bit. A stored code is the digit groups concatenated
// most-significant-first: [sign bit if signed][index bits, MSB first] for
// digit 0, then digit 1, and so on.
// ---------------------------------------------------------------------------

using Code = uint16_t;

struct DigitSpec {
    bool is_signed = true;
    std::vector<uint8_t> shift_counts;  // strictly increasing, each <= 15

    int index_bits() const;  // ceil(log2(n)) for n shift counts, 0 when n == 1
    int bits() const { return (is_signed ? 1 : 0) + index_bits(); }
    void validate() const;
};

struct FormatSpec {
    std::vector<DigitSpec> digits;  // length m >= 1
    double scale = 1.0;             // SF, > 0

    int bit_width() const;  // total stored bits per weight, <= 16
    int max_shift() const;  // largest shift count across all digits
    void validate() const;

    std::string to_json() const;
    static FormatSpec from_json(const std::string& text);
};

// Total code space, i.e. 2^bit_width; every value in [0, code_space) is a
// candidate code but codes with an out-of-range index field are invalid.
uint32_t code_space(const FormatSpec& spec);

bool code_is_valid(Code w, const FormatSpec& spec);

// Integer level: sum of +/- 2^shift terms, before the scale factor.
int64_t decode_raw(Code w, const FormatSpec& spec);
double decode(Code w, const FormatSpec& spec);

// One (sign, shift) term per digit, in digit order. The functional MAC
// consumes these directly.
struct DigitTerm {
    int8_t sign;    // +1 or -1
    uint8_t shift;  // 0..15
};
void decode_terms(Code w, const FormatSpec& spec, DigitTerm* out);

// ---------------------------------------------------------------------------
// Table of quantization levels (TQL): every value representable by a format,
// deduplicated and sorted ascending; each level keeps the canonical code
// (the numerically smallest packed code that decodes to it).
// ---------------------------------------------------------------------------

struct QuantTable {
    FormatSpec format;
    std::vector<double> levels;   // ascending, distinct
    std::vector<int64_t> raw;     // levels / scale, exact integers
    std::vector<Code> codes;      // canonical code per level

    size_t size() const { return levels.size(); }

    // Index of the level nearest to v. Exact ties prefer the smaller
    // absolute value; ties on magnitude prefer the smaller packed code.
    size_t nearest_index(double v) const;
};

QuantTable enumerate_levels(const FormatSpec& spec);

Code encode(double v, const QuantTable& table);

// ---------------------------------------------------------------------------
// Bit packing: codes are concatenated bit-contiguously, MSB first, with the
// final byte zero-padded. unpack(pack(x)) == x.
// ---------------------------------------------------------------------------

std::vector<uint8_t> pack_codes(const std::vector<Code>& codes, const FormatSpec& spec);
std::vector<Code> unpack_codes(const std::vector<uint8_t>& bytes, size_t count,
                               const FormatSpec& spec);

// ---------------------------------------------------------------------------
// Quantized tensor container (CQNT): CTNS-style header with magic "CQNT",
// a length-prefixed FormatSpec JSON blob, then the packed code payload.
//
//   bytes 0-3   magic "CQNT"
//   bytes 4-5   version, u16 little-endian, currently 1
//   byte  6     reserved (0)
//   byte  7     rank, 1..4
//   then        rank x u32 dims, little-endian
//   then        u32 json length + FormatSpec JSON bytes
//   then        packed codes, count = product(dims)
// ---------------------------------------------------------------------------

struct QuantizedTensor {
    std::vector<Code> codes;
    FormatSpec format;
    std::vector<uint32_t> dims;

    size_t size() const;
    void validate() const;
};

QuantizedTensor read_quantized_tensor(const std::string& path);
void write_quantized_tensor(const QuantizedTensor& t, const std::string& path);

}  // namespace elpq
