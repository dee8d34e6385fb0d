#include "elpq/elpbsd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace elpq {

namespace {

int ceil_log2(size_t n) {
    int bits = 0;
    while ((size_t(1) << bits) < n) ++bits;
    return bits;
}

}  // namespace

int DigitSpec::index_bits() const {
    return shift_counts.size() <= 1 ? 0 : ceil_log2(shift_counts.size());
}

void DigitSpec::validate() const {
    if (shift_counts.empty()) throw codec_error("digit: shift_counts must be non-empty");
    for (size_t i = 0; i < shift_counts.size(); ++i) {
        if (shift_counts[i] > 15) throw codec_error("digit: shift counts must be <= 15");
        if (i > 0 && shift_counts[i] <= shift_counts[i - 1])
            throw codec_error("digit: shift_counts must be strictly increasing");
    }
}

int FormatSpec::bit_width() const {
    int total = 0;
    for (const DigitSpec& d : digits) total += d.bits();
    return total;
}

int FormatSpec::max_shift() const {
    int best = 0;
    for (const DigitSpec& d : digits)
        best = std::max(best, int(d.shift_counts.back()));
    return best;
}

void FormatSpec::validate() const {
    if (digits.empty()) throw codec_error("format: needs at least one digit");
    for (const DigitSpec& d : digits) d.validate();
    if (bit_width() > 16) throw codec_error("format: bit width exceeds 16");
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw codec_error("format: scale must be positive and finite");
}

std::string FormatSpec::to_json() const {
    nlohmann::json j;
    j["scale"] = scale;
    j["digits"] = nlohmann::json::array();
    for (const DigitSpec& d : digits) {
        nlohmann::json jd;
        jd["signed"] = d.is_signed;
        jd["shifts"] = d.shift_counts;
        j["digits"].push_back(jd);
    }
    return j.dump();
}

FormatSpec FormatSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw codec_error(std::string("format spec parse error: ") + e.what());
    }
    FormatSpec spec;
    spec.scale = j.value("scale", 1.0);
    if (!j.contains("digits")) throw codec_error("format spec: missing digits");
    for (const auto& jd : j.at("digits")) {
        DigitSpec d;
        d.is_signed = jd.at("signed").get<bool>();
        d.shift_counts = jd.at("shifts").get<std::vector<uint8_t>>();
        spec.digits.push_back(std::move(d));
    }
    spec.validate();
    return spec;
}

uint32_t code_space(const FormatSpec& spec) { return uint32_t(1) << spec.bit_width(); }

namespace {

// Splits a code into per-digit (sign, index) fields. Digit 0 occupies the
// most significant group.
struct FieldCursor {
    Code code;
    int remaining;

    uint32_t take(int nbits) {
        remaining -= nbits;
        return (uint32_t(code) >> remaining) & ((uint32_t(1) << nbits) - 1);
    }
};

}  // namespace

bool code_is_valid(Code w, const FormatSpec& spec) {
    const int bw = spec.bit_width();
    if (bw < 16 && (uint32_t(w) >> bw) != 0) return false;
    FieldCursor cur{w, bw};
    for (const DigitSpec& d : spec.digits) {
        if (d.is_signed) cur.take(1);
        const uint32_t idx = cur.take(d.index_bits());
        if (idx >= d.shift_counts.size()) return false;
    }
    return true;
}

void decode_terms(Code w, const FormatSpec& spec, DigitTerm* out) {
    const int bw = spec.bit_width();
    if (bw < 16 && (uint32_t(w) >> bw) != 0)
        throw codec_error("code has bits beyond the format width");
    FieldCursor cur{w, bw};
    for (size_t i = 0; i < spec.digits.size(); ++i) {
        const DigitSpec& d = spec.digits[i];
        int8_t sign = 1;
        if (d.is_signed) sign = cur.take(1) ? -1 : 1;
        const uint32_t idx = cur.take(d.index_bits());
        if (idx >= d.shift_counts.size())
            throw codec_error("digit " + std::to_string(i) + ": index field " +
                              std::to_string(idx) + " out of range (n=" +
                              std::to_string(d.shift_counts.size()) + ")");
        out[i] = DigitTerm{sign, d.shift_counts[idx]};
    }
}

int64_t decode_raw(Code w, const FormatSpec& spec) {
    DigitTerm terms[16];
    decode_terms(w, spec, terms);
    int64_t sum = 0;
    for (size_t i = 0; i < spec.digits.size(); ++i)
        sum += int64_t(terms[i].sign) << terms[i].shift;
    return sum;
}

double decode(Code w, const FormatSpec& spec) {
    return spec.scale * double(decode_raw(w, spec));
}

QuantTable enumerate_levels(const FormatSpec& spec) {
    spec.validate();
    // raw level -> smallest code producing it
    std::map<int64_t, Code> canonical;
    const uint32_t space = code_space(spec);
    for (uint32_t c = 0; c < space; ++c) {
        const Code code = static_cast<Code>(c);
        if (!code_is_valid(code, spec)) continue;
        const int64_t raw = decode_raw(code, spec);
        auto it = canonical.find(raw);
        if (it == canonical.end()) canonical.emplace(raw, code);
        // map iteration gives ascending c, so the first hit is the smallest
    }
    QuantTable table;
    table.format = spec;
    table.levels.reserve(canonical.size());
    table.raw.reserve(canonical.size());
    table.codes.reserve(canonical.size());
    for (const auto& [raw, code] : canonical) {
        table.raw.push_back(raw);
        table.levels.push_back(spec.scale * double(raw));
        table.codes.push_back(code);
    }
    return table;
}

size_t QuantTable::nearest_index(double v) const {
    if (levels.empty()) throw codec_error("quantization table is empty");
    const auto it = std::lower_bound(levels.begin(), levels.end(), v);
    if (it == levels.begin()) return 0;
    if (it == levels.end()) return levels.size() - 1;
    const size_t hi = size_t(it - levels.begin());
    const size_t lo = hi - 1;
    const double dlo = v - levels[lo];
    const double dhi = levels[hi] - v;
    if (dlo < dhi) return lo;
    if (dhi < dlo) return hi;
    // exact tie: smaller absolute value wins, then smaller packed code
    const double alo = std::fabs(levels[lo]);
    const double ahi = std::fabs(levels[hi]);
    if (alo < ahi) return lo;
    if (ahi < alo) return hi;
    return codes[lo] < codes[hi] ? lo : hi;
}

Code encode(double v, const QuantTable& table) {
    return table.codes[table.nearest_index(v)];
}

std::vector<uint8_t> pack_codes(const std::vector<Code>& codes, const FormatSpec& spec) {
    const int bw = spec.bit_width();
    std::vector<uint8_t> out((codes.size() * bw + 7) / 8, 0);
    size_t bitpos = 0;
    for (Code c : codes) {
        if (!code_is_valid(c, spec)) throw codec_error("pack: invalid code");
        for (int b = bw - 1; b >= 0; --b) {
            if ((c >> b) & 1) out[bitpos / 8] |= uint8_t(0x80u >> (bitpos % 8));
            ++bitpos;
        }
    }
    return out;
}

std::vector<Code> unpack_codes(const std::vector<uint8_t>& bytes, size_t count,
                               const FormatSpec& spec) {
    const int bw = spec.bit_width();
    if (bytes.size() < (count * bw + 7) / 8)
        throw codec_error("unpack: truncated code stream");
    std::vector<Code> codes(count, 0);
    size_t bitpos = 0;
    for (size_t i = 0; i < count; ++i) {
        Code c = 0;
        for (int b = 0; b < bw; ++b) {
            c = Code(c << 1);
            if (bytes[bitpos / 8] & (0x80u >> (bitpos % 8))) c = Code(c | 1);
            ++bitpos;
        }
        if (!code_is_valid(c, spec)) throw codec_error("unpack: invalid code in stream");
        codes[i] = c;
    }
    return codes;
}

size_t QuantizedTensor::size() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void QuantizedTensor::validate() const {
    format.validate();
    if (dims.empty() || dims.size() > 4)
        throw codec_error("quantized tensor: rank must be 1..4");
    for (uint32_t d : dims)
        if (d == 0) throw codec_error("quantized tensor: all dims must be >= 1");
    if (codes.size() != size())
        throw codec_error("quantized tensor: code count does not match dims");
}

namespace {

constexpr char kQMagic[4] = {'C', 'Q', 'N', 'T'};

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }
uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

}  // namespace

void write_quantized_tensor(const QuantizedTensor& t, const std::string& path) {
    t.validate();
    std::string out;
    out.append(kQMagic, 4);
    put_u16(out, 1);
    out.push_back(0);  // reserved
    out.push_back(char(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(out, d);
    const std::string json = t.format.to_json();
    put_u32(out, uint32_t(json.size()));
    out.append(json);
    const std::vector<uint8_t> packed = pack_codes(t.codes, t.format);
    out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw io_error("write failed: " + path);
}

QuantizedTensor read_quantized_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file: " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    if (raw.size() < 8) throw io_error(path + ": truncated header");
    if (std::memcmp(raw.data(), kQMagic, 4) != 0) throw io_error(path + ": bad magic");
    if (get_u16(raw.data() + 4) != 1) throw io_error(path + ": unsupported version");
    const uint8_t rank = raw[7];
    if (rank < 1 || rank > 4) throw io_error(path + ": unsupported rank");
    size_t off = 8;
    if (raw.size() < off + size_t(rank) * 4 + 4) throw io_error(path + ": truncated dims");
    QuantizedTensor t;
    t.dims.resize(rank);
    for (int i = 0; i < rank; ++i) {
        t.dims[i] = get_u32(raw.data() + off);
        if (t.dims[i] == 0) throw io_error(path + ": dims must be >= 1");
        off += 4;
    }
    const uint32_t jlen = get_u32(raw.data() + off);
    off += 4;
    if (raw.size() < off + jlen) throw io_error(path + ": truncated format spec");
    t.format = FormatSpec::from_json(std::string(raw.begin() + off, raw.begin() + off + jlen));
    off += jlen;
    const size_t count = t.size();
    const size_t need = (count * size_t(t.format.bit_width()) + 7) / 8;
    if (raw.size() < off + need) throw io_error(path + ": truncated code payload");
    if (raw.size() > off + need) throw io_error(path + ": trailing bytes after payload");
    t.codes = unpack_codes(std::vector<uint8_t>(raw.begin() + off, raw.end()), count, t.format);
    t.validate();
    return t;
}

}  // namespace elpq
