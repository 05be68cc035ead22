#include "polarfuse/tensor_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace polarfuse {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

struct Reader {
    std::ifstream in;
    std::string path;

    Reader(const std::string& p, const char* format) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError(std::string(format) + ": cannot open '" + p + "'");
    }

    void bytes(void* dst, std::size_t n, const char* field) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw IoError("'" + path + "': truncated while reading " + field);
    }

    std::uint8_t u8(const char* field) {
        unsigned char b;
        bytes(&b, 1, field);
        return b;
    }

    std::uint16_t u16(const char* field) {
        unsigned char b[2];
        bytes(b, 2, field);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32(const char* field) {
        unsigned char b[4];
        bytes(b, 4, field);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float f32(const char* field) {
        std::uint32_t bits = u32(field);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64(const char* field) {
        unsigned char b[8];
        bytes(b, 8, field);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    bool at_eof() {
        in.peek();
        return in.eof();
    }
};

std::vector<std::size_t> read_dims(Reader& r, std::uint8_t ndim) {
    std::vector<std::size_t> dims(ndim);
    for (std::uint8_t i = 0; i < ndim; ++i) {
        std::uint32_t d = r.u32("dims");
        if (d == 0) throw IoError("'" + r.path + "': invalid header field dims (zero extent)");
        dims[i] = d;
    }
    return dims;
}

}  // namespace

void write_pft1(const std::string& path, const Tensor& t, bool as_float32) {
    if (t.rank() == 0 || t.rank() > 255)
        throw IoError("write_pft1: unsupported rank " + std::to_string(t.rank()));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("write_pft1: cannot open '" + path + "' for writing");
    os.write("PFT1", 4);
    os.put(as_float32 ? 0 : 1);
    os.put(static_cast<char>(t.rank()));
    for (std::size_t d : t.dims()) {
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw IoError("write_pft1: dim too large for u32");
        put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (as_float32)
            put_f32(os, static_cast<float>(t[i]));
        else
            put_f64(os, t[i]);
    }
    if (!os) throw IoError("write_pft1: write failure on '" + path + "'");
}

Tensor read_pft1(const std::string& path) {
    Reader r(path, "read_pft1");
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "PFT1", 4) != 0)
        throw IoError("'" + path + "': invalid header field magic");
    std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0 && dtype != 1)
        throw IoError("'" + path + "': invalid header field dtype (" + std::to_string(dtype) + ")");
    std::uint8_t ndim = r.u8("ndim");
    if (ndim == 0) throw IoError("'" + path + "': invalid header field ndim (zero)");
    std::vector<std::size_t> dims = read_dims(r, ndim);
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i)
        data[i] = dtype == 0 ? static_cast<double>(r.f32("payload")) : r.f64("payload");
    for (double v : data)
        if (!std::isfinite(v)) throw IoError("'" + path + "': non-finite value in payload");
    return Tensor::from_data(std::move(dims), std::move(data));
}

void write_pwa1(const std::string& path, const ParamStore& params) {
    if (params.count() > std::numeric_limits<std::uint32_t>::max())
        throw IoError("write_pwa1: too many entries");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("write_pwa1: cannot open '" + path + "' for writing");
    os.write("PWA1", 4);
    put_u32(os, static_cast<std::uint32_t>(params.count()));
    // ParamStore iterates lexicographically, which is the required entry order
    for (const auto& [name, e] : params) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw IoError("write_pwa1: name too long: '" + name + "'");
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(e.value.rank()));
        for (std::size_t d : e.value.dims()) put_u32(os, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < e.value.size(); ++i)
            put_f32(os, static_cast<float>(e.value[i]));
    }
    if (!os) throw IoError("write_pwa1: write failure on '" + path + "'");
}

ParamStore read_pwa1(const std::string& path) {
    Reader r(path, "read_pwa1");
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "PWA1", 4) != 0)
        throw IoError("'" + path + "': invalid header field magic");
    std::uint32_t count = r.u32("entry count");
    ParamStore store;
    std::string prev;
    for (std::uint32_t k = 0; k < count; ++k) {
        std::uint16_t name_len = r.u16("name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "name");
        if (k > 0 && !(prev < name)) {
            if (prev == name) throw IoError("'" + path + "': duplicate entry name '" + name + "'");
            throw IoError("'" + path + "': entries not sorted by name at '" + name + "'");
        }
        prev = name;
        std::uint8_t ndim = r.u8("ndim");
        if (ndim == 0) throw IoError("'" + path + "': invalid header field ndim (zero)");
        std::vector<std::size_t> dims = read_dims(r, ndim);
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(r.f32("payload"));
        for (double v : data)
            if (!std::isfinite(v))
                throw IoError("'" + path + "': non-finite value in entry '" + name + "'");
        store.add(name, Tensor::from_data(std::move(dims), std::move(data)));
    }
    if (!r.at_eof()) throw IoError("'" + path + "': trailing bytes after last entry");
    return store;
}

}  // namespace polarfuse
