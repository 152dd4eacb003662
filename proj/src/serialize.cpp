#include "subjectdiff/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "subjectdiff/error.hpp"

namespace sdiff {

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    uint32_t nd = (uint32_t)t.shape.size();
    os.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
    for (int d : t.shape) {
        int32_t v = d;
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    os.write(reinterpret_cast<const char*>(t.v.data()), (std::streamsize)(t.v.size() * sizeof(real)));
}

Tensor read_tensor(std::istream& is) {
    uint32_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), sizeof(nd));
    SDIFF_CHECK(is.good() && nd <= 8, ErrorKind::Corruption, "bad tensor header");
    std::vector<int> shape(nd);
    for (uint32_t i = 0; i < nd; ++i) {
        int32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        SDIFF_CHECK(is.good() && v >= 0, ErrorKind::Corruption, "bad tensor dim");
        shape[i] = v;
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.v.data()), (std::streamsize)(t.v.size() * sizeof(real)));
    SDIFF_CHECK(is.good(), ErrorKind::Corruption, "truncated tensor data");
    return t;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    SDIFF_CHECK(os.good(), ErrorKind::Io, "cannot open for write: " + path);
    os.write(bytes.data(), (std::streamsize)bytes.size());
    SDIFF_CHECK(os.good(), ErrorKind::Io, "write failed: " + path);
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    SDIFF_CHECK(is.good(), ErrorKind::Io, "cannot open for read: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

uint64_t hash_tensor(const Tensor& t, uint64_t h) {
    uint32_t nd = (uint32_t)t.shape.size();
    h = fnv1a(&nd, sizeof(nd), h);
    for (int d : t.shape) h = fnv1a(&d, sizeof(d), h);
    return fnv1a(t.v.data(), t.v.size() * sizeof(real), h);
}

}  // namespace sdiff
