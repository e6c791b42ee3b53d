#include "gap/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gap {

const Tensor& Container::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::runtime_error("container has no tensor named '" + name + "'");
}

bool Container::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void Container::put(const std::string& name, Tensor t) {
    for (auto& [n, existing] : tensors)
        if (n == name) {
            existing = std::move(t);
            return;
        }
    tensors.emplace_back(name, std::move(t));
}

namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw TruncatedFileError(std::string("truncated file while reading ") + what);
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return std::bit_cast<double>(bits);
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void write_container(const std::string& path, const Container& c) {
    std::string out;
    out += "GAPC";
    put_u32(out, kContainerVersion);
    put_u32(out, static_cast<uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        if (name.size() > 0xffff) throw std::runtime_error("tensor name too long: " + name);
        put_u16(out, static_cast<uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.dims.size()));
        size_t n = 1;
        for (int d : t.dims) {
            if (d <= 0) throw ShapeError("tensor '" + name + "' has non-positive dim");
            put_u32(out, static_cast<uint32_t>(d));
            n *= static_cast<size_t>(d);
        }
        if (n != t.data.size())
            throw ShapeError("tensor '" + name + "' dims do not match data size");
        for (double v : t.data) put_f64(out, v);
    }
    if (c.json.size() > 0xffffffffull) throw std::runtime_error("json blob too long");
    put_u32(out, static_cast<uint32_t>(c.json.size()));
    out += c.json;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};

    const std::string magic = r.bytes(4, "magic");
    if (magic != "GAPC") throw BadMagicError("bad magic in " + path);
    const uint32_t version = r.u32("version");
    if (version != kContainerVersion)
        throw VersionError("unsupported container version " + std::to_string(version));

    Container c;
    const uint32_t count = r.u32("tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16("tensor name length");
        const std::string name = r.bytes(name_len, "tensor name");
        const uint8_t ndim = r.u8("ndim");
        Tensor t;
        size_t n = 1;
        for (int d = 0; d < ndim; ++d) {
            const uint32_t dim = r.u32("dim");
            if (dim == 0) throw ShapeError("tensor '" + name + "' has zero dim");
            t.dims.push_back(static_cast<int>(dim));
            n *= dim;
        }
        // validate the advertised extent against what the file can hold
        // before touching the payload, so a bad header never partially loads
        if (n * 8 > buf.size() - r.pos)
            throw ShapeError("tensor '" + name + "' advertises " + std::to_string(n) +
                             " elements but the file is too small");
        t.data.resize(n);
        for (size_t j = 0; j < n; ++j) t.data[j] = r.f64("tensor data");
        c.tensors.emplace_back(name, std::move(t));
    }
    const uint32_t json_len = r.u32("json length");
    c.json = r.bytes(json_len, "json blob");
    return c;
}

}  // namespace gap
