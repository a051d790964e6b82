#include "nodule/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "nodule/errors.hpp"

namespace nodule {

namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params) {
    std::vector<const NamedTensor*> sorted;
    sorted.reserve(params.size());
    for (const auto& p : params) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const NamedTensor* a, const NamedTensor* b) { return a->name < b->name; });

    std::string out;
    out += "NDCK";
    put_u32(out, 1u);
    put_u32(out, static_cast<uint32_t>(sorted.size()));
    for (const NamedTensor* p : sorted) {
        if (p->name.size() > 0xffff)
            throw ValidationError(cat("parameter name too long: ", p->name));
        put_u16(out, static_cast<uint16_t>(p->name.size()));
        out += p->name;
        const auto& shape = p->tensor.shape();
        out.push_back(static_cast<char>(shape.size()));
        for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
        for (float f : p->tensor.vec()) put_f32(out, f);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(cat("cannot open checkpoint for writing: ", path));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(cat("write failed: ", path));
}

void load_checkpoint(const std::string& path, std::vector<NamedTensor>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(cat("cannot open checkpoint: ", path));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(buf);
    if (r.bytes(4) != "NDCK") throw IoError(cat("bad checkpoint magic in ", path));
    const uint32_t version = r.u32();
    if (version != 1) throw IoError(cat("unsupported checkpoint version ", version));
    const uint32_t count = r.u32();

    std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u16());
        const int rank = r.u8();
        std::vector<int> shape(rank);
        int64_t n = 1;
        for (int k = 0; k < rank; ++k) {
            shape[k] = static_cast<int>(r.u32());
            n *= shape[k];
        }
        std::vector<float> data(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) data[k] = r.f32();
        if (!entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data))).second)
            throw IoError(cat("duplicate parameter name in checkpoint: ", path));
    }
    if (r.pos != buf.size()) throw IoError(cat("trailing bytes in checkpoint: ", path));

    if (entries.size() != params.size())
        throw ValidationError(cat("checkpoint has ", entries.size(), " tensors, model has ",
                                  params.size()));
    for (auto& p : params) {
        auto it = entries.find(p.name);
        if (it == entries.end())
            throw ValidationError(cat("checkpoint missing parameter ", p.name));
        if (it->second.first != p.tensor.shape())
            throw ValidationError(cat("checkpoint shape ", shape_str(it->second.first),
                                      " for ", p.name, " does not match model ",
                                      shape_str(p.tensor.shape())));
        p.tensor.vec() = std::move(it->second.second);
    }
}

}  // namespace nodule
