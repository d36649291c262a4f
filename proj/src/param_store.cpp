#include "nrtr/params.hpp"

#include <cstring>
#include <fstream>

namespace nrtr {

namespace {

constexpr char kMagic[4] = {'N', 'R', 'T', 'P'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void write_le(std::ofstream& out, U value) {
    std::uint8_t buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i)
        buf[i] = static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::ifstream& in) {
    std::uint8_t buf[sizeof(U)];
    in.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (!in) throw std::runtime_error("parameter store: truncated file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<U>(v);
}

void write_f32(std::ofstream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_le<std::uint32_t>(out, bits);
}

float read_f32(std::ifstream& in) {
    const std::uint32_t bits = read_le<std::uint32_t>(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void write_param_store(const std::string& path, const std::vector<ParamRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write parameter store: " + path);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (r.name.size() > 0xffff)
            throw std::invalid_argument("parameter name too long: " + r.name);
        write_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        out.put(static_cast<char>(r.shape.size()));
        std::int64_t n = 1;
        for (int d : r.shape) {
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (static_cast<std::int64_t>(r.values.size()) != n)
            throw std::invalid_argument("parameter record " + r.name +
                                        ": value count does not match shape");
        for (float f : r.values) write_f32(out, f);
    }
    if (!out) throw std::runtime_error("write failure on parameter store: " + path);
}

std::vector<ParamRecord> read_param_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open parameter store: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("parameter store: bad magic in " + path);
    const int version = in.get();
    if (version != kVersion)
        throw std::runtime_error("parameter store: unsupported version " +
                                 std::to_string(version));
    const std::uint32_t count = read_le<std::uint32_t>(in);
    std::vector<ParamRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamRecord r;
        const std::uint16_t name_len = read_le<std::uint16_t>(in);
        r.name.resize(name_len);
        in.read(r.name.data(), name_len);
        if (!in) throw std::runtime_error("parameter store: truncated file");
        const int rank = in.get();
        if (rank < 0 || rank > 8) throw std::runtime_error("parameter store: bad rank");
        std::int64_t n = 1;
        for (int a = 0; a < rank; ++a) {
            const std::uint32_t d = read_le<std::uint32_t>(in);
            r.shape.push_back(static_cast<int>(d));
            n *= d;
        }
        r.values.resize(static_cast<std::size_t>(n));
        for (std::int64_t k = 0; k < n; ++k) r.values[static_cast<std::size_t>(k)] = read_f32(in);
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace nrtr
