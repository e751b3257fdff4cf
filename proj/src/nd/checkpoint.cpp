#include "vclr/nd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "vclr/error.hpp"

namespace vclr::nd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kFormat = "vclr-ckpt-1";

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& meta) {
    nlohmann::json header;
    header["format"] = kFormat;
    header["endianness"] = "little";
    header["dtype"] = "float64";
    header["step"] = params.step;
    header["meta"] = meta;
    auto& list = header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : params.entries()) {
        const std::uint64_t nbytes = e.tensor.numel() * sizeof(double);
        list.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string text = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : params.entries()) {
        auto d = e.tensor.data();
        os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!os) throw DataError("short write on checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    const std::uint64_t hlen = get_u64(is);
    if (!is || hlen > (1u << 26)) throw DataError("corrupt checkpoint header length: " + path.string());
    std::string text(hlen, '\0');
    is.read(text.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format", "") != kFormat || header.value("endianness", "") != "little" ||
        header.value("dtype", "") != "float64")
        throw DataError("unsupported checkpoint format: " + path.string());
    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    ck.params.step = header.value("step", std::int64_t{0});
    const auto payload_start = is.tellg();
    for (const auto& t : header.at("tensors")) {
        Shape shape = t.at("shape").get<Shape>();
        const auto offset = t.at("offset").get<std::uint64_t>();
        const auto nbytes = t.at("nbytes").get<std::uint64_t>();
        if (nbytes != numel(shape) * sizeof(double))
            throw DataError("checkpoint tensor '" + t.at("name").get<std::string>() + "' size mismatch in " + path.string());
        std::vector<double> data(numel(shape));
        is.seekg(payload_start + static_cast<std::streamoff>(offset));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(nbytes));
        if (!is) throw DataError("truncated checkpoint payload: " + path.string());
        ck.params.add(t.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(data)));
    }
    return ck;
}

ParamStore extract_prefixed(const ParamStore& store, const std::string& prefix) {
    ParamStore out;
    for (const auto& e : store.entries())
        if (e.name.starts_with(prefix)) out.add(e.name.substr(prefix.size()), e.tensor.detach());
    out.step = store.step;
    return out;
}

void append_prefixed(ParamStore& dst, const ParamStore& src, const std::string& prefix) {
    for (const auto& e : src.entries()) dst.add(prefix + e.name, e.tensor.detach());
}

}  // namespace vclr::nd
