#include "vslot/archive.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vslot {

namespace fs = std::filesystem;

std::string dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "f32";
        case DType::U8: return "u8";
        case DType::U16: return "u16";
    }
    return "?";
}

DType dtype_from_name(const std::string& name) {
    if (name == "f32") return DType::F32;
    if (name == "u8") return DType::U8;
    if (name == "u16") return DType::U16;
    throw FormatError("unknown array dtype '" + name + "'");
}

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::U8: return 1;
        case DType::U16: return 2;
    }
    return 0;
}

std::size_t ArrayEntry::element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= static_cast<std::size_t>(s);
    return n;
}

std::vector<std::uint8_t> encode_f32(const std::vector<float>& values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return out;
}

std::vector<float> decode_f32(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() % 4 != 0) throw FormatError("f32 payload is not a multiple of 4 bytes");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::vector<std::uint8_t> encode_u16(const std::vector<std::uint16_t>& values) {
    std::vector<std::uint8_t> out(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[2 * i] = static_cast<std::uint8_t>(values[i] & 0xff);
        out[2 * i + 1] = static_cast<std::uint8_t>(values[i] >> 8);
    }
    return out;
}

std::vector<std::uint16_t> decode_u16(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() % 2 != 0) throw FormatError("u16 payload has odd byte count");
    std::vector<std::uint16_t> out(bytes.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

namespace {

void check_name(const std::string& name) {
    const bool ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
    if (!ok) throw FormatError("invalid array name '" + name + "'");
}

std::size_t shape_count(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) {
        if (s < 0) throw FormatError("negative array dimension");
        n *= static_cast<std::size_t>(s);
    }
    return n;
}

}  // namespace

void Archive::put(ArrayEntry e) {
    check_name(e.name);
    if (e.bytes.size() != shape_count(e.shape) * dtype_size(e.dtype))
        throw FormatError("array '" + e.name + "' payload does not match its shape");
    auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const ArrayEntry& a) { return a.name == e.name; });
    if (it != arrays_.end())
        *it = std::move(e);
    else
        arrays_.push_back(std::move(e));
}

void Archive::put_f32(const std::string& name, std::vector<std::int64_t> shape, const std::vector<float>& values) {
    put({name, DType::F32, std::move(shape), encode_f32(values)});
}

void Archive::put_u8(const std::string& name, std::vector<std::int64_t> shape,
                     const std::vector<std::uint8_t>& values) {
    put({name, DType::U8, std::move(shape), values});
}

void Archive::put_u16(const std::string& name, std::vector<std::int64_t> shape,
                      const std::vector<std::uint16_t>& values) {
    put({name, DType::U16, std::move(shape), encode_u16(values)});
}

void Archive::put_matrix(const std::string& name, const Matrix& m) {
    std::vector<float> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    put_f32(name, {m.rows(), m.cols()}, v);
}

bool Archive::has(const std::string& name) const {
    return std::any_of(arrays_.begin(), arrays_.end(), [&](const ArrayEntry& a) { return a.name == name; });
}

const ArrayEntry& Archive::entry(const std::string& name) const {
    for (const auto& a : arrays_)
        if (a.name == name) return a;
    throw FormatError("archive has no array named '" + name + "'");
}

std::vector<float> Archive::get_f32(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::F32) throw FormatError("array '" + name + "' is not f32");
    return decode_f32(e.bytes);
}

std::vector<std::uint8_t> Archive::get_u8(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::U8) throw FormatError("array '" + name + "' is not u8");
    return e.bytes;
}

std::vector<std::uint16_t> Archive::get_u16(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::U16) throw FormatError("array '" + name + "' is not u16");
    return decode_u16(e.bytes);
}

Matrix Archive::get_matrix(const std::string& name) const {
    const auto& e = entry(name);
    if (e.shape.size() != 2) throw FormatError("array '" + name + "' is not two-dimensional");
    const auto v = get_f32(name);
    Matrix m(e.shape[0], e.shape[1]);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(v[static_cast<std::size_t>(i)]);
    return m;
}

void Archive::save(const fs::path& dir) const {
    fs::create_directories(dir);
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& a : arrays_) {
        const std::string file = a.name + "." + dtype_name(a.dtype);
        arrays.push_back({{"name", a.name},
                          {"dtype", dtype_name(a.dtype)},
                          {"shape", a.shape},
                          {"file", file},
                          {"bytes", a.bytes.size()},
                          {"byte_order", "little"}});
        write_file_bytes(dir / file, a.bytes);
    }
    nlohmann::json manifest = {{"meta", meta_}, {"arrays", arrays}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Archive Archive::load(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw FormatError("missing manifest " + mpath.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(mpath));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest " + mpath.string() + ": " + e.what());
    }
    Archive ar;
    try {
        ar.meta_ = manifest.value("meta", nlohmann::json::object());
        for (const auto& a : manifest.at("arrays")) {
            ArrayEntry e;
            e.name = a.at("name").get<std::string>();
            e.dtype = dtype_from_name(a.at("dtype").get<std::string>());
            e.shape = a.at("shape").get<std::vector<std::int64_t>>();
            const fs::path file = dir / a.at("file").get<std::string>();
            if (!fs::exists(file)) throw FormatError("missing array file " + file.string());
            e.bytes = read_file_bytes(file);
            const std::size_t expected = shape_count(e.shape) * dtype_size(e.dtype);
            if (e.bytes.size() != expected)
                throw FormatError("array '" + e.name + "' has " + std::to_string(e.bytes.size()) +
                                  " bytes, manifest implies " + std::to_string(expected));
            ar.arrays_.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest " + mpath.string() + ": " + e.what());
    }
    return ar;
}

}  // namespace vslot
