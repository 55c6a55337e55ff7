#pragma once

// On-disk bundle: a directory holding manifest.json plus one raw
// little-endian file per named array.

#include "vslot/common.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vslot {

enum class DType { F32, U8, U16 };

std::string dtype_name(DType d);
DType dtype_from_name(const std::string& name);
std::size_t dtype_size(DType d);

struct ArrayEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;  // little-endian payload

    std::size_t element_count() const;
};

class Archive {
public:
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    void put_f32(const std::string& name, std::vector<std::int64_t> shape, const std::vector<float>& values);
    void put_u8(const std::string& name, std::vector<std::int64_t> shape, const std::vector<std::uint8_t>& values);
    void put_u16(const std::string& name, std::vector<std::int64_t> shape, const std::vector<std::uint16_t>& values);
    /// Stores a 2-D matrix as f32, rows x cols.
    void put_matrix(const std::string& name, const Matrix& m);

    bool has(const std::string& name) const;
    const ArrayEntry& entry(const std::string& name) const;
    const std::vector<ArrayEntry>& entries() const { return arrays_; }

    std::vector<float> get_f32(const std::string& name) const;
    std::vector<std::uint8_t> get_u8(const std::string& name) const;
    std::vector<std::uint16_t> get_u16(const std::string& name) const;
    Matrix get_matrix(const std::string& name) const;

    void save(const std::filesystem::path& dir) const;
    /// Throws FormatError on missing files, unknown dtypes or payloads whose
    /// byte count disagrees with the declared shape.
    static Archive load(const std::filesystem::path& dir);

private:
    void put(ArrayEntry e);

    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<ArrayEntry> arrays_;
};

std::vector<std::uint8_t> encode_f32(const std::vector<float>& values);
std::vector<float> decode_f32(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_u16(const std::vector<std::uint16_t>& values);
std::vector<std::uint16_t> decode_u16(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vslot
