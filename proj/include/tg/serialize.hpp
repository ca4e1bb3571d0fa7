#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tg/errors.hpp"

namespace tg {

// Little-endian binary tensor container used by every checkpoint file.
// Layout: magic "TGTF", u32 version, u32 crc32 of everything that follows,
// u32 meta length + meta bytes (key=value lines), u64 record count, then per
// record: u32 name length, name, u32 rank, u64 dims, u8 dtype tag,
// u64 byte length, raw data.
enum class DType : uint8_t { f32 = 0, f64 = 1, u32 = 2, u8 = 3, u64 = 4 };

struct TensorRecord {
    std::string name;
    std::vector<int> dims;
    DType dtype = DType::f32;
    std::vector<uint8_t> bytes;

    size_t numel() const {
        size_t n = 1;
        for (int d : dims) n *= static_cast<size_t>(d);
        return n;
    }
};

class TensorFile {
  public:
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<TensorRecord> records;

    void set_meta(const std::string& key, const std::string& value);
    const std::string& get_meta(const std::string& key) const;
    bool has_meta(const std::string& key) const;

    void add_f32(const std::string& name, std::vector<int> dims, const std::vector<float>& values);
    void add_f64(const std::string& name, std::vector<int> dims, const std::vector<double>& values);
    void add_u32(const std::string& name, std::vector<int> dims, const std::vector<uint32_t>& values);
    void add_u64(const std::string& name, std::vector<int> dims, const std::vector<uint64_t>& values);

    bool has(const std::string& name) const;
    const TensorRecord& get(const std::string& name) const;
    std::vector<float> get_f32(const std::string& name) const;
    std::vector<double> get_f64(const std::string& name) const;
    std::vector<uint32_t> get_u32(const std::string& name) const;
    std::vector<uint64_t> get_u64(const std::string& name) const;

    void save(const std::string& path) const;
    static TensorFile load(const std::string& path);
};

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace tg
