#include "tg/serialize.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace tg {

namespace {

constexpr char kMagic[4] = {'T', 'G', 'T', 'F'};
constexpr uint32_t kVersion = 1;

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

template <class T>
void put(std::vector<uint8_t>& buf, T v) {
    const size_t at = buf.size();
    buf.resize(at + sizeof(T));
    std::memcpy(buf.data() + at, &v, sizeof(T));
}

void put_bytes(std::vector<uint8_t>& buf, const void* p, size_t n) {
    const size_t at = buf.size();
    buf.resize(at + n);
    std::memcpy(buf.data() + at, p, n);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    template <class T>
    T take() {
        if (pos + sizeof(T) > buf.size()) throw CheckpointError("checkpoint truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::vector<uint8_t> take_bytes(size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
        std::vector<uint8_t> out(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos + n));
        pos += n;
        return out;
    }
};

template <class T>
std::vector<uint8_t> to_bytes(const std::vector<T>& v) {
    std::vector<uint8_t> out(v.size() * sizeof(T));
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

template <class T>
std::vector<T> from_bytes(const std::vector<uint8_t>& b, const std::string& name) {
    if (b.size() % sizeof(T) != 0) throw CheckpointError("record '" + name + "' has misaligned payload");
    std::vector<T> out(b.size() / sizeof(T));
    std::memcpy(out.data(), b.data(), b.size());
    return out;
}

size_t checked_numel(const std::vector<int>& dims, size_t count, const std::string& name) {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    if (n != count)
        throw DimensionError("record '" + name + "': " + std::to_string(count) + " values for dims product " +
                             std::to_string(n));
    return n;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const auto table = make_crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void TensorFile::set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    meta.emplace_back(key, value);
}

const std::string& TensorFile::get_meta(const std::string& key) const {
    for (const auto& kv : meta)
        if (kv.first == key) return kv.second;
    throw CheckpointError("checkpoint missing meta key '" + key + "'");
}

bool TensorFile::has_meta(const std::string& key) const {
    for (const auto& kv : meta)
        if (kv.first == key) return true;
    return false;
}

void TensorFile::add_f32(const std::string& name, std::vector<int> dims, const std::vector<float>& values) {
    checked_numel(dims, values.size(), name);
    records.push_back({name, std::move(dims), DType::f32, to_bytes(values)});
}

void TensorFile::add_f64(const std::string& name, std::vector<int> dims, const std::vector<double>& values) {
    checked_numel(dims, values.size(), name);
    records.push_back({name, std::move(dims), DType::f64, to_bytes(values)});
}

void TensorFile::add_u32(const std::string& name, std::vector<int> dims, const std::vector<uint32_t>& values) {
    checked_numel(dims, values.size(), name);
    records.push_back({name, std::move(dims), DType::u32, to_bytes(values)});
}

void TensorFile::add_u64(const std::string& name, std::vector<int> dims, const std::vector<uint64_t>& values) {
    checked_numel(dims, values.size(), name);
    records.push_back({name, std::move(dims), DType::u64, to_bytes(values)});
}

bool TensorFile::has(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return true;
    return false;
}

const TensorRecord& TensorFile::get(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return r;
    throw CheckpointError("checkpoint missing tensor '" + name + "'");
}

std::vector<float> TensorFile::get_f32(const std::string& name) const {
    const TensorRecord& r = get(name);
    if (r.dtype != DType::f32) throw CheckpointError("record '" + name + "' is not f32");
    return from_bytes<float>(r.bytes, name);
}

std::vector<double> TensorFile::get_f64(const std::string& name) const {
    const TensorRecord& r = get(name);
    if (r.dtype != DType::f64) throw CheckpointError("record '" + name + "' is not f64");
    return from_bytes<double>(r.bytes, name);
}

std::vector<uint32_t> TensorFile::get_u32(const std::string& name) const {
    const TensorRecord& r = get(name);
    if (r.dtype != DType::u32) throw CheckpointError("record '" + name + "' is not u32");
    return from_bytes<uint32_t>(r.bytes, name);
}

std::vector<uint64_t> TensorFile::get_u64(const std::string& name) const {
    const TensorRecord& r = get(name);
    if (r.dtype != DType::u64) throw CheckpointError("record '" + name + "' is not u64");
    return from_bytes<uint64_t>(r.bytes, name);
}

void TensorFile::save(const std::string& path) const {
    std::vector<uint8_t> body;
    std::string meta_text;
    for (const auto& kv : meta) meta_text += kv.first + "=" + kv.second + "\n";
    put<uint32_t>(body, static_cast<uint32_t>(meta_text.size()));
    put_bytes(body, meta_text.data(), meta_text.size());
    put<uint64_t>(body, records.size());
    for (const auto& r : records) {
        put<uint32_t>(body, static_cast<uint32_t>(r.name.size()));
        put_bytes(body, r.name.data(), r.name.size());
        put<uint32_t>(body, static_cast<uint32_t>(r.dims.size()));
        for (int d : r.dims) put<uint64_t>(body, static_cast<uint64_t>(d));
        put<uint8_t>(body, static_cast<uint8_t>(r.dtype));
        put<uint64_t>(body, r.bytes.size());
        put_bytes(body, r.bytes.data(), r.bytes.size());
    }

    std::vector<uint8_t> head;
    put_bytes(head, kMagic, 4);
    put<uint32_t>(head, kVersion);
    put<uint32_t>(head, crc32(body.data(), body.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(head.data()), static_cast<long>(head.size()));
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<long>(body.size()));
    if (!f) throw CheckpointError("write failed for '" + path + "'");
}

TensorFile TensorFile::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open '" + path + "'");
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, 4) != 0)
        throw CheckpointError("'" + path + "' is not a tensor container");
    Reader rd{raw, 4};
    const uint32_t version = rd.take<uint32_t>();
    if (version != kVersion)
        throw CheckpointError("'" + path + "' has unsupported version " + std::to_string(version));
    const uint32_t stored_crc = rd.take<uint32_t>();
    const uint32_t actual_crc = crc32(raw.data() + rd.pos, raw.size() - rd.pos);
    if (stored_crc != actual_crc) throw CheckpointError("checksum failure for '" + path + "'");

    TensorFile tf;
    const uint32_t meta_len = rd.take<uint32_t>();
    const std::vector<uint8_t> meta_bytes = rd.take_bytes(meta_len);
    std::string line;
    for (uint8_t b : meta_bytes) {
        if (b == '\n') {
            const size_t eq = line.find('=');
            if (eq != std::string::npos) tf.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
            line.clear();
        } else {
            line.push_back(static_cast<char>(b));
        }
    }
    const uint64_t count = rd.take<uint64_t>();
    for (uint64_t i = 0; i < count; ++i) {
        TensorRecord r;
        const uint32_t name_len = rd.take<uint32_t>();
        const auto name_bytes = rd.take_bytes(name_len);
        r.name.assign(name_bytes.begin(), name_bytes.end());
        const uint32_t rank = rd.take<uint32_t>();
        for (uint32_t d = 0; d < rank; ++d) r.dims.push_back(static_cast<int>(rd.take<uint64_t>()));
        r.dtype = static_cast<DType>(rd.take<uint8_t>());
        const uint64_t byte_len = rd.take<uint64_t>();
        r.bytes = rd.take_bytes(byte_len);
        tf.records.push_back(std::move(r));
    }
    return tf;
}

}  // namespace tg
