#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace brainattr {

// Writes to a sibling temp file and renames into place, so a failed command
// never leaves a truncated output behind.
void write_file_atomic(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

// Shortest round-trippable decimal formatting for doubles; stable across
// runs so report files are bit-identical under identical configs.
std::string format_double(double v);

// Binary stream helpers with fixed little-endian field order.
class BinaryWriter {
public:
    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f64(double v);
    void f64_array(const std::vector<double>& v);
    void str(const std::string& s);
    const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::string data) : data_(std::move(data)) {}
    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    double f64();
    std::vector<double> f64_array(size_t n);
    std::string str();
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(size_t n) const;
    std::string data_;
    size_t pos_ = 0;
};

}  // namespace brainattr
