#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pdenet/errors.hpp"

namespace pdenet::binio {

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Little-endian cursor over an in-memory file; every read names the field it
/// is decoding so truncation errors point at the offending part.
class Reader {
 public:
  Reader(std::vector<char> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  std::string bytes(std::size_t n, std::string_view field) {
    need(n, field);
    std::string out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(std::string_view field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(std::string_view field) { return std::bit_cast<float>(u32(field)); }

  void f32_array(float* out, std::size_t count, std::string_view field) {
    if (remaining() / 4 < count) {
      throw FormatError(source_ + ": truncated " + std::string(field) + " (expected " + std::to_string(count) +
                        " floats, found " + std::to_string(remaining() / 4) + ")");
    }
    for (std::size_t i = 0; i < count; ++i) out[i] = f32(field);
  }

  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError(source_ + ": truncated while reading " + std::string(field));
    }
  }

  std::vector<char> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading " + path.string());
  return data;
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("error while writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

}  // namespace pdenet::binio
