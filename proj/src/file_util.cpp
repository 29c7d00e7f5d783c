// SPDX-License-Identifier: Apache-2.0
#include "tensorize/file_util.hpp"

#include <atomic>
#include <fstream>
#include <system_error>

#include <unistd.h>

#include "tensorize/errors.hpp"

namespace tensorize {

const char* to_string(DataError::Kind kind) noexcept {
    switch (kind) {
    case DataError::Kind::io: return "io";
    case DataError::Kind::truncated_file: return "truncated_file";
    case DataError::Kind::malformed_json: return "malformed_json";
    case DataError::Kind::offset_overlap: return "offset_overlap";
    case DataError::Kind::offset_overflow: return "offset_overflow";
    case DataError::Kind::unknown_dtype: return "unknown_dtype";
    case DataError::Kind::name_collision: return "name_collision";
    case DataError::Kind::missing_tensor: return "missing_tensor";
    case DataError::Kind::schema: return "schema";
    }
    return "unknown";
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<unsigned> counter{0};
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError(DataError::Kind::io, "cannot open " + tmp.string() + " for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ignored;
            std::filesystem::remove(tmp, ignored);
            throw DataError(DataError::Kind::io, "failed writing " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignored;
        std::filesystem::remove(tmp, ignored);
        throw DataError(DataError::Kind::io, "cannot move output into place at " + path.string() + ": " + ec.message());
    }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(DataError::Kind::io, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(DataError::Kind::io, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace tensorize
