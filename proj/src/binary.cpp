#include "fsplat/binary.hpp"

#include <fstream>

namespace fsplat::binary {

void Writer::put_padded(const std::string &s, std::size_t width) {
    std::vector<std::uint8_t> field(width, 0);
    std::memcpy(field.data(), s.data(), std::min(s.size(), width));
    put_bytes(field);
}

std::string Reader::get_padded(std::size_t width) {
    auto field = get_bytes(width);
    std::string s(reinterpret_cast<const char *>(field.data()), width);
    return s.substr(0, s.find('\0'));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

} // namespace fsplat::binary
