#pragma once

// Model checkpoint: "SGNM", u32 version, u32 length + config JSON, u32 tensor
// count, then per tensor: u32 length + name, u32 rows, u32 cols, u32 count,
// count little-endian f32 values.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "config.hpp"
#include "corpus_io.hpp"
#include "error.hpp"
#include "model.hpp"

namespace sgnalign {

inline constexpr std::array<char, 4> kCheckpointMagic{'S', 'G', 'N', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    AlignerParams<float> params;
};

namespace detail {

inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what) {
    std::uint32_t n = 0;
    if (!get_u32(in, n)) throw LengthError(std::string("checkpoint truncated in ") + what);
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw LengthError(std::string("checkpoint truncated in ") + what);
    return s;
}

} // namespace detail

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kCheckpointMagic.data(), 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_string(out, to_json(ck.config).dump());
    std::uint32_t count = 0;
    ck.params.visit([&](const std::string&, const Matrix<float>&) { ++count; });
    detail::put_u32(out, count);
    ck.params.visit([&](const std::string& name, const Matrix<float>& m) {
        detail::put_string(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
        detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
        detail::put_u32(out, static_cast<std::uint32_t>(m.data.size()));
        for (float v : m.data) detail::put_f32(out, v);
    });
    if (!out) throw IoError("write failed for " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kCheckpointMagic) throw FormatError(path.string() + ": not a model checkpoint");
    std::uint32_t version = 0;
    if (!detail::get_u32(in, version) || version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version");

    Checkpoint ck;
    try {
        ck.config = config_from_json(nlohmann::json::parse(detail::get_string(in, "config")));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad config block: " + e.what());
    }
    ck.params = AlignerParams<float>(ck.config);

    std::map<std::string, Matrix<float>*> slots;
    for (auto& [name, m] : ck.params.tensors()) slots[name] = m;
    std::uint32_t count = 0;
    if (!detail::get_u32(in, count)) throw LengthError(path.string() + ": truncated tensor table");
    if (count != slots.size()) throw FormatError(path.string() + ": tensor count does not match config");
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string name = detail::get_string(in, "tensor name");
        auto it = slots.find(name);
        if (it == slots.end()) throw FormatError(path.string() + ": unexpected tensor " + name);
        std::uint32_t rows = 0, cols = 0, n = 0;
        if (!detail::get_u32(in, rows) || !detail::get_u32(in, cols) || !detail::get_u32(in, n))
            throw LengthError(path.string() + ": truncated header of " + name);
        Matrix<float>& m = *it->second;
        if (rows != m.rows || cols != m.cols || n != m.data.size())
            throw FormatError(path.string() + ": shape mismatch for " + name);
        for (auto& v : m.data)
            if (!detail::get_f32(in, v)) throw LengthError(path.string() + ": truncated data of " + name);
        slots.erase(it);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw LengthError(path.string() + ": trailing bytes");
    return ck;
}

} // namespace sgnalign
