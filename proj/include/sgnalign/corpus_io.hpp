#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "types.hpp"

namespace sgnalign {

struct SubtitleRecord {
    std::string id;
    std::string text;
    double audio_start = 0.0;
    double audio_end = 0.0;
    std::optional<double> gt_start;
    std::optional<double> gt_end;

    bool has_gt() const { return gt_start.has_value() && gt_end.has_value(); }
    TimeSpan audio() const { return {audio_start, audio_end}; }
    TimeSpan gt() const { return {gt_start.value(), gt_end.value()}; }

    void validate() const {
        if (id.empty()) throw ValidationError("subtitle id must not be empty");
        if (!(std::isfinite(audio_start) && std::isfinite(audio_end)) || !(audio_start < audio_end))
            throw ValidationError("subtitle " + id + ": audio_start must be < audio_end");
        if (gt_start.has_value() != gt_end.has_value())
            throw ValidationError("subtitle " + id + ": gt_start and gt_end must appear together");
        if (has_gt() && !(*gt_start < *gt_end))
            throw ValidationError("subtitle " + id + ": gt_start must be < gt_end");
    }

    friend bool operator==(const SubtitleRecord&, const SubtitleRecord&) = default;
};

/// Row-major T x D matrix of per-frame visual features.
struct FeatureSequence {
    std::uint32_t frame_count = 0;
    std::uint32_t dim = 0;
    std::vector<float> data;

    FeatureSequence() = default;
    FeatureSequence(std::uint32_t frames, std::uint32_t d)
        : frame_count(frames), dim(d), data(static_cast<std::size_t>(frames) * d, 0.0f) {}

    std::span<float> row(std::size_t t) { return {data.data() + t * dim, dim}; }
    std::span<const float> row(std::size_t t) const { return {data.data() + t * dim, dim}; }

    void validate() const {
        if (data.size() != static_cast<std::size_t>(frame_count) * dim)
            throw LengthError("feature payload does not match frame_count x dim");
        for (float v : data)
            if (!std::isfinite(v)) throw ValidationError("feature values must be finite");
    }

    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct Episode {
    std::string episode_id;
    double fps = 25.0;
    std::vector<SubtitleRecord> subtitles;
    FeatureSequence features;

    void validate() const {
        if (!(fps > 0)) throw ValidationError("episode " + episode_id + ": fps must be positive");
        features.validate();
        std::set<std::string> ids;
        for (std::size_t i = 0; i < subtitles.size(); ++i) {
            subtitles[i].validate();
            if (!ids.insert(subtitles[i].id).second)
                throw ValidationError("episode " + episode_id + ": duplicate subtitle id " + subtitles[i].id);
            if (i > 0 && subtitles[i].audio_start < subtitles[i - 1].audio_start)
                throw ValidationError("episode " + episode_id + ": subtitles not sorted by audio_start");
        }
        if (!subtitles.empty()) {
            double last = 0.0;
            for (const auto& s : subtitles) {
                last = std::max(last, s.audio_end);
                if (s.has_gt()) last = std::max(last, *s.gt_end);
            }
            if (static_cast<double>(features.frame_count) < std::ceil(last * fps - 1e-9))
                throw ValidationError("episode " + episode_id + ": features shorter than subtitles");
        }
    }
};

struct PredictionRecord {
    std::string subtitle_id;
    double pred_start = 0.0;
    double pred_end = 0.0;
    double peak_confidence = 0.0;
    std::optional<FrameProbs> probs;

    void validate() const {
        if (subtitle_id.empty()) throw ValidationError("prediction subtitle_id must not be empty");
        if (!(pred_start <= pred_end))
            throw ValidationError("prediction " + subtitle_id + ": pred_start must be <= pred_end");
        if (!(peak_confidence >= 0.0 && peak_confidence <= 1.0))
            throw ValidationError("prediction " + subtitle_id + ": peak_confidence outside [0,1]");
    }

    friend bool operator==(const PredictionRecord& a, const PredictionRecord& b) {
        if (a.subtitle_id != b.subtitle_id || a.pred_start != b.pred_start || a.pred_end != b.pred_end ||
            a.peak_confidence != b.peak_confidence || a.probs.has_value() != b.probs.has_value())
            return false;
        if (!a.probs) return true;
        return a.probs->values == b.probs->values && a.probs->window_start_frame == b.probs->window_start_frame &&
               a.probs->stride == b.probs->stride;
    }
};

// ---------------------------------------------------------------- subtitles

inline nlohmann::json subtitle_to_json(const SubtitleRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["text"] = r.text;
    j["audio_start"] = r.audio_start;
    j["audio_end"] = r.audio_end;
    if (r.gt_start) j["gt_start"] = *r.gt_start;
    if (r.gt_end) j["gt_end"] = *r.gt_end;
    return j;
}

inline SubtitleRecord subtitle_from_json(const nlohmann::json& j) {
    SubtitleRecord r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.audio_start = j.at("audio_start").get<double>();
    r.audio_end = j.at("audio_end").get<double>();
    if (j.contains("gt_start") && !j["gt_start"].is_null()) r.gt_start = j["gt_start"].get<double>();
    if (j.contains("gt_end") && !j["gt_end"].is_null()) r.gt_end = j["gt_end"].get<double>();
    return r;
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        fn(j, line_no);
    }
}

inline std::vector<SubtitleRecord> parse_subtitles(std::istream& in) {
    std::vector<SubtitleRecord> out;
    std::set<std::string> ids;
    for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line_no) {
        SubtitleRecord r;
        try {
            r = subtitle_from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        try {
            r.validate();
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(r.id).second)
            throw ValidationError("line " + std::to_string(line_no) + ": duplicate subtitle id " + r.id);
        out.push_back(std::move(r));
    });
    std::stable_sort(out.begin(), out.end(),
                     [](const SubtitleRecord& a, const SubtitleRecord& b) { return a.audio_start < b.audio_start; });
    return out;
}

inline std::vector<SubtitleRecord> read_subtitles(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_subtitles(in);
}

inline void write_subtitles(const std::vector<SubtitleRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) {
        r.validate();
        out << subtitle_to_json(r).dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

// ----------------------------------------------------------------- features

inline constexpr std::array<char, 4> kFeatureMagic{'S', 'G', 'N', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

inline void put_f32(std::ostream& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

inline bool get_f32(std::istream& in, float& f) {
    std::uint32_t v;
    if (!get_u32(in, v)) return false;
    std::memcpy(&f, &v, 4);
    return true;
}

} // namespace detail

inline FeatureSequence parse_features(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kFeatureMagic) throw FormatError("bad feature magic");
    std::uint32_t version = 0, frames = 0, dim = 0;
    if (!detail::get_u32(in, version)) throw LengthError("truncated feature header");
    if (version != kFeatureVersion) throw FormatError("unsupported feature version " + std::to_string(version));
    if (!detail::get_u32(in, frames) || !detail::get_u32(in, dim)) throw LengthError("truncated feature header");
    FeatureSequence seq(frames, dim);
    for (float& v : seq.data)
        if (!detail::get_f32(in, v)) throw LengthError("truncated feature payload");
    if (in.peek() != std::char_traits<char>::eof()) throw LengthError("trailing bytes after feature payload");
    seq.validate();
    return seq;
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_features(in);
}

inline void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
    seq.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kFeatureMagic.data(), 4);
    detail::put_u32(out, kFeatureVersion);
    detail::put_u32(out, seq.frame_count);
    detail::put_u32(out, seq.dim);
    for (float v : seq.data) detail::put_f32(out, v);
    if (!out) throw IoError("write failed: " + path.string());
}

// -------------------------------------------------------------- predictions

inline nlohmann::json prediction_to_json(const PredictionRecord& r) {
    nlohmann::json j;
    j["subtitle_id"] = r.subtitle_id;
    j["pred_start"] = r.pred_start;
    j["pred_end"] = r.pred_end;
    j["peak_confidence"] = r.peak_confidence;
    if (r.probs) {
        j["probs"] = r.probs->values;
        j["window_start_frame"] = r.probs->window_start_frame;
        j["stride"] = r.probs->stride;
    }
    return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
    PredictionRecord r;
    r.subtitle_id = j.at("subtitle_id").get<std::string>();
    r.pred_start = j.at("pred_start").get<double>();
    r.pred_end = j.at("pred_end").get<double>();
    r.peak_confidence = j.at("peak_confidence").get<double>();
    if (j.contains("probs")) {
        FrameProbs p;
        p.values = j["probs"].get<std::vector<float>>();
        p.window_start_frame = j.at("window_start_frame").get<std::int64_t>();
        p.stride = j.at("stride").get<int>();
        r.probs = std::move(p);
    }
    return r;
}

inline void write_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
    for (const auto& r : records) r.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) out << prediction_to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PredictionRecord> out;
    for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line_no) {
        PredictionRecord r;
        try {
            r = prediction_from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        r.validate();
        out.push_back(std::move(r));
    });
    return out;
}

// ------------------------------------------------------------------ episodes

/// Writes `<dir>/<id>.subs.jsonl` and `<dir>/<id>.feat.bin`.
inline void write_episode(const Episode& ep, const std::filesystem::path& dir) {
    ep.validate();
    std::filesystem::create_directories(dir);
    write_subtitles(ep.subtitles, dir / (ep.episode_id + ".subs.jsonl"));
    write_features(ep.features, dir / (ep.episode_id + ".feat.bin"));
}

inline Episode read_episode(const std::filesystem::path& dir, const std::string& episode_id, double fps = 25.0) {
    Episode ep;
    ep.episode_id = episode_id;
    ep.fps = fps;
    ep.subtitles = read_subtitles(dir / (episode_id + ".subs.jsonl"));
    ep.features = read_features(dir / (episode_id + ".feat.bin"));
    ep.validate();
    return ep;
}

} // namespace sgnalign
