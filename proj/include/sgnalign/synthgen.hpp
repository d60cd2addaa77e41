#pragma once

// Synthetic signing corpus. Sentences come from a template grammar; each
// sentence's pseudo-gloss is "signed" token by token, every token emitting a
// few frames of (signer offset + token embedding + noise). Audio timings are
// the sign timings moved by a random offset whose mean is -2.7 s, i.e. the
// audio runs ahead of the signing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus_io.hpp"
#include "error.hpp"
#include "model.hpp"
#include "preprocess.hpp"

namespace sgnalign {

struct SynthConfig {
    int vocab_size = 300;
    int feature_dim = 16;
    int glosses_min = 3;
    int glosses_max = 8;
    double frames_per_gloss_mean = 8.0;
    double frames_per_gloss_sd = 3.0;
    int frames_per_gloss_min = 3;
    double audio_offset_mean = -2.7;
    double audio_offset_sd = 0.8;
    double drop_prob = 0.15;
    double noise_sd = 0.3;
    int n_signers = 4;
    double signer_sd = 0.5;
    double gap_min_s = 0.5;
    double gap_max_s = 4.0;
    double lead_in_s = 6.0;
    double fps = 25.0;
    std::uint64_t seed = 0;

    void validate() const {
        auto prob = [](double v, const char* n) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(n) + " must lie in [0,1]");
        };
        prob(drop_prob, "drop_prob");
        if (vocab_size < 5) throw ConfigError("vocab_size must be at least 5");
        if (feature_dim <= 0) throw ConfigError("feature_dim must be positive");
        if (glosses_min <= 0 || glosses_max < glosses_min) throw ConfigError("glosses range must be positive");
        if (frames_per_gloss_min < 2 || frames_per_gloss_mean <= 0) throw ConfigError("frames per gloss must be positive");
        if (frames_per_gloss_sd < 0 || audio_offset_sd < 0 || noise_sd < 0 || signer_sd < 0)
            throw ConfigError("standard deviations must be non-negative");
        if (n_signers <= 0) throw ConfigError("n_signers must be positive");
        if (gap_min_s < 0 || gap_max_s < gap_min_s) throw ConfigError("gap range must be non-negative");
        if (lead_in_s < 0 || fps <= 0) throw ConfigError("lead_in_s and fps must be positive");
    }
};

#define SGNALIGN_SYNTH_FIELDS(X)                                                                       \
    X(vocab_size) X(feature_dim) X(glosses_min) X(glosses_max) X(frames_per_gloss_mean)                 \
    X(frames_per_gloss_sd) X(frames_per_gloss_min) X(audio_offset_mean) X(audio_offset_sd) X(drop_prob) \
    X(noise_sd) X(n_signers) X(signer_sd) X(gap_min_s) X(gap_max_s) X(lead_in_s) X(fps) X(seed)

inline nlohmann::json to_json(const SynthConfig& c) {
    nlohmann::json j;
#define X(name) j[#name] = c.name;
    SGNALIGN_SYNTH_FIELDS(X)
#undef X
    return j;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {}) {
    if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
#define X(name)                                                                      \
    if (key == #name) {                                                              \
        try {                                                                        \
            base.name = value.get<decltype(base.name)>();                            \
        } catch (const nlohmann::json::exception& e) {                               \
            throw ConfigError("synth field '" #name "': " + std::string(e.what()));  \
        }                                                                            \
        known = true;                                                                \
    }
        SGNALIGN_SYNTH_FIELDS(X)
#undef X
        if (!known) throw ConfigError("unknown synth config field '" + key + "'");
    }
    base.validate();
    return base;
}

// ------------------------------------------------------------- vocabulary

namespace synth {

inline const std::vector<std::string>& noun_pool() {
    static const std::vector<std::string> v{
        "cat", "dog", "house", "car", "book", "table", "chair", "door", "window", "tree", "flower", "bird",
        "horse", "cow", "fish", "apple", "bread", "cake", "cup", "plate", "phone", "letter", "ball", "bike",
        "boat", "train", "bus", "plane", "road", "bridge", "hat", "coat", "shoe", "shirt", "dress", "bag",
        "box", "key", "lamp", "clock", "picture", "camera", "computer", "radio", "piano", "guitar", "song",
        "game", "film", "story", "map", "ticket", "money", "wallet", "watch", "ring", "doctor", "teacher",
        "nurse", "farmer", "baker", "driver", "pilot", "artist", "student", "friend", "mother", "father",
        "sister", "brother", "uncle", "aunt", "baby", "boy", "girl", "man", "woman", "team", "family",
        "neighbour", "police", "soldier", "king", "queen", "lion", "tiger", "monkey", "rabbit", "mouse",
        "sheep", "duck", "egg", "cheese", "soup", "milk", "tea", "coffee", "juice", "water", "rain", "snow",
        "sun", "moon", "star", "cloud", "wind", "storm", "fire", "rock", "sand", "hill", "mountain", "lake",
        "sea", "wall", "roof", "floor", "bed", "sofa", "carpet", "cupboard", "fridge", "oven", "spoon",
        "knife", "fork", "bottle", "glass", "candle", "gift", "party", "holiday", "dinner", "lunch",
        "breakfast", "job", "office", "desk", "paper", "pen", "pencil", "bell", "drum", "flag", "tent"};
    return v;
}

inline const std::vector<std::string>& place_pool() {
    static const std::vector<std::string> v{
        "london", "paris", "school", "park", "church", "market", "hospital", "station", "beach", "city",
        "village", "library", "museum", "farm", "shop", "river", "forest", "airport", "bank", "hotel",
        "cinema", "theatre", "zoo", "stadium", "island", "castle", "harbour", "bakery", "prison", "palace",
        "garage", "factory", "cafe", "pool", "field", "street"};
    return v;
}

inline const std::vector<std::string>& adjective_pool() {
    static const std::vector<std::string> v{
        "big", "small", "old", "new", "happy", "sad", "tall", "short", "hot", "cold", "warm", "cool", "fast",
        "slow", "loud", "quiet", "clean", "dirty", "rich", "poor", "young", "busy", "lazy", "angry", "calm",
        "brave", "clever", "funny", "kind", "rude", "strong", "weak", "heavy", "light", "dark", "bright",
        "soft", "hard", "sweet", "sour", "empty", "full", "cheap", "dear", "safe", "huge", "tiny", "green",
        "blue", "yellow", "black", "white", "pink", "brown", "grey", "purple", "famous", "careful", "useful",
        "beautiful", "wonderful", "dangerous", "nervous", "hungry", "thirsty", "tired", "sick", "ready"};
    return v;
}

inline const std::vector<std::string>& adverb_pool() {
    static const std::vector<std::string> v{
        "quickly", "slowly", "quietly", "loudly", "happily", "sadly", "carefully", "badly", "easily",
        "gently", "suddenly", "finally", "today", "tomorrow", "yesterday", "again", "soon", "later",
        "often", "always", "together", "early", "outside", "inside"};
    return v;
}

inline const std::vector<std::string>& regular_verb_pool() {
    static const std::vector<std::string> v{
        "walk", "talk", "jump", "play", "help", "call", "watch", "clean", "cook", "open", "paint", "visit",
        "wash", "want", "finish", "start", "look", "climb", "kick", "push", "pull", "carry", "like",
        "love", "hope", "move", "dance", "close", "use", "fix", "fill", "miss", "order", "answer", "count",
        "wait", "stay", "enjoy", "follow", "borrow", "collect", "plant", "check", "touch", "travel", "stop",
        "plan", "drop", "hug", "clap", "study", "marry", "learn", "push", "share", "smile", "save",
        "bake", "chase", "deliver", "repair"};
    return v;
}

inline const std::vector<std::string>& irregular_verb_pool() {
    static const std::vector<std::string> v{
        "see", "go", "eat", "take", "give", "write", "drive", "buy", "make", "find", "know", "break",
        "drink", "sing", "swim", "run", "speak", "bend", "catch", "draw", "feed", "hold", "keep", "lose",
        "meet", "read", "ride", "sell", "send", "teach", "tell", "throw", "wear", "win", "bring", "choose",
        "forget", "hear", "hide", "leave", "steal", "sweep", "fly", "grow", "shake", "begin"};
    return v;
}

struct VerbForms {
    std::string base, past, pp, ing, third;
};

inline bool is_vowel_char(char c) { return std::string_view("aeiou").find(c) != std::string_view::npos; }

inline bool doubles_final(const std::string& w) {
    static const std::vector<std::string> extra{"forget", "begin", "admit", "prefer", "travel"};
    if (std::find(extra.begin(), extra.end(), w) != extra.end()) return w != "travel";
    const std::size_t n = w.size();
    if (n < 3 || n > 4) return false;
    const char a = w[n - 3], b = w[n - 2], c = w[n - 1];
    return !is_vowel_char(a) && is_vowel_char(b) && !is_vowel_char(c) && c != 'w' && c != 'x' && c != 'y';
}

inline std::string ing_form(const std::string& w) {
    if (w == "see" || w == "flee" || w == "agree") return w + "ing";
    if (w.ends_with("ie")) return w.substr(0, w.size() - 2) + "ying";
    if (w.size() > 2 && w.back() == 'e' && w[w.size() - 2] != 'e' && w[w.size() - 2] != 'y' && w[w.size() - 2] != 'o')
        return w.substr(0, w.size() - 1) + "ing";
    if (doubles_final(w)) return w + w.back() + "ing";
    return w + "ing";
}

inline std::string third_form(const std::string& w) {
    if (w == "have") return "has";
    if (w == "do") return "does";
    if (w == "go") return "goes";
    if (w.ends_with("s") || w.ends_with("sh") || w.ends_with("ch") || w.ends_with("x") || w.ends_with("z") ||
        w.ends_with("o"))
        return w + "es";
    if (w.size() > 1 && w.back() == 'y' && !is_vowel_char(w[w.size() - 2])) return w.substr(0, w.size() - 1) + "ies";
    return w + "s";
}

inline std::string regular_past(const std::string& w) {
    if (w.back() == 'e') return w + "d";
    if (w.size() > 1 && w.back() == 'y' && !is_vowel_char(w[w.size() - 2])) return w.substr(0, w.size() - 1) + "ied";
    if (doubles_final(w)) return w + w.back() + "ed";
    return w + "ed";
}

inline std::string plural(const std::string& n) {
    if (n == "man") return "men";
    if (n == "woman") return "women";
    if (n == "mouse") return "mice";
    if (n == "sheep" || n == "fish" || n == "police" || n == "money") return n;
    if (n == "knife") return "knives";
    if (n.ends_with("s") || n.ends_with("sh") || n.ends_with("ch") || n.ends_with("x")) return n + "es";
    if (n.size() > 1 && n.back() == 'y' && !is_vowel_char(n[n.size() - 2])) return n.substr(0, n.size() - 1) + "ies";
    return n + "s";
}

inline VerbForms forms_of(const std::string& base, const Lexicon& lex) {
    VerbForms f{base, regular_past(base), regular_past(base), ing_form(base), third_form(base)};
    for (const auto& row : lex.irregular_forms)
        if (row[0] == base) {
            f.past = row[1];
            f.pp = row[2];
            break;
        }
    return f;
}

/// Content vocabulary: the first vocab_size words, drawn from the category
/// pools in fixed proportions.
struct Vocabulary {
    std::vector<std::string> nouns, places, adjectives, adverbs;
    std::vector<VerbForms> verbs;
};

inline Vocabulary build_vocabulary(int vocab_size, const Lexicon& lex = Lexicon::builtin()) {
    auto take = [](const std::vector<std::string>& pool, int n) {
        n = std::clamp(n, 1, static_cast<int>(pool.size()));
        return std::vector<std::string>(pool.begin(), pool.begin() + n);
    };
    Vocabulary v;
    const double s = vocab_size;
    v.nouns = take(noun_pool(), static_cast<int>(std::lround(0.40 * s)));
    v.places = take(place_pool(), static_cast<int>(std::lround(0.10 * s)));
    v.adjectives = take(adjective_pool(), static_cast<int>(std::lround(0.20 * s)));
    v.adverbs = take(adverb_pool(), static_cast<int>(std::lround(0.05 * s)));
    const int n_verbs = std::max(2, static_cast<int>(std::lround(0.25 * s)));
    const auto irr = take(irregular_verb_pool(), n_verbs / 2);
    const auto reg = take(regular_verb_pool(), n_verbs - static_cast<int>(irr.size()));
    for (std::size_t i = 0; i < std::max(irr.size(), reg.size()); ++i) {
        if (i < irr.size()) v.verbs.push_back(forms_of(irr[i], lex));
        if (i < reg.size()) v.verbs.push_back(forms_of(reg[i], lex));
    }
    return v;
}

} // namespace synth

/// Sentence patterns. Slots: {N} {N2} noun, {Ns} plural noun, {P} place,
/// {A} adjective, {D} adverb, {V} {Vpast} {Vpp} {Ving} {Vs} verb forms,
/// {S} plural/second-person subject, {S3} third-person singular subject.
inline const std::vector<std::string>& sentence_templates() {
    static const std::vector<std::string> t{
        "The {N} is {A}.",
        "{S3} is {Ving} the {N}.",
        "{S} are {Ving} in the {P}.",
        "I'm {Ving} the {N} {D}.",
        "{S3} has {Vpp} the {N}.",
        "{S} have not {Vpp} the {N2}.",
        "I haven't {Vpp} the {N} {D}.",
        "{S3} hasn't {Vpp} a {N}.",
        "{S3} has a {A} {N}.",
        "{S} have a {N} in the {P}.",
        "The {N} was {A} {D}.",
        "The {Ns} were not {A}.",
        "{S3} {Vpast} the {N} in the {P}.",
        "{S} {Vpast} a {N} {D}.",
        "{S3} {Vs} the {N} every day.",
        "{S} don't {V} the {N}.",
        "{S3} doesn't {V} the {A} {N}.",
        "{S} will never {V} the {N}.",
        "We'll {V} the {N} in the {P}.",
        "They're {Ving} a {A} {N}.",
        "{S3}'s {Ving} in the {P}.",
        "The {N}'s {N2} is {A}.",
        "There is a {N} in the {P}.",
        "There are no {Ns} here.",
        "{S} can't {V} the {N}.",
        "{S3} couldn't {V} the {A} {N}.",
        "{S} had {Vpp} the {N} before.",
        "{S3} had a {A} {N}.",
        "Is the {N} {A}?",
        "Where is the {N}?",
        "The {A} {N} is in the {P}.",
        "{S} were {Ving} the {N} {D}.",
        "I've {Vpp} a {N} in the {P}.",
        "You've never {Vpp} the {N}.",
        "{S3} isn't {A}.",
        "The {N} and the {N2} are {A}.",
        "{S} want to {V} the {N}.",
        "My {N} is not {A}.",
        "The {N} was {Vpp} by the {N2}.",
        "I am {A} {D}.",
        "{S} should {V} the {N} now.",
        "{S3} has never been to the {P}."};
    return t;
}

// ----------------------------------------------------------------- features

/// Canonical embedding of a gloss token: standard normal, seeded by the token.
inline std::vector<float> token_embedding(const std::string& token, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(fnv1a(token) ^ (seed * 0x9E3779B97F4A7C15ull));
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v) x = nd(rng);
    return v;
}

inline std::vector<float> signer_offset(int signer, int dim, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0xC2B2AE3D27D4EB4Full + static_cast<std::uint64_t>(signer) + 99);
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(nd(rng));
    return v;
}

struct SynthEpisode {
    Episode episode;
    std::vector<SubtitleRecord> words;  // one record per signed token (gt = audio = sign span)
    int signer = 0;
};

struct SynthCorpus {
    SynthConfig config;
    std::vector<SynthEpisode> episodes;
};

namespace synth {

inline std::string fill_template(const std::string& tpl, const Vocabulary& voc, std::mt19937_64& rng) {
    auto pick = [&](const auto& v) -> const auto& {
        std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
        return v[d(rng)];
    };
    static const std::vector<std::string> subj{"you", "we", "they"};
    static const std::vector<std::string> subj3{"he", "she"};
    const auto& verb = pick(voc.verbs);
    const std::string noun = pick(voc.nouns);
    std::string noun2 = pick(voc.nouns);
    for (int tries = 0; noun2 == noun && voc.nouns.size() > 1 && tries < 8; ++tries) noun2 = pick(voc.nouns);
    const std::map<std::string, std::string> slots{
        {"{N}", noun}, {"{N2}", noun2}, {"{Ns}", plural(noun)}, {"{P}", pick(voc.places)},
        {"{A}", pick(voc.adjectives)}, {"{D}", pick(voc.adverbs)}, {"{V}", verb.base}, {"{Vpast}", verb.past},
        {"{Vpp}", verb.pp}, {"{Ving}", verb.ing}, {"{Vs}", verb.third}, {"{S}", pick(subj)}, {"{S3}", pick(subj3)}};
    std::string out;
    for (std::size_t i = 0; i < tpl.size();) {
        if (tpl[i] == '{') {
            const std::size_t j = tpl.find('}', i);
            out += slots.at(tpl.substr(i, j - i + 1));
            i = j + 1;
        } else {
            out += tpl[i++];
        }
    }
    // "a" before a vowel sound becomes "an"
    for (std::size_t p = 0; (p = out.find(" a ", p)) != std::string::npos; p += 3)
        if (p + 3 < out.size() && is_vowel_char(out[p + 3])) out.insert(p + 2, "n");
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

} // namespace synth

/// Generates n_episodes episodes of episode_seconds each.
inline SynthCorpus generate_corpus(const SynthConfig& sc, int n_episodes, double episode_seconds,
                                   const Lexicon& lex = Lexicon::builtin()) {
    sc.validate();
    if (n_episodes < 0 || episode_seconds <= 0) throw ConfigError("episode count and length must be positive");
    const auto voc = synth::build_vocabulary(sc.vocab_size, lex);
    const auto& templates = sentence_templates();
    SynthCorpus corpus;
    corpus.config = sc;
    std::map<std::string, std::vector<float>> embed_cache;
    auto embedding = [&](const std::string& tok) -> const std::vector<float>& {
        auto it = embed_cache.find(tok);
        if (it == embed_cache.end()) it = embed_cache.emplace(tok, token_embedding(tok, sc.feature_dim, sc.seed)).first;
        return it->second;
    };

    const std::int64_t total = static_cast<std::int64_t>(std::llround(episode_seconds * sc.fps));
    for (int e = 0; e < n_episodes; ++e) {
        std::mt19937_64 rng(sc.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(e) * 7919 + 1);
        std::normal_distribution<double> noise(0.0, sc.noise_sd), gloss_len(sc.frames_per_gloss_mean, sc.frames_per_gloss_sd),
            offset(sc.audio_offset_mean, sc.audio_offset_sd);
        std::uniform_real_distribution<double> gap(sc.gap_min_s, sc.gap_max_s), unit(0.0, 1.0);
        std::uniform_int_distribution<std::size_t> tpl_pick(0, templates.size() - 1);

        SynthEpisode se;
        se.signer = static_cast<int>(rng() % static_cast<std::uint64_t>(sc.n_signers));
        const auto offset_vec = signer_offset(se.signer, sc.feature_dim, sc.signer_sd, sc.seed);
        Episode& ep = se.episode;
        char id[32];
        std::snprintf(id, sizeof id, "ep%03d", e);
        ep.episode_id = id;
        ep.fps = sc.fps;
        ep.features.frame_count = static_cast<std::uint32_t>(total);
        ep.features.dim = static_cast<std::uint32_t>(sc.feature_dim);
        ep.features.data.resize(static_cast<std::size_t>(total) * sc.feature_dim);
        for (auto& v : ep.features.data) v = static_cast<float>(noise(rng));

        std::int64_t cursor = static_cast<std::int64_t>(std::llround(sc.lead_in_s * sc.fps));
        for (int k = 0;; ++k) {
            // Draw a sentence whose gloss length fits the configured range.
            std::string text;
            PseudoGloss gloss;
            for (int tries = 0; tries < 50; ++tries) {
                text = synth::fill_template(templates[tpl_pick(rng)], voc, rng);
                gloss = to_pseudo_gloss(text, lex);
                const int n = static_cast<int>(gloss.tokens.size());
                if (n >= sc.glosses_min && n <= sc.glosses_max) break;
            }
            std::vector<std::size_t> signed_idx;
            for (std::size_t i = 0; i < gloss.tokens.size(); ++i)
                if (unit(rng) >= sc.drop_prob) signed_idx.push_back(i);
            if (signed_idx.empty()) signed_idx.push_back(rng() % gloss.tokens.size());
            std::vector<int> lengths;
            std::int64_t span_frames = 0;
            for (std::size_t i = 0; i < signed_idx.size(); ++i) {
                const int n = std::max(sc.frames_per_gloss_min, static_cast<int>(std::lround(gloss_len(rng))));
                lengths.push_back(n);
                span_frames += n;
            }
            const std::int64_t start = cursor;
            if (start + span_frames + static_cast<std::int64_t>(std::llround(sc.gap_max_s * sc.fps)) >= total) break;

            char sid[48];
            std::snprintf(sid, sizeof sid, "%s_s%03d", id, k);
            std::int64_t f = start;
            for (std::size_t i = 0; i < signed_idx.size(); ++i) {
                const std::string& tok = gloss.tokens[signed_idx[i]];
                const auto& emb = embedding(tok);
                for (int r = 0; r < lengths[i]; ++r, ++f) {
                    auto row = ep.features.row(static_cast<std::size_t>(f));
                    for (int d = 0; d < sc.feature_dim; ++d)
                        row[d] = static_cast<float>(offset_vec[d] + emb[d] + noise(rng));
                }
                SubtitleRecord w;
                w.id = std::string(sid) + "_w" + std::to_string(i);
                w.text = tok;
                w.gt_start = static_cast<double>(f - lengths[i]) / sc.fps;
                w.gt_end = static_cast<double>(f - 1) / sc.fps;
                w.audio_start = *w.gt_start;
                w.audio_end = *w.gt_end;
                se.words.push_back(std::move(w));
            }
            SubtitleRecord sub;
            sub.id = sid;
            sub.text = text;
            sub.gt_start = static_cast<double>(start) / sc.fps;
            sub.gt_end = static_cast<double>(f - 1) / sc.fps;
            const double off = offset(rng);
            sub.audio_start = std::max(0.0, *sub.gt_start + off);
            sub.audio_end = std::max(sub.audio_start + 1.0 / sc.fps, *sub.gt_end + off);
            ep.subtitles.push_back(std::move(sub));
            cursor = f + static_cast<std::int64_t>(std::llround(gap(rng) * sc.fps));
        }
        std::stable_sort(ep.subtitles.begin(), ep.subtitles.end(),
                         [](const SubtitleRecord& a, const SubtitleRecord& b) { return a.audio_start < b.audio_start; });
        corpus.episodes.push_back(std::move(se));
    }
    return corpus;
}

// ------------------------------------------------------------------ splits

struct CorpusSplits {
    std::vector<Episode> word, train, finetune, test;
    std::vector<std::vector<SubtitleRecord>> word_spans;          // parallel to `word`
    std::vector<std::vector<SubtitleRecord>> test_word_spans;     // parallel to `test`, for spotting
    std::map<std::string, std::vector<SubtitleRecord>> sealed_gt;  // train episode id -> records with gt
};

inline SubtitleRecord without_gt(SubtitleRecord r) {
    r.gt_start.reset();
    r.gt_end.reset();
    return r;
}

/// Episode-level split in the order word / train / finetune / test after a
/// seeded shuffle. Counts are floor(ratio * n).
inline CorpusSplits split_corpus(const SynthCorpus& corpus, const std::array<double, 4>& ratios, std::uint64_t seed) {
    double sum = 0;
    for (double r : ratios) {
        if (r < 0) throw ConfigError("split ratios must be non-negative");
        sum += r;
    }
    if (sum > 1.0 + 1e-9) throw ConfigError("split ratios must sum to at most 1");
    const std::size_t n = corpus.episodes.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed ^ 0x5151u);
    std::shuffle(order.begin(), order.end(), rng);

    std::array<std::size_t, 4> counts{};
    for (std::size_t i = 0; i < 4; ++i) counts[i] = static_cast<std::size_t>(std::floor(ratios[i] * n + 1e-9));
    CorpusSplits s;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < counts[0]; ++i, ++pos) {
        s.word.push_back(corpus.episodes[order[pos]].episode);
        s.word_spans.push_back(corpus.episodes[order[pos]].words);
    }
    for (std::size_t i = 0; i < counts[1]; ++i, ++pos) {
        Episode ep = corpus.episodes[order[pos]].episode;
        s.sealed_gt[ep.episode_id] = ep.subtitles;
        for (auto& sub : ep.subtitles) sub = without_gt(sub);
        s.train.push_back(std::move(ep));
    }
    for (std::size_t i = 0; i < counts[2]; ++i, ++pos) s.finetune.push_back(corpus.episodes[order[pos]].episode);
    for (std::size_t i = 0; i < counts[3]; ++i, ++pos) {
        s.test.push_back(corpus.episodes[order[pos]].episode);
        s.test_word_spans.push_back(corpus.episodes[order[pos]].words);
    }
    return s;
}

// ------------------------------------------------------------------ on disk

inline nlohmann::json manifest_json(const CorpusSplits& s, const SynthConfig& sc, std::uint64_t split_seed) {
    auto ids = [](const std::vector<Episode>& eps) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& e : eps) a.push_back(e.episode_id);
        return a;
    };
    return {{"synth", to_json(sc)},
            {"split_seed", split_seed},
            {"fps", sc.fps},
            {"splits", {{"word", ids(s.word)}, {"train", ids(s.train)}, {"finetune", ids(s.finetune)}, {"test", ids(s.test)}}}};
}

/// Writes every episode plus `<id>.words.jsonl` (word and test splits), `<id>.gt.jsonl`
/// (sealed train ground truth) and `manifest.json`.
inline void write_corpus(const CorpusSplits& s, const SynthConfig& sc, std::uint64_t split_seed,
                         const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < s.word.size(); ++i) {
        write_episode(s.word[i], dir);
        write_subtitles(s.word_spans[i], dir / (s.word[i].episode_id + ".words.jsonl"));
    }
    for (const auto& e : s.train) {
        write_episode(e, dir);
        write_subtitles(s.sealed_gt.at(e.episode_id), dir / (e.episode_id + ".gt.jsonl"));
    }
    for (const auto& e : s.finetune) write_episode(e, dir);
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        write_episode(s.test[i], dir);
        if (i < s.test_word_spans.size())
            write_subtitles(s.test_word_spans[i], dir / (s.test[i].episode_id + ".words.jsonl"));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest_json(s, sc, split_seed).dump(2) << '\n';
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
}

inline CorpusSplits load_corpus(const std::filesystem::path& dir) {
    const auto m = read_manifest(dir);
    const double fps = m.value("fps", 25.0);
    CorpusSplits s;
    auto load = [&](const char* split, std::vector<Episode>& out) {
        for (const auto& id : m.at("splits").at(split)) out.push_back(read_episode(dir, id.get<std::string>(), fps));
    };
    load("word", s.word);
    load("train", s.train);
    load("finetune", s.finetune);
    load("test", s.test);
    for (const auto& e : s.word) s.word_spans.push_back(read_subtitles(dir / (e.episode_id + ".words.jsonl")));
    for (const auto& e : s.test) {
        const auto words = dir / (e.episode_id + ".words.jsonl");
        s.test_word_spans.push_back(std::filesystem::exists(words) ? read_subtitles(words) : std::vector<SubtitleRecord>{});
    }
    for (const auto& e : s.train) {
        const auto gt = dir / (e.episode_id + ".gt.jsonl");
        if (std::filesystem::exists(gt)) s.sealed_gt[e.episode_id] = read_subtitles(gt);
    }
    return s;
}

// ------------------------------------------------------------------ presets

/// The corpus the bundled recipe runs on: 50 two-minute episodes split
/// 10% word / 78% train / 2% manual / 10% test.
struct DeskCorpus {
    int episodes = 50;
    double episode_seconds = 120.0;
    std::array<double, 4> ratios{0.1, 0.78, 0.02, 0.1};
    std::uint64_t split_seed = 1;
};

inline nlohmann::json to_json(const DeskCorpus& d) {
    return {{"episodes", d.episodes}, {"episode_seconds", d.episode_seconds}, {"ratios", d.ratios}, {"split_seed", d.split_seed}};
}

inline CorpusSplits desk_splits(const SynthConfig& sc, const DeskCorpus& d = {}) {
    return split_corpus(generate_corpus(sc, d.episodes, d.episode_seconds), d.ratios, d.split_seed);
}

} // namespace sgnalign
