#pragma once

// Rule-based rewriting of English subtitles into gloss-like token sequences:
// contractions are expanded, articles and 'be' forms removed, verbs
// lemmatised, and auxiliary 'have' replaced by "been". Stopwords and
// negators are kept.

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "corpus_io.hpp"
#include "error.hpp"
#include "sgnalign/lexicon_data.hpp"

namespace sgnalign {

enum class PosTagKind { VERB, AUX, NOUN, PRON, DET, ADJ, ADV, NEG, OTHER };

inline const char* to_string(PosTagKind k) {
    switch (k) {
    case PosTagKind::VERB: return "VERB";
    case PosTagKind::AUX: return "AUX";
    case PosTagKind::NOUN: return "NOUN";
    case PosTagKind::PRON: return "PRON";
    case PosTagKind::DET: return "DET";
    case PosTagKind::ADJ: return "ADJ";
    case PosTagKind::ADV: return "ADV";
    case PosTagKind::NEG: return "NEG";
    case PosTagKind::OTHER: return "OTHER";
    }
    return "OTHER";
}

struct PosTag {
    std::string token;
    PosTagKind tag = PosTagKind::OTHER;
    friend bool operator==(const PosTag&, const PosTag&) = default;
};

struct PseudoGloss {
    std::vector<std::string> tokens;
    std::string source_id;
    bool used_fallback = false;
};

class Lexicon {
public:
    using WordSet = std::unordered_set<std::string>;

    WordSet articles, be_forms, pronouns, determiners, auxiliaries, negators, adverbs, adjectives;
    WordSet is_hosts, participle_exclusions, ed_exclusions, ed_agreed, ing_exclusions;
    WordSet participles;
    std::vector<std::string> adjective_suffixes;
    std::unordered_map<std::string, std::string> verb_base;
    std::vector<std::array<std::string, 3>> irregular_forms;  // base, past, participle
    std::unordered_map<std::string, std::string> contractions;
    std::vector<std::pair<std::string, std::string>> contraction_suffixes;

    static Lexicon from_json(const nlohmann::json& irregular, const nlohmann::json& contraction,
                             const nlohmann::json& closed_class) {
        Lexicon lex;
        auto fill = [&](WordSet& set, const char* key) {
            for (const auto& w : closed_class.at(key)) set.insert(w.get<std::string>());
        };
        try {
            fill(lex.articles, "articles");
            fill(lex.be_forms, "be_forms");
            fill(lex.pronouns, "pronouns");
            fill(lex.determiners, "determiners");
            fill(lex.auxiliaries, "auxiliaries");
            fill(lex.negators, "negators");
            fill(lex.adverbs, "adverbs");
            fill(lex.adjectives, "adjectives");
            fill(lex.is_hosts, "is_hosts");
            fill(lex.participle_exclusions, "participle_exclusions");
            fill(lex.ed_exclusions, "ed_exclusions");
            fill(lex.ed_agreed, "ed_agreed");
            fill(lex.ing_exclusions, "ing_exclusions");
            for (const auto& s : closed_class.at("adjective_suffixes")) lex.adjective_suffixes.push_back(s.get<std::string>());

            for (const auto& row : irregular.at("verbs")) {
                if (!row.is_array() || row.size() != 3) throw ConfigError("irregular verb rows need three forms");
                const auto base = row[0].get<std::string>();
                for (const auto& form : row) lex.verb_base.emplace(form.get<std::string>(), base);
                lex.participles.insert(row[2].get<std::string>());
                lex.irregular_forms.push_back({base, row[1].get<std::string>(), row[2].get<std::string>()});
            }
            for (const auto& [form, base] : irregular.at("third_person").items())
                lex.verb_base.emplace(form, base.get<std::string>());

            for (const auto& [k, v] : contraction.at("table").items()) lex.contractions.emplace(k, v.get<std::string>());
            for (const auto& [k, v] : contraction.at("suffixes").items())
                lex.contraction_suffixes.emplace_back(k, v.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed lexicon: ") + e.what());
        }
        // longest clitic first so "n't" wins over shorter endings
        std::sort(lex.contraction_suffixes.begin(), lex.contraction_suffixes.end(),
                  [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
        lex.participles.insert("been");
        return lex;
    }

    static const Lexicon& builtin() {
        static const Lexicon lex = from_json(nlohmann::json::parse(lexicon_data::kIrregularVerbs),
                                             nlohmann::json::parse(lexicon_data::kContractions),
                                             nlohmann::json::parse(lexicon_data::kClosedClass));
        return lex;
    }

    static Lexicon load(const std::filesystem::path& dir) {
        auto read = [&](const char* name) {
            std::ifstream in(dir / name);
            if (!in) throw IoError("cannot open lexicon " + (dir / name).string());
            try {
                return nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError((dir / name).string() + ": " + e.what());
            }
        };
        return from_json(read("irregular_verbs.json"), read("contractions.json"), read("closed_class.json"));
    }

    bool is_adverb(std::string_view w) const {
        return adverbs.count(std::string(w)) > 0 || (w.size() > 4 && w.ends_with("ly"));
    }

    bool is_adjective(std::string_view w) const {
        if (adjectives.count(std::string(w))) return true;
        for (const auto& s : adjective_suffixes)
            if (w.size() > s.size() + 2 && w.ends_with(s)) return true;
        return false;
    }

    static bool has_vowel(std::string_view s) {
        return s.find_first_of("aeiouy") != std::string_view::npos;
    }

    // Regular "-ed" past form (walked, used, agreed), excluding nouns like "bed".
    bool is_regular_ed(std::string_view w) const {
        if (w.size() < 4 || !w.ends_with("ed")) return false;
        std::string s(w);
        if (ed_agreed.count(s)) return true;
        if (ed_exclusions.count(s) || w.ends_with("eed")) return false;
        return has_vowel(w.substr(0, w.size() - 2));
    }

    bool is_ing_form(std::string_view w) const {
        if (w.size() < 5 || !w.ends_with("ing")) return false;
        if (ing_exclusions.count(std::string(w))) return false;
        return has_vowel(w.substr(0, w.size() - 3));
    }

    bool is_participle(std::string_view w) const {
        std::string s(w);
        if (participles.count(s)) return true;
        if (is_regular_ed(w)) return true;
        return w.size() >= 4 && w.ends_with("en") && !participle_exclusions.count(s) && !adjectives.count(s) &&
               !pronouns.count(s);
    }
};

namespace detail {

inline std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Map typographic apostrophes (U+2018, U+2019) to ASCII.
inline std::string normalize_apostrophes(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
            (static_cast<unsigned char>(s[i + 2]) == 0x99 || static_cast<unsigned char>(s[i + 2]) == 0x98)) {
            out += '\'';
            i += 2;
        } else {
            out += s[i];
        }
    }
    return out;
}

inline bool is_word_char(char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '\'' || u >= 0x80;
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

struct WordParts {
    std::string lead, core, trail;
};

inline WordParts split_punct(const std::string& w) {
    std::size_t b = 0, e = w.size();
    while (b < e && !is_word_char(w[b])) ++b;
    while (e > b && !is_word_char(w[e - 1])) --e;
    return {w.substr(0, b), w.substr(b, e - b), w.substr(e)};
}

inline std::string match_case(const std::string& original, std::string expansion) {
    if (!original.empty() && std::isupper(static_cast<unsigned char>(original[0])) && !expansion.empty())
        expansion[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(expansion[0])));
    return expansion;
}

inline bool is_consonant(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) && std::string_view("aeiou").find(c) == std::string_view::npos;
}

inline bool is_vowel(char c) { return std::string_view("aeiou").find(c) != std::string_view::npos; }

inline int vowel_groups(std::string_view s) {
    int groups = 0;
    bool in_group = false;
    for (char c : s) {
        bool v = is_vowel(c);
        if (v && !in_group) ++groups;
        in_group = v;
    }
    return groups;
}

// Undo consonant doubling or restore a silent 'e' after an inflection is stripped.
inline std::string restore_stem(std::string stem) {
    const std::size_t n = stem.size();
    if (n >= 4 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1]) &&
        std::string_view("lsfz").find(stem[n - 1]) == std::string_view::npos && is_vowel(stem[n - 3]) &&
        is_consonant(stem[n - 4])) {
        stem.pop_back();
        return stem;
    }
    if (n < 2) return stem;
    const char last = stem[n - 1];
    const char prev = stem[n - 2];
    if (last == 'v' || last == 'c') return stem + "e";
    if ((last == 's' || last == 'z') && is_vowel(prev)) return stem + "e";
    if (last == 'l' && std::string_view("bptdgkcfz").find(prev) != std::string_view::npos) return stem + "e";
    if (last == 'r' && prev != 'e' && is_vowel(prev) && n >= 3 && is_consonant(stem[n - 3])) return stem + "e";
    if (n >= 5 && stem.ends_with("at") && is_consonant(stem[n - 3])) return stem + "e";
    if (vowel_groups(stem) == 1 && is_vowel(prev) && is_consonant(last) &&
        std::string_view("wxy").find(last) == std::string_view::npos && (n < 3 || !is_vowel(stem[n - 3])) &&
        is_consonant(stem[0]))
        return stem + "e";
    return stem;
}

} // namespace detail

/// Replaces apostrophe contractions with their full forms. Case of the first
/// letter of each rewritten word is kept; everything else passes through.
inline std::string expand_contractions(std::string_view text, const Lexicon& lex = Lexicon::builtin()) {
    const auto words = detail::split_ws(detail::normalize_apostrophes(text));
    std::vector<detail::WordParts> parts;
    parts.reserve(words.size());
    for (const auto& w : words) parts.push_back(detail::split_punct(w));

    auto next_core = [&](std::size_t i) -> std::string {
        return i + 1 < parts.size() ? detail::lower_ascii(parts[i + 1].core) : std::string();
    };

    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& p = parts[i];
        std::string core = p.core;
        const std::string low = detail::lower_ascii(core);

        if (auto it = lex.contractions.find(low); it != lex.contractions.end()) {
            core = detail::match_case(core, it->second);
        } else if (low.size() > 2 && low.ends_with("'s")) {
            const std::string host = core.substr(0, core.size() - 2);
            const std::string host_low = low.substr(0, low.size() - 2);
            const std::string next = next_core(i);
            const bool as_is = lex.pronouns.count(host_low) || lex.is_hosts.count(host_low) ||
                               (!next.empty() && (lex.is_participle(next) || lex.is_adjective(next) || lex.is_ing_form(next)));
            core = as_is ? host + " is" : host;
        } else if (low.size() > 2 && low.ends_with("'d")) {
            const std::string host = core.substr(0, core.size() - 2);
            const std::string next = next_core(i);
            core = host + ((!next.empty() && lex.is_participle(next)) ? " had" : " would");
        } else {
            for (const auto& [suffix, full] : lex.contraction_suffixes) {
                if (low.size() > suffix.size() && low.ends_with(suffix)) {
                    core = core.substr(0, core.size() - suffix.size()) + " " + full;
                    break;
                }
            }
        }
        if (!out.empty()) out += ' ';
        out += p.lead + core + p.trail;
    }
    return out;
}

/// Lowercases and splits on anything that is not a letter, digit or apostrophe.
/// Apostrophes left over after expansion are dropped inside the word.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) tokens.push_back(std::move(cur));
        cur.clear();
    };
    for (char c : detail::normalize_apostrophes(text)) {
        if (c == '\'') continue;
        if (detail::is_word_char(c))
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    return tokens;
}

inline bool is_have_form(std::string_view w) { return w == "have" || w == "has" || w == "had"; }

inline std::vector<PosTag> pos_tag(const std::vector<std::string>& tokens, const Lexicon& lex = Lexicon::builtin()) {
    std::vector<PosTag> tags;
    tags.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& w = tokens[i];
        PosTagKind k = PosTagKind::OTHER;
        if (lex.negators.count(w)) {
            k = PosTagKind::NEG;
        } else if (lex.determiners.count(w)) {
            k = PosTagKind::DET;
        } else if (is_have_form(w)) {
            std::size_t j = i + 1;
            while (j < tokens.size() && (lex.negators.count(tokens[j]) || lex.is_adverb(tokens[j]))) ++j;
            k = (j < tokens.size() && lex.is_participle(tokens[j])) ? PosTagKind::AUX : PosTagKind::VERB;
        } else if (lex.auxiliaries.count(w)) {
            k = PosTagKind::AUX;
        } else if (lex.pronouns.count(w)) {
            k = PosTagKind::PRON;
        } else if (lex.adverbs.count(w)) {
            k = PosTagKind::ADV;
        } else if (lex.verb_base.count(w)) {
            k = PosTagKind::VERB;
        } else if (lex.adjectives.count(w)) {
            k = PosTagKind::ADJ;
        } else if (lex.is_ing_form(w) || lex.is_regular_ed(w)) {
            k = PosTagKind::VERB;
        } else if (lex.is_adjective(w)) {
            k = PosTagKind::ADJ;
        } else if (lex.is_adverb(w)) {
            k = PosTagKind::ADV;
        } else if (i > 0 && (tags.back().tag == PosTagKind::DET || tags.back().tag == PosTagKind::ADJ)) {
            k = PosTagKind::NOUN;
        }
        tags.push_back({w, k});
    }
    return tags;
}

inline std::string lemmatize_verb(std::string_view token, const Lexicon& lex = Lexicon::builtin()) {
    const std::string w(token);
    if (auto it = lex.verb_base.find(w); it != lex.verb_base.end()) return it->second;
    const std::size_t n = w.size();
    if (n > 4 && w.ends_with("ies")) return w.substr(0, n - 3) + "y";
    if (n > 3 && w.ends_with("ies")) return w.substr(0, n - 1);
    if (n > 4 && w.ends_with("ied")) return w.substr(0, n - 3) + "y";
    if (n > 3 && w.ends_with("ied")) return w.substr(0, n - 1);
    if (lex.is_ing_form(w)) return detail::restore_stem(w.substr(0, n - 3));
    if (n >= 4 && w.ends_with("ed")) {
        if (lex.ed_agreed.count(w) || w.ends_with("ued") || w.ends_with("oed")) return w.substr(0, n - 1);
        if (!lex.is_regular_ed(w)) return w;
        return detail::restore_stem(w.substr(0, n - 2));
    }
    if (n > 4 && (w.ends_with("ches") || w.ends_with("shes") || w.ends_with("sses") || w.ends_with("xes") ||
                  w.ends_with("zes")))
        return w.substr(0, n - 2);
    if (n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is"))
        return w.substr(0, n - 1);
    return w;
}

namespace detail {

inline PseudoGloss rewrite_once(std::string_view text, const Lexicon& lex) {
    const std::string lowered = detail::lower_ascii(detail::normalize_apostrophes(text));
    const auto tokens = tokenize(expand_contractions(lowered, lex));
    const auto tags = pos_tag(tokens, lex);

    PseudoGloss g;
    for (const auto& t : tags) {
        if (lex.articles.count(t.token) || lex.be_forms.count(t.token)) continue;
        if (t.tag == PosTagKind::AUX && is_have_form(t.token)) {
            g.tokens.emplace_back("been");
        } else if (t.tag == PosTagKind::VERB) {
            g.tokens.push_back(lemmatize_verb(t.token, lex));
        } else {
            g.tokens.push_back(t.token);
        }
    }
    if (g.tokens.empty()) {
        g.tokens = tokenize(lowered);
        g.used_fallback = !g.tokens.empty();
    }
    return g;
}

} // namespace detail

inline std::string detokenize(const std::vector<std::string>& tokens);

/// Full subtitle rewrite. Falls back to the plain tokenised sentence when the
/// rules would leave nothing.
///
/// A lemmatised verb can look like a participle ("had running" -> "have run"),
/// which a second pass would turn into "been run". The rewrite is repeated
/// until the tokens stop changing so the output is its own gloss.
inline PseudoGloss to_pseudo_gloss(std::string_view text, const Lexicon& lex = Lexicon::builtin()) {
    PseudoGloss g = detail::rewrite_once(text, lex);
    for (int pass = 0; pass < 4 && !g.used_fallback; ++pass) {
        PseudoGloss next = detail::rewrite_once(detokenize(g.tokens), lex);
        if (next.used_fallback || next.tokens == g.tokens) break;
        g.tokens = std::move(next.tokens);
    }
    return g;
}

inline PseudoGloss to_pseudo_gloss(const SubtitleRecord& sub, const Lexicon& lex = Lexicon::builtin()) {
    PseudoGloss g = to_pseudo_gloss(sub.text, lex);
    g.source_id = sub.id;
    return g;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

} // namespace sgnalign
