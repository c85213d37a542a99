#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "aerovln/strings.hpp"

namespace aerovln::text {

// Nouns that can head a landmark phrase.
inline const std::unordered_set<std::string>& landmark_heads() {
    static const std::unordered_set<std::string> words{
        "apartment", "apartments", "billboard", "block",    "bridge",     "building",  "buildings", "cafe",
        "car",       "church",     "complex",   "dome",     "factory",    "field",     "fountain",  "garden",
        "hospital",  "hotel",      "house",     "houses",   "intersection", "lake",    "landmark",  "lot",
        "mall",      "monument",   "office",    "pagoda",   "park",       "plaza",     "pool",      "restaurant",
        "river",     "road",       "school",    "shop",     "signboard",  "skyscraper", "skyscrapers", "spire",
        "square",    "stadium",    "station",   "statue",   "store",      "street",    "structure", "temple",
        "tower",     "towers",     "tree",      "trees",    "truck",      "vehicle",   "warehouse", "grove"};
    return words;
}

// Words that may follow a head noun and pull the rest of the clause into the phrase.
inline const std::unordered_set<std::string>& attachment_words() {
    static const std::unordered_set<std::string> words{
        "with",    "marked",   "displaying", "featuring", "reading", "topped", "of",      "bearing",
        "showing", "labeled",  "labelled",   "covered",   "crowned", "having", "painted", "decorated"};
    return words;
}

// Closed-class words that can never sit between a determiner and its head.
inline const std::unordered_set<std::string>& function_words() {
    static const std::unordered_set<std::string> words{
        "a",    "an",  "the",   "to",   "toward", "towards", "and", "then", "at",   "in",   "on",    "by",
        "near", "past", "until", "from", "into",  "over",    "it",  "of",   "with", "you", "your"};
    return words;
}

inline const std::unordered_set<std::string>& verbs() {
    static const std::unordered_set<std::string> words{
        "go",      "turn",     "ascend",   "descend",  "fly",     "move",    "continue", "head",  "heading",
        "pass",    "passing",  "stop",     "land",     "rise",    "climb",   "proceed",  "reach", "approach",
        "keep",    "make",     "follow",   "cross",    "circle",  "hover",   "drop",     "lower", "raise",
        "advance", "navigate", "arrive",   "descending", "ascending", "flying", "moving", "going", "turning",
        "stopping", "reaching", "marked",  "displaying", "featuring", "reading", "topped", "rotate", "veer"};
    return words;
}

inline bool is_determiner(std::string_view lower) { return lower == "a" || lower == "an" || lower == "the"; }

enum class Tag { noun, verb, other };

// Lexicon first, then a few suffix rules for nouns outside the landmark list.
inline Tag tag_word(std::string_view lower) {
    const std::string w(lower);
    if (verbs().count(w)) return Tag::verb;
    if (landmark_heads().count(w)) return Tag::noun;
    if (function_words().count(w)) return Tag::other;
    for (std::string_view suffix : {"tion", "ment", "ness", "ity", "ery", "ture", "ing"}) {
        if (w.size() > suffix.size() + 2 && lower.substr(lower.size() - suffix.size()) == suffix)
            return suffix == "ing" ? Tag::verb : Tag::noun;
    }
    return Tag::other;
}

// A whitespace-delimited word with its byte span in the source text.
struct Word {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string core;  // lowercased, surrounding punctuation removed
    bool ends_clause = false;  // trailing . , ; : ! ?
    bool has_alnum = false;
};

inline std::vector<Word> split_words(std::string_view s) {
    std::vector<Word> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        const std::size_t b = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i == b) break;
        Word w;
        w.begin = b;
        std::size_t e = i;
        while (e > b && std::string_view(".,;:!?\"").find(s[e - 1]) != std::string_view::npos) {
            if (s[e - 1] != '"') w.ends_clause = true;
            --e;
        }
        std::size_t f = b;
        while (f < e && (s[f] == '"' || s[f] == '(')) ++f;
        w.end = e;
        w.core = to_lower(s.substr(f, e - f));
        for (unsigned char c : w.core) w.has_alnum |= std::isalnum(c) != 0;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace aerovln::text
