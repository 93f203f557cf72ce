#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace splitsim {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Character-level vocabulary. Ids are assigned to the corpus code points in
// sorted order; one reserved unknown id sits at the end, so V = chars + 1.
class Vocabulary {
public:
    Vocabulary() = default;

    // Collects the distinct code points of a UTF-8 corpus.
    static Vocabulary build(std::string_view corpus_text);

    TokenId id_of(char32_t cp) const;  // unknown code points map to unk_id()
    char32_t char_of(TokenId id) const;

    TokenId unk_id() const { return static_cast<TokenId>(chars_.size()); }
    std::size_t size() const { return chars_.size() + 1; }  // includes unk

    TokenSeq encode(std::string_view text) const;
    std::string decode(const TokenSeq& tokens) const;  // unk renders as U+FFFD

    const std::vector<char32_t>& chars() const { return chars_; }

    // char -> id map for the JSON vocabulary file; unk appears as "<unk>".
    std::map<std::string, TokenId> to_map() const;
    static Vocabulary from_map(const std::map<std::string, TokenId>& m);

private:
    std::vector<char32_t> chars_;           // sorted by code point
    std::map<char32_t, TokenId> lookup_;
};

// Minimal UTF-8 helpers (invalid bytes decode as U+FFFD).
std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(char32_t cp);

}  // namespace splitsim
