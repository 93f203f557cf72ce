#include "splitsim/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "splitsim/errors.hpp"

namespace splitsim {

std::vector<char32_t> utf8_decode(std::string_view text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char b0 = static_cast<unsigned char>(text[i]);
        char32_t cp = 0xFFFD;
        std::size_t len = 1;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0 && i + 1 < text.size()) {
            cp = (b0 & 0x1Fu) << 6 | (static_cast<unsigned char>(text[i + 1]) & 0x3Fu);
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0 && i + 2 < text.size()) {
            cp = (b0 & 0x0Fu) << 12 |
                 (static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 6 |
                 (static_cast<unsigned char>(text[i + 2]) & 0x3Fu);
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0 && i + 3 < text.size()) {
            cp = (b0 & 0x07u) << 18 |
                 (static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 12 |
                 (static_cast<unsigned char>(text[i + 2]) & 0x3Fu) << 6 |
                 (static_cast<unsigned char>(text[i + 3]) & 0x3Fu);
            len = 4;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(char32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

Vocabulary Vocabulary::build(std::string_view corpus_text) {
    std::set<char32_t> uniq;
    for (char32_t cp : utf8_decode(corpus_text)) uniq.insert(cp);
    Vocabulary v;
    v.chars_.assign(uniq.begin(), uniq.end());  // std::set iterates sorted
    for (std::size_t i = 0; i < v.chars_.size(); ++i)
        v.lookup_[v.chars_[i]] = static_cast<TokenId>(i);
    return v;
}

TokenId Vocabulary::id_of(char32_t cp) const {
    auto it = lookup_.find(cp);
    return it == lookup_.end() ? unk_id() : it->second;
}

char32_t Vocabulary::char_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) > chars_.size())
        raise(ErrorKind::InvalidInput, "char_of: token id out of range");
    if (static_cast<std::size_t>(id) == chars_.size()) return 0xFFFD;  // unk
    return chars_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
    TokenSeq out;
    for (char32_t cp : utf8_decode(text)) out.push_back(id_of(cp));
    return out;
}

std::string Vocabulary::decode(const TokenSeq& tokens) const {
    std::string s;
    for (TokenId id : tokens) s += utf8_encode(char_of(id));
    return s;
}

std::map<std::string, TokenId> Vocabulary::to_map() const {
    std::map<std::string, TokenId> m;
    for (std::size_t i = 0; i < chars_.size(); ++i)
        m[utf8_encode(chars_[i])] = static_cast<TokenId>(i);
    m["<unk>"] = unk_id();
    return m;
}

Vocabulary Vocabulary::from_map(const std::map<std::string, TokenId>& m) {
    std::vector<std::pair<char32_t, TokenId>> entries;
    TokenId unk = -1;
    for (const auto& [key, id] : m) {
        if (key == "<unk>") {
            unk = id;
            continue;
        }
        auto cps = utf8_decode(key);
        if (cps.size() != 1)
            raise(ErrorKind::InvalidInput, "vocabulary key is not a single character: " + key);
        entries.emplace_back(cps[0], id);
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    Vocabulary v;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].second != static_cast<TokenId>(i))
            raise(ErrorKind::InvalidInput, "vocabulary ids are not contiguous");
        v.chars_.push_back(entries[i].first);
        v.lookup_[entries[i].first] = static_cast<TokenId>(i);
    }
    if (unk != static_cast<TokenId>(v.chars_.size()))
        raise(ErrorKind::InvalidInput, "vocabulary <unk> id must follow the last character id");
    return v;
}

}  // namespace splitsim
