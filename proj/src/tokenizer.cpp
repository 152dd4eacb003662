#include "subjectdiff/tokenizer.hpp"

namespace sdiff {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n') {
            flush();
        } else if (ch == ',') {
            flush();
            out.emplace_back(",");
        } else {
            cur.push_back(ch);
        }
    }
    flush();
    return out;
}

Vocab::Vocab(std::vector<std::string> words, int bos) : words_(std::move(words)), bos_(bos) {
    for (int i = 0; i < (int)words_.size(); ++i) index_[words_[i]] = i;
}

const Vocab& Vocab::toy() {
    static const Vocab v(
        {
            "<bos>",
            // articles / template
            "a", "the", "is", ",",
            // shapes
            "circle", "square", "triangle", "cross", "ring",
            // colors
            "red", "green", "blue", "yellow", "magenta",
            // textures (not used in captions; kept for prompt experiments)
            "solid", "striped",
            // context phrases
            "in", "on", "at", "snow", "grass", "night", "desert", "water",
            // generic nouns
            "sprite", "shape", "thing",
        },
        0);
    return v;
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::vector<int> Vocab::tokenize_with_bos(const std::string& text) const {
    std::vector<int> ids{bos_};
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        const std::string& w = word(ids[i]);
        if (!s.empty() && w != ",") s += ' ';
        s += w;
    }
    return s;
}

}  // namespace sdiff
