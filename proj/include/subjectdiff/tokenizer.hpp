#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "subjectdiff/error.hpp"

namespace sdiff {

// Closed toy vocabulary. Words unknown to it are an input error; the sprite
// corpus and the prompt template only ever produce words from this list.
class Vocab {
public:
    static const Vocab& toy();

    int size() const { return (int)words_.size(); }
    int bos_id() const { return bos_; }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        SDIFF_CHECK(it != index_.end(), ErrorKind::Input, "unknown token: '" + w + "'");
        return it->second;
    }
    const std::string& word(int id) const {
        SDIFF_CHECK(id >= 0 && id < size(), ErrorKind::Input, "token id out of range");
        return words_[id];
    }

    // whitespace split; commas become their own tokens
    std::vector<int> tokenize(const std::string& text) const;
    std::vector<int> tokenize_with_bos(const std::string& text) const;
    std::string detokenize(const std::vector<int>& ids) const;

private:
    Vocab(std::vector<std::string> words, int bos);
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    int bos_;
};

std::vector<std::string> split_words(const std::string& text);

}  // namespace sdiff
