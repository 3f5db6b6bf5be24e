#pragma once

// Closed word-level vocabulary: fixed specials, the integers 0..100 as atomic
// tokens, then every word collected from templates, labels and answers.
// Anything else maps to <unk>.

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace fcni {

class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kUnk = 4;
    static constexpr int kFcn = 5;

    // Builds the vocabulary: specials, "0".."100", then the given words
    // sorted and deduplicated. Multi-word strings are split on whitespace.
    static Tokenizer build(const std::vector<std::string>& words);

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<int>& ids) const;

    int id_of(const std::string& word) const;  // kUnk when absent
    const std::string& word_of(int id) const;
    int vocab_size() const { return static_cast<int>(words_.size()); }

    // Value of an integer token, or -1 when the id is not one.
    int integer_value(int id) const;

    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace fcni
