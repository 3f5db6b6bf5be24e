#include "fcni/tokenizer.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "fcni/error.hpp"
#include "fcni/io.hpp"

namespace fcni {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>",
                                            "<sep>", "<unk>", "<fcn>"};
}

Tokenizer Tokenizer::build(const std::vector<std::string>& words) {
    Tokenizer t;
    t.words_ = kSpecials;
    for (int v = 0; v <= 100; ++v) t.words_.push_back(std::to_string(v));

    std::set<std::string> extra;
    for (const auto& entry : words) {
        std::istringstream ss(entry);
        std::string w;
        while (ss >> w) extra.insert(w);
    }
    for (const auto& w : t.words_) extra.erase(w);
    for (const auto& w : extra) t.words_.push_back(w);

    for (std::size_t i = 0; i < t.words_.size(); ++i)
        t.ids_.emplace(t.words_[i], static_cast<int>(i));
    return t;
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(id_of(w));
    return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word_of(ids[i]);
    }
    return out;
}

int Tokenizer::id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word_of(int id) const {
    if (id < 0 || id >= vocab_size()) throw invalid_input("token id out of range");
    return words_[static_cast<std::size_t>(id)];
}

int Tokenizer::integer_value(int id) const {
    const int first = static_cast<int>(kSpecials.size());
    if (id >= first && id <= first + 100) return id - first;
    return -1;
}

void Tokenizer::save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& w : words_) out += w + "\n";
    io::atomic_write_bytes(path, out);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    std::string buf = io::read_bytes(path);
    Tokenizer t;
    std::istringstream ss(buf);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) t.words_.push_back(line);
    if (t.words_.size() < kSpecials.size() + 101)
        throw io_error("vocabulary file too small: " + path.string());
    for (std::size_t i = 0; i < t.words_.size(); ++i)
        t.ids_.emplace(t.words_[i], static_cast<int>(i));
    return t;
}

}  // namespace fcni
