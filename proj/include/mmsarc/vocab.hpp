#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsarc/error.hpp"

namespace mmsarc {

/// Token table with dense ids; ids 0..2 are reserved for [PAD], [CLS], [SEP].
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;

    Vocabulary() {
        add("[PAD]");
        add("[CLS]");
        add("[SEP]");
    }

    int add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    int id(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) throw DataError("vocabulary: unknown token '" + token + "'");
        return it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    const std::string& token(int id) const {
        if (id < 0 || id >= size())
            throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    /// One token per line, line index = id.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("vocabulary: cannot write " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("vocabulary: cannot read " + path);
        Vocabulary v = empty();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (v.ids_.count(line))
                throw DataError("vocabulary: duplicate token '" + line + "' in " + path);
            v.ids_.emplace(line, static_cast<int>(v.tokens_.size()));
            v.tokens_.push_back(line);
        }
        if (v.size() < 3 || v.tokens_[0] != "[PAD]" || v.tokens_[1] != "[CLS]" ||
            v.tokens_[2] != "[SEP]")
            throw DataError("vocabulary: first three entries must be [PAD], [CLS], [SEP] in " + path);
        return v;
    }

private:
    static Vocabulary empty() {
        Vocabulary v;
        v.tokens_.clear();
        v.ids_.clear();
        return v;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace mmsarc
