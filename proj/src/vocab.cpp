// SPDX-License-Identifier: Apache-2.0

#include "gedi/vocab.hpp"

#include <unordered_set>

namespace gedi {

const std::string& Vocab::name_of(int id) const {
    if (id < 0 || id >= size())
        throw InvalidArgument("Vocab::name_of: token id " + std::to_string(id) + " out of range");
    return names[static_cast<std::size_t>(id)];
}

int Vocab::id_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (names[static_cast<std::size_t>(i)] == name) return i;
    throw DataError("Vocab::id_of: unknown token name '" + name + "'");
}

void Vocab::validate() const {
    if (n_content < 1) throw InvalidArgument("Vocab: needs at least one content token");
    if (size() != n_content + 3)
        throw InvalidArgument("Vocab: ids must be dense over content plus the three reserved tokens");
    auto in_range = [&](int id) { return id >= n_content && id < size(); };
    if (!in_range(eos) || !in_range(bos) || !in_range(pad))
        throw InvalidArgument("Vocab: reserved ids must follow the content range");
    if (eos == bos || eos == pad || bos == pad)
        throw InvalidArgument("Vocab: BOS/EOS/PAD ids must be distinct");
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty() || n.find_first_of(" \t\n") != std::string::npos)
            throw InvalidArgument("Vocab: token names must be nonempty and whitespace-free");
        if (!seen.insert(n).second)
            throw InvalidArgument("Vocab: duplicate token name '" + n + "'");
    }
}

Vocab Vocab::make(std::vector<std::string> content_names) {
    Vocab v;
    v.n_content = static_cast<int>(content_names.size());
    v.names = std::move(content_names);
    v.names.push_back("<eos>");
    v.names.push_back("<bos>");
    v.names.push_back("<pad>");
    v.eos = v.n_content;
    v.bos = v.n_content + 1;
    v.pad = v.n_content + 2;
    v.validate();
    return v;
}

int ControlCodeSet::class_of(const std::string& name) const {
    for (int i = 0; i < n_classes(); ++i)
        if (class_names[static_cast<std::size_t>(i)] == name) return i;
    throw DataError("ControlCodeSet: unknown class name '" + name + "'");
}

void ControlCodeSet::validate(const Vocab& vocab) const {
    if (class_names.empty()) throw InvalidArgument("ControlCodeSet: needs at least one class");
    std::unordered_set<std::string> seen;
    for (const auto& n : class_names)
        if (!seen.insert(n).second)
            throw InvalidArgument("ControlCodeSet: duplicate class name '" + n + "'");
    const std::size_t n_bias = binarized ? 2u : class_names.size();
    if (bias.size() != n_bias)
        throw InvalidArgument("ControlCodeSet: bias count does not match the code count");
    if (binarized) {
        if (class_names.size() < 2)
            throw InvalidArgument("ControlCodeSet: binarized mode needs at least two classes");
        if (name_token_ids.size() != class_names.size())
            throw InvalidArgument("ControlCodeSet: one name token per class required");
        std::unordered_set<int> ids;
        for (int id : name_token_ids) {
            if (!vocab.is_content(id))
                throw InvalidArgument("ControlCodeSet: class-name tokens must be content tokens");
            if (!ids.insert(id).second)
                throw InvalidArgument("ControlCodeSet: class-name tokens must be distinct");
        }
    } else if (!name_token_ids.empty()) {
        throw InvalidArgument("ControlCodeSet: name tokens only apply to binarized mode");
    }
}

ControlCodeSet ControlCodeSet::standard(std::vector<std::string> class_names) {
    ControlCodeSet c;
    c.bias.assign(class_names.size(), 0.0);
    c.class_names = std::move(class_names);
    return c;
}

ControlCodeSet ControlCodeSet::binary_pair(std::vector<std::string> class_names,
                                           std::vector<int> name_token_ids) {
    ControlCodeSet c;
    c.class_names = std::move(class_names);
    c.name_token_ids = std::move(name_token_ids);
    c.binarized = true;
    c.bias.assign(2, 0.0);
    return c;
}

} // namespace gedi
