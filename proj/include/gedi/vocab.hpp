// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "gedi/errors.hpp"

namespace gedi {

/// Token inventory. Ids are dense in [0, size()). The first n_content ids are
/// ordinary emittable tokens; the reserved EOS/BOS/PAD ids follow them. EOS is
/// emittable (models may give it probability mass); BOS and PAD are
/// context-only and never predicted.
struct Vocab {
    std::vector<std::string> names; // one printable name per id
    int n_content = 0;
    int eos = -1;
    int bos = -1;
    int pad = -1;

    int size() const { return static_cast<int>(names.size()); }

    /// Number of predictable tokens: content plus EOS. Table columns use this.
    int n_predicted() const { return n_content + 1; }

    bool is_content(int id) const { return id >= 0 && id < n_content; }

    const std::string& name_of(int id) const;
    /// Id for a token name; DataError if unknown.
    int id_of(const std::string& name) const;

    void validate() const;

    /// Build a vocab from content-token names; appends <eos>, <bos>, <pad>.
    static Vocab make(std::vector<std::string> content_names);

    bool operator==(const Vocab&) const = default;
};

/// Code used to index a binarized model class pair.
enum class BinaryCode : int { True = 0, False = 1 };

/// Task classes and how they map onto model conditioning.
///
/// Standard mode: each task class is its own control code; the model holds one
/// parameter row set per class and the prior bias b_c attaches per class.
///
/// Binarized mode: the codes are {true,false}; each task class contributes a
/// class-name vocab token that is prepended to the sequence as its first
/// token, and the prior biases attach to the two codes.
struct ControlCodeSet {
    std::vector<std::string> class_names;
    std::vector<double> bias;         // standard: per class; binarized: {b_true, b_false}
    bool binarized = false;
    std::vector<int> name_token_ids;  // binarized: vocab token id per task class

    int n_classes() const { return static_cast<int>(class_names.size()); }

    int class_of(const std::string& name) const;

    void validate(const Vocab& vocab) const;

    static ControlCodeSet standard(std::vector<std::string> class_names);
    static ControlCodeSet binary_pair(std::vector<std::string> class_names,
                                      std::vector<int> name_token_ids);

    bool operator==(const ControlCodeSet&) const = default;
};

} // namespace gedi
