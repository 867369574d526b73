// SPDX-License-Identifier: Apache-2.0

#include "gedi/cclm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gedi/numeric.hpp"
#include "gedi/rng.hpp"

namespace gedi {

std::int64_t TabularCCLM::n_contexts() const {
    std::int64_t n = 1;
    for (int i = 0; i < order; ++i) n *= vocab.size();
    return n;
}

std::span<const double> TabularCCLM::logit_row(int model_class, std::int64_t ctx) const {
    const auto off = (static_cast<std::int64_t>(model_class) * n_contexts() + ctx) * n_predicted();
    return {logits.data() + off, static_cast<std::size_t>(n_predicted())};
}

std::span<double> TabularCCLM::logit_row_mut(int model_class, std::int64_t ctx) {
    const auto off = (static_cast<std::int64_t>(model_class) * n_contexts() + ctx) * n_predicted();
    return {logits.data() + off, static_cast<std::size_t>(n_predicted())};
}

int TabularCCLM::model_class(int class_id) const {
    if (codes.binarized)
        throw InvalidArgument("TabularCCLM: binarized models address classes via (code, task class)");
    if (class_id < 0 || class_id >= codes.n_classes())
        throw InvalidArgument("TabularCCLM: class id " + std::to_string(class_id) +
                              " out of range (C=" + std::to_string(codes.n_classes()) + ")");
    return class_id;
}

int TabularCCLM::model_class(BinaryCode code, int task_class) const {
    if (!codes.binarized)
        throw InvalidArgument("TabularCCLM: (code, task class) addressing needs a binarized model");
    if (task_class < 0 || task_class >= codes.n_classes())
        throw InvalidArgument("TabularCCLM: task class " + std::to_string(task_class) + " out of range");
    return static_cast<int>(code) * codes.n_classes() + task_class;
}

double TabularCCLM::bias_of_model_class(int mc) const {
    if (codes.binarized) return codes.bias[static_cast<std::size_t>(mc / codes.n_classes())];
    return codes.bias[static_cast<std::size_t>(mc)];
}

void TabularCCLM::validate() const {
    vocab.validate();
    codes.validate(vocab);
    if (order < 0) throw InvalidArgument("TabularCCLM: order must be >= 0");
    if (!(alpha > 0.0)) throw InvalidArgument("TabularCCLM: alpha must be positive");
    if (static_cast<std::int64_t>(logits.size()) != n_cells())
        throw InvalidArgument("TabularCCLM: logit table size does not match the layout");
}

TabularCCLM tabular_init(const Vocab& vocab, int order, ControlCodeSet codes,
                         InitScheme scheme, std::uint64_t seed, double noise_sigma) {
    TabularCCLM m;
    m.vocab = vocab;
    m.codes = std::move(codes);
    m.order = order;
    m.alpha = 1.0;
    m.logits.assign(static_cast<std::size_t>(m.n_cells()), 0.0);
    if (scheme == InitScheme::Noise) {
        Rng rng(seed);
        for (auto& l : m.logits) l = noise_sigma * rng.normal();
    }
    m.validate();
    return m;
}

LMState init_state_model_class(const TabularCCLM& model, int mc) {
    if (mc < 0 || mc >= model.n_model_classes())
        throw InvalidArgument("init_state: model class " + std::to_string(mc) + " out of range");
    LMState s;
    s.model_class = mc;
    s.context.assign(static_cast<std::size_t>(model.order), model.vocab.bos);
    s.t = 0;
    s.cum_logprob = 0.0;
    return s;
}

LMState init_state(const TabularCCLM& model, int class_id) {
    return init_state_model_class(model, model.model_class(class_id));
}

std::int64_t context_index(const TabularCCLM& model, const LMState& state) {
    std::int64_t idx = 0;
    for (int tok : state.context) idx = idx * model.vocab.size() + tok;
    return idx;
}

void next_token_logprobs_into(const TabularCCLM& model, const LMState& state, std::span<double> out) {
    const int n = model.vocab.size();
    const int np = model.n_predicted();
    if (static_cast<int>(out.size()) != n)
        throw InvalidArgument("next_token_logprobs: output buffer size mismatch");
    const auto row = model.logit_row(state.model_class, context_index(model, state));
    const double lse = log_sum_exp(row);
    for (int v = 0; v < np; ++v) out[static_cast<std::size_t>(v)] = row[static_cast<std::size_t>(v)] - lse;
    for (int v = np; v < n; ++v) out[static_cast<std::size_t>(v)] = kNegInf; // BOS, PAD
}

std::vector<double> next_token_logprobs(const TabularCCLM& model, const LMState& state) {
    std::vector<double> out(static_cast<std::size_t>(model.vocab.size()));
    next_token_logprobs_into(model, state, out);
    return out;
}

namespace {

double token_logprob(const TabularCCLM& model, const LMState& state, int token) {
    if (token < 0 || token >= model.vocab.size())
        throw InvalidArgument("advance: token id " + std::to_string(token) + " out of range");
    if (token >= model.n_predicted())
        return kNegInf; // BOS/PAD are never predicted
    const auto row = model.logit_row(state.model_class, context_index(model, state));
    return row[static_cast<std::size_t>(token)] - log_sum_exp(row);
}

void shift_context(LMState& state, int token) {
    if (!state.context.empty()) {
        std::rotate(state.context.begin(), state.context.begin() + 1, state.context.end());
        state.context.back() = token;
    }
    state.t += 1;
}

} // namespace

void advance_inplace(const TabularCCLM& model, LMState& state, int token) {
    state.cum_logprob += token_logprob(model, state, token);
    shift_context(state, token);
}

LMState advance(const TabularCCLM& model, const LMState& state, int token) {
    LMState next = state;
    advance_inplace(model, next, token);
    return next;
}

void advance_with_row(const TabularCCLM& model, LMState& state, int token,
                      std::span<const double> row_logprobs) {
    if (token < 0 || token >= model.vocab.size())
        throw InvalidArgument("advance: token id " + std::to_string(token) + " out of range");
    state.cum_logprob += row_logprobs[static_cast<std::size_t>(token)];
    shift_context(state, token);
}

double sequence_logprob_model_class(const TabularCCLM& model, int mc, std::span<const int> tokens) {
    LMState s = init_state_model_class(model, mc);
    for (int tok : tokens) advance_inplace(model, s, tok);
    return s.cum_logprob;
}

double sequence_logprob(const TabularCCLM& model, int class_id, std::span<const int> tokens) {
    return sequence_logprob_model_class(model, model.model_class(class_id), tokens);
}

// ---------------------------------------------------------------------------
// Checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "gedi-checkpoint v1";

std::string fmt17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace

void save_checkpoint(const std::string& path, const TabularCCLM& model, const std::string& note) {
    model.validate();
    if (note.find('\n') != std::string::npos)
        throw InvalidArgument("save_checkpoint: note must be a single line");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
    os << kCheckpointMagic << "\n";
    if (!note.empty()) os << "note: " << note << "\n";
    os << "vocab:";
    for (const auto& n : model.vocab.names) os << ' ' << n;
    os << "\n";
    os << "n-content: " << model.vocab.n_content << "\n";
    os << "eos: " << model.vocab.eos << "\nbos: " << model.vocab.bos << "\npad: " << model.vocab.pad << "\n";
    os << "order: " << model.order << "\n";
    os << "alpha: " << fmt17(model.alpha) << "\n";
    os << "binarized: " << (model.codes.binarized ? 1 : 0) << "\n";
    os << "classes:";
    for (const auto& n : model.codes.class_names) os << ' ' << n;
    os << "\n";
    os << "bias:";
    for (double b : model.codes.bias) os << ' ' << fmt17(b);
    os << "\n";
    if (model.codes.binarized) {
        os << "name-token-ids:";
        for (int id : model.codes.name_token_ids) os << ' ' << id;
        os << "\n";
    }
    os << "table-cells: " << model.n_cells() << "\n";
    os << "table-encoding: float64-le row-major (class, context, token)\n";
    os << "end-header\n";
    static_assert(sizeof(double) == 8);
    os.write(reinterpret_cast<const char*>(model.logits.data()),
             static_cast<std::streamsize>(model.logits.size() * sizeof(double)));
    if (!os) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

namespace {

std::string expect_line(std::istream& is, const std::string& what) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("load_checkpoint: truncated file while reading " + what);
    return line;
}

std::string field(const std::string& line, const std::string& key) {
    const std::string prefix = key + ":";
    if (line.rfind(prefix, 0) != 0)
        throw DataError("load_checkpoint: expected '" + key + ":' line, got '" + line + "'");
    std::size_t p = prefix.size();
    while (p < line.size() && line[p] == ' ') ++p;
    return line.substr(p);
}

} // namespace

TabularCCLM load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open '" + path + "'");
    const std::string magic = expect_line(is, "the format tag");
    if (magic != kCheckpointMagic)
        throw DataError("load_checkpoint: unsupported format version '" + magic + "'");

    TabularCCLM m;
    std::string vocab_line = expect_line(is, "vocab");
    if (vocab_line.rfind("note:", 0) == 0) vocab_line = expect_line(is, "vocab"); // provenance, skipped
    {
        std::istringstream ss(field(vocab_line, "vocab"));
        std::string tok;
        while (ss >> tok) m.vocab.names.push_back(tok);
    }
    m.vocab.n_content = std::stoi(field(expect_line(is, "n-content"), "n-content"));
    m.vocab.eos = std::stoi(field(expect_line(is, "eos"), "eos"));
    m.vocab.bos = std::stoi(field(expect_line(is, "bos"), "bos"));
    m.vocab.pad = std::stoi(field(expect_line(is, "pad"), "pad"));
    m.order = std::stoi(field(expect_line(is, "order"), "order"));
    m.alpha = std::stod(field(expect_line(is, "alpha"), "alpha"));
    m.codes.binarized = std::stoi(field(expect_line(is, "binarized"), "binarized")) != 0;
    {
        std::istringstream ss(field(expect_line(is, "classes"), "classes"));
        std::string tok;
        while (ss >> tok) m.codes.class_names.push_back(tok);
    }
    {
        std::istringstream ss(field(expect_line(is, "bias"), "bias"));
        double b;
        while (ss >> b) m.codes.bias.push_back(b);
    }
    if (m.codes.binarized) {
        std::istringstream ss(field(expect_line(is, "name-token-ids"), "name-token-ids"));
        int id;
        while (ss >> id) m.codes.name_token_ids.push_back(id);
    }
    const std::int64_t cells = std::stoll(field(expect_line(is, "table-cells"), "table-cells"));
    expect_line(is, "table-encoding");
    if (expect_line(is, "end-header") != "end-header")
        throw DataError("load_checkpoint: malformed header in '" + path + "'");

    m.logits.resize(static_cast<std::size_t>(cells));
    is.read(reinterpret_cast<char*>(m.logits.data()),
            static_cast<std::streamsize>(m.logits.size() * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(m.logits.size() * sizeof(double)))
        throw DataError("load_checkpoint: truncated logit table in '" + path + "'");
    try {
        m.validate();
    } catch (const Error& e) {
        throw DataError(std::string("load_checkpoint: inconsistent checkpoint: ") + e.what());
    }
    if (cells != m.n_cells())
        throw DataError("load_checkpoint: table-cells does not match the model layout");
    return m;
}

} // namespace gedi
