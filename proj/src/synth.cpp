// SPDX-License-Identifier: Apache-2.0

#include "gedi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gedi/numeric.hpp"
#include "gedi/rng.hpp"

namespace gedi {

std::int64_t SourceSpec::n_contexts() const {
    std::int64_t n = 1;
    for (int i = 0; i < order; ++i) n *= vocab.size();
    return n;
}

double SourceSpec::prob(int class_id, std::int64_t ctx, int col) const {
    return probs[(static_cast<std::int64_t>(class_id) * n_contexts() + ctx) * vocab.n_predicted() + col];
}

void SourceSpec::validate() const {
    vocab.validate();
    if (class_names.size() < 1) throw InvalidArgument("SourceSpec: needs at least one class");
    if (order < 0) throw InvalidArgument("SourceSpec: order must be >= 0");
    if (length.min_len < 1 || length.max_len < length.min_len)
        throw InvalidArgument("SourceSpec: bad length bounds");
    if (!(length.stop_p >= 0.0 && length.stop_p <= 1.0))
        throw InvalidArgument("SourceSpec: stop_p must be in [0,1]");
    const auto expected = static_cast<std::size_t>(
        static_cast<std::int64_t>(n_classes()) * n_contexts() * vocab.n_predicted());
    if (probs.size() != expected) throw InvalidArgument("SourceSpec: probability table size mismatch");
    for (std::size_t off = 0; off < probs.size(); off += static_cast<std::size_t>(vocab.n_predicted())) {
        double s = 0.0;
        for (int v = 0; v < vocab.n_predicted(); ++v) {
            const double p = probs[off + static_cast<std::size_t>(v)];
            if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("SourceSpec: probability outside [0,1]");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw InvalidArgument("SourceSpec: a conditional row does not sum to 1");
    }
}

namespace {

std::string fmt17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

} // namespace

std::uint64_t SourceSpec::hash() const {
    std::uint64_t h = 14695981039346656037ull;
    fnv_mix(h, name.data(), name.size());
    for (const auto& n : vocab.names) fnv_mix(h, n.data(), n.size());
    for (const auto& n : class_names) fnv_mix(h, n.data(), n.size());
    fnv_mix(h, &order, sizeof order);
    fnv_mix(h, &length.min_len, sizeof length.min_len);
    fnv_mix(h, &length.max_len, sizeof length.max_len);
    fnv_mix(h, &length.stop_p, sizeof length.stop_p);
    fnv_mix(h, probs.data(), probs.size() * sizeof(double));
    return h;
}

SourceSpec make_s1() {
    SourceSpec s;
    s.name = "s1";
    s.vocab = Vocab::make({"A", "B"});
    s.class_names = {"class0", "class1"};
    s.order = 0;
    s.length = {8, 16, 0.0};
    s.seed = 0;
    // columns: A, B, <eos>
    s.probs = {0.8, 0.2, 0.0,   // class0
               0.2, 0.8, 0.0};  // class1
    s.validate();
    return s;
}

SourceSpec make_s2(std::uint64_t seed) {
    SourceSpec s;
    s.name = "s2";
    std::vector<std::string> content;
    for (int i = 0; i < 8; ++i) content.push_back("t" + std::to_string(i));
    // Class-name tokens live in the vocab (binarized guides prepend them) but
    // the source never emits them.
    for (int c = 0; c < 4; ++c) content.push_back("<c" + std::to_string(c) + ">");
    s.vocab = Vocab::make(std::move(content));
    s.class_names = {"c0", "c1", "c2", "c3"};
    s.order = 1;
    s.length = {8, 16, 0.0};
    s.seed = seed;

    const auto n_ctx = s.n_contexts();
    const int np = s.vocab.n_predicted();
    s.probs.assign(static_cast<std::size_t>(4 * n_ctx * np), 0.0);
    Rng rng(seed);
    for (int c = 0; c < 4; ++c) {
        for (std::int64_t ctx = 0; ctx < n_ctx; ++ctx) {
            // Dirichlet(1) over the 8 ordinary tokens; name tokens and EOS
            // get zero mass.
            double total = 0.0;
            std::vector<double> row(8);
            for (auto& x : row) {
                x = -std::log(std::max(rng.uniform01(), 0x1.0p-53));
                total += x;
            }
            const auto off =
                static_cast<std::size_t>((static_cast<std::int64_t>(c) * n_ctx + ctx) * np);
            for (int v = 0; v < 8; ++v) s.probs[off + static_cast<std::size_t>(v)] = row[static_cast<std::size_t>(v)] / total;
        }
    }
    s.validate();
    return s;
}

TabularCCLM model_from_source(const SourceSpec& spec) {
    TabularCCLM m;
    m.vocab = spec.vocab;
    m.codes = ControlCodeSet::standard(spec.class_names);
    m.order = spec.order;
    m.alpha = 1.0;
    m.logits.assign(static_cast<std::size_t>(m.n_cells()), 0.0);
    const int np = m.n_predicted();
    for (int c = 0; c < spec.n_classes(); ++c) {
        for (std::int64_t ctx = 0; ctx < m.n_contexts(); ++ctx) {
            auto row = m.logit_row_mut(c, ctx);
            for (int v = 0; v < np; ++v) {
                const double p = spec.prob(c, ctx, v);
                row[static_cast<std::size_t>(v)] = (p > 0.0) ? std::log(p) : kNegInf;
            }
        }
    }
    m.validate();
    return m;
}

std::string split_tag(Split s) {
    switch (s) {
        case Split::None: return "-";
        case Split::A: return "A";
        case Split::B: return "B";
        case Split::Validation: return "val";
    }
    throw InvalidArgument("split_tag: bad split");
}

Split split_from_tag(const std::string& tag) {
    if (tag == "-") return Split::None;
    if (tag == "A") return Split::A;
    if (tag == "B") return Split::B;
    if (tag == "val") return Split::Validation;
    throw DataError("unknown split tag '" + tag + "'");
}

std::vector<LabeledExample> LabeledCorpus::of_split(Split s) const {
    std::vector<LabeledExample> out;
    for (const auto& e : items)
        if (e.split == s) out.push_back(e);
    return out;
}

LabeledCorpus sample_corpus(const SourceSpec& spec, int n, std::uint64_t seed, ExecMode exec) {
    spec.validate();
    if (n < 1) throw InvalidArgument("sample_corpus: n must be >= 1");
    LabeledCorpus corpus;
    corpus.vocab = spec.vocab;
    corpus.class_names = spec.class_names;
    corpus.source_name = spec.name;
    corpus.source_hash = spec.hash();
    corpus.seed = seed;
    corpus.items.resize(static_cast<std::size_t>(n));

    const Rng master(seed);
    const int np = spec.vocab.n_predicted();
    parallel_for(exec, static_cast<std::size_t>(n), [&](std::size_t i) {
        Rng rng = master.fork(i);
        LabeledExample& ex = corpus.items[i];
        ex.class_id = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(spec.n_classes())));
        int len;
        if (spec.length.stop_p <= 0.0) {
            len = spec.length.min_len +
                  static_cast<int>(rng.uniform_below(
                      static_cast<std::uint64_t>(spec.length.max_len - spec.length.min_len + 1)));
        } else {
            len = spec.length.min_len;
            while (len < spec.length.max_len && rng.uniform01() >= spec.length.stop_p) ++len;
        }
        std::vector<int> context(static_cast<std::size_t>(spec.order), spec.vocab.bos);
        ex.tokens.reserve(static_cast<std::size_t>(len));
        for (int p = 0; p < len; ++p) {
            std::int64_t ctx = 0;
            for (int tok : context) ctx = ctx * spec.vocab.size() + tok;
            const auto off = static_cast<std::size_t>(
                (static_cast<std::int64_t>(ex.class_id) * spec.n_contexts() + ctx) * np);
            const auto tok = static_cast<int>(
                rng.categorical({spec.probs.data() + off, static_cast<std::size_t>(np)}));
            if (tok == spec.vocab.n_content) break; // EOS drawn: sequence ends
            ex.tokens.push_back(tok);
            if (!context.empty()) {
                std::rotate(context.begin(), context.begin() + 1, context.end());
                context.back() = tok;
            }
        }
        if (ex.tokens.empty()) ex.tokens.push_back(0); // keep sequences nonempty
    });
    return corpus;
}

std::vector<double> oracle_posterior(const SourceSpec& spec, std::span<const int> tokens) {
    const int C = spec.n_classes();
    std::vector<double> z(static_cast<std::size_t>(C), 0.0);
    const int np = spec.vocab.n_predicted();
    for (int c = 0; c < C; ++c) {
        std::vector<int> context(static_cast<std::size_t>(spec.order), spec.vocab.bos);
        double ll = 0.0;
        for (int tok : tokens) {
            if (tok < 0 || tok >= spec.vocab.size())
                throw InvalidArgument("oracle_posterior: token id out of range");
            std::int64_t ctx = 0;
            for (int t : context) ctx = ctx * spec.vocab.size() + t;
            double p = 0.0;
            if (tok < np) p = spec.prob(c, ctx, tok);
            ll += (p > 0.0) ? std::log(p) : kNegInf;
            if (!context.empty()) {
                std::rotate(context.begin(), context.begin() + 1, context.end());
                context.back() = tok;
            }
        }
        z[static_cast<std::size_t>(c)] = ll; // uniform prior, exponent 1
    }
    std::vector<double> post(static_cast<std::size_t>(C));
    softmax_from_logits(z, post);
    return post;
}

void half_split(LabeledCorpus& corpus, std::uint64_t seed) {
    const std::size_t n = corpus.items.size();
    if (n < 3) throw InvalidArgument("half_split: corpus too small to split (needs >= 3)");
    Rng rng(seed);
    const int C = static_cast<int>(corpus.class_names.size());
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < n; ++i)
        by_class.at(static_cast<std::size_t>(corpus.items[i].class_id)).push_back(i);
    bool a_gets_extra = true; // alternate the odd element so |A| and |B| stay within 1 globally
    for (auto& idx : by_class) {
        // Fisher-Yates with the shared stream; per-class order is stable
        // because classes are visited in id order.
        for (std::size_t i = idx.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_below(i));
            std::swap(idx[i - 1], idx[j]);
        }
        const std::size_t n_val = (idx.size() * 10 + 50) / 100; // round(0.1 * n_c)
        const std::size_t n_rest = idx.size() - n_val;
        std::size_t n_a = n_rest / 2;
        if (n_rest % 2 == 1) {
            if (a_gets_extra) ++n_a;
            a_gets_extra = !a_gets_extra;
        }
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Split s = Split::B;
            if (i < n_val)
                s = Split::Validation;
            else if (i < n_val + n_a)
                s = Split::A;
            corpus.items[idx[i]].split = s;
        }
    }
}

// ---------------------------------------------------------------------------
// Corpus and source files
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCorpusMagic = "# gedi-corpus v1";
constexpr const char* kSourceMagic = "# gedi-source v1";
} // namespace

void save_corpus(const std::string& path, const LabeledCorpus& corpus) {
    std::ofstream os(path);
    if (!os) throw DataError("save_corpus: cannot open '" + path + "' for writing");
    os << kCorpusMagic << "\n";
    os << "# source: " << corpus.source_name << " hash: " << corpus.source_hash
       << " seed: " << corpus.seed << "\n";
    os << "# vocab:";
    for (const auto& n : corpus.vocab.names) os << ' ' << n;
    os << "\n# n-content: " << corpus.vocab.n_content << "\n";
    os << "# classes:";
    for (const auto& n : corpus.class_names) os << ' ' << n;
    os << "\n";
    for (const auto& ex : corpus.items) {
        os << split_tag(ex.split) << ' ' << corpus.class_names.at(static_cast<std::size_t>(ex.class_id));
        for (int tok : ex.tokens) os << ' ' << corpus.vocab.name_of(tok);
        os << "\n";
    }
    if (!os) throw DataError("save_corpus: write failed for '" + path + "'");
}

LabeledCorpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_corpus: cannot open '" + path + "'");
    std::string line;
    long line_no = 0;
    auto next_line = [&](const char* what) {
        if (!std::getline(is, line))
            throw DataError("load_corpus: '" + path + "': truncated file at line " +
                            std::to_string(line_no + 1) + " while reading " + what);
        ++line_no;
    };

    next_line("the format tag");
    if (line != kCorpusMagic)
        throw DataError("load_corpus: '" + path + "': unsupported format version '" + line + "'");

    LabeledCorpus corpus;
    next_line("provenance");
    {
        std::istringstream ss(line);
        std::string hash_kw, seed_kw, src_kw, src;
        std::uint64_t hash = 0, seed = 0;
        std::string sharp;
        if (!(ss >> sharp >> src_kw >> src >> hash_kw >> hash >> seed_kw >> seed) ||
            sharp != "#" || src_kw != "source:" || hash_kw != "hash:" || seed_kw != "seed:")
            throw DataError("load_corpus: '" + path + "': bad provenance line " + std::to_string(line_no));
        corpus.source_name = src;
        corpus.source_hash = hash;
        corpus.seed = seed;
    }
    next_line("vocab");
    {
        std::istringstream ss(line);
        std::string sharp, kw, tok;
        ss >> sharp >> kw;
        if (sharp != "#" || kw != "vocab:")
            throw DataError("load_corpus: '" + path + "': bad vocab line " + std::to_string(line_no));
        std::vector<std::string> names;
        while (ss >> tok) names.push_back(tok);
        if (names.size() < 4)
            throw DataError("load_corpus: '" + path + "': vocab line lists too few tokens");
        corpus.vocab.names = std::move(names);
    }
    next_line("n-content");
    {
        std::istringstream ss(line);
        std::string sharp, kw;
        int nc = 0;
        if (!(ss >> sharp >> kw >> nc) || sharp != "#" || kw != "n-content:")
            throw DataError("load_corpus: '" + path + "': bad n-content line " + std::to_string(line_no));
        corpus.vocab.n_content = nc;
        corpus.vocab.eos = nc;
        corpus.vocab.bos = nc + 1;
        corpus.vocab.pad = nc + 2;
        corpus.vocab.validate();
    }
    next_line("classes");
    {
        std::istringstream ss(line);
        std::string sharp, kw, name;
        ss >> sharp >> kw;
        if (sharp != "#" || kw != "classes:")
            throw DataError("load_corpus: '" + path + "': bad classes line " + std::to_string(line_no));
        while (ss >> name) corpus.class_names.push_back(name);
        if (corpus.class_names.empty())
            throw DataError("load_corpus: '" + path + "': no classes listed");
    }

    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tag, cls, tok;
        if (!(ss >> tag >> cls))
            throw DataError("load_corpus: '" + path + "': malformed record at line " +
                            std::to_string(line_no));
        LabeledExample ex;
        try {
            ex.split = split_from_tag(tag);
            ex.class_id = static_cast<int>(
                std::find(corpus.class_names.begin(), corpus.class_names.end(), cls) -
                corpus.class_names.begin());
            if (ex.class_id >= static_cast<int>(corpus.class_names.size()))
                throw DataError("unknown class name '" + cls + "'");
            while (ss >> tok) ex.tokens.push_back(corpus.vocab.id_of(tok));
        } catch (const Error& e) {
            throw DataError("load_corpus: '" + path + "': line " + std::to_string(line_no) + ": " +
                            e.what());
        }
        if (ex.tokens.empty())
            throw DataError("load_corpus: '" + path + "': line " + std::to_string(line_no) +
                            ": record has no tokens");
        corpus.items.push_back(std::move(ex));
    }
    return corpus;
}

void save_source(const std::string& path, const SourceSpec& spec) {
    spec.validate();
    std::ofstream os(path);
    if (!os) throw DataError("save_source: cannot open '" + path + "' for writing");
    os << kSourceMagic << "\n";
    os << "name: " << spec.name << "\n";
    os << "seed: " << spec.seed << "\n";
    os << "vocab:";
    for (const auto& n : spec.vocab.names) os << ' ' << n;
    os << "\n";
    os << "n-content: " << spec.vocab.n_content << "\n";
    os << "classes:";
    for (const auto& n : spec.class_names) os << ' ' << n;
    os << "\n";
    os << "order: " << spec.order << "\n";
    os << "length: " << spec.length.min_len << ' ' << spec.length.max_len << ' '
       << fmt17(spec.length.stop_p) << "\n";
    os << "rows: " << spec.n_classes() * spec.n_contexts() << "\n";
    for (int c = 0; c < spec.n_classes(); ++c)
        for (std::int64_t ctx = 0; ctx < spec.n_contexts(); ++ctx) {
            os << "dist " << c << ' ' << ctx << ':';
            for (int v = 0; v < spec.vocab.n_predicted(); ++v) os << ' ' << fmt17(spec.prob(c, ctx, v));
            os << "\n";
        }
    if (!os) throw DataError("save_source: write failed for '" + path + "'");
}

SourceSpec load_source(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_source: cannot open '" + path + "'");
    std::string line;
    auto next_field = [&](const std::string& key) {
        if (!std::getline(is, line)) throw DataError("load_source: truncated file reading " + key);
        const std::string prefix = key + ":";
        if (line.rfind(prefix, 0) != 0)
            throw DataError("load_source: expected '" + key + ":', got '" + line + "'");
        std::size_t p = prefix.size();
        while (p < line.size() && line[p] == ' ') ++p;
        return line.substr(p);
    };

    if (!std::getline(is, line) || line != kSourceMagic)
        throw DataError("load_source: unsupported format version");
    SourceSpec spec;
    spec.name = next_field("name");
    spec.seed = std::stoull(next_field("seed"));
    {
        std::istringstream ss(next_field("vocab"));
        std::string tok;
        while (ss >> tok) spec.vocab.names.push_back(tok);
    }
    spec.vocab.n_content = std::stoi(next_field("n-content"));
    spec.vocab.eos = spec.vocab.n_content;
    spec.vocab.bos = spec.vocab.n_content + 1;
    spec.vocab.pad = spec.vocab.n_content + 2;
    {
        std::istringstream ss(next_field("classes"));
        std::string tok;
        while (ss >> tok) spec.class_names.push_back(tok);
    }
    spec.order = std::stoi(next_field("order"));
    {
        std::istringstream ss(next_field("length"));
        if (!(ss >> spec.length.min_len >> spec.length.max_len >> spec.length.stop_p))
            throw DataError("load_source: bad length line");
    }
    const long rows = std::stol(next_field("rows"));
    const int np = spec.vocab.n_predicted();
    spec.probs.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(np), 0.0);
    for (long r = 0; r < rows; ++r) {
        if (!std::getline(is, line)) throw DataError("load_source: truncated distribution table");
        std::istringstream ss(line);
        std::string kw;
        int c = 0;
        std::int64_t ctx = 0;
        char colon = 0;
        if (!(ss >> kw >> c >> ctx >> colon) || kw != "dist" || colon != ':')
            throw DataError("load_source: bad dist line '" + line + "'");
        const auto off = static_cast<std::size_t>((static_cast<std::int64_t>(c) * spec.n_contexts() + ctx) * np);
        for (int v = 0; v < np; ++v)
            if (!(ss >> spec.probs[off + static_cast<std::size_t>(v)]))
                throw DataError("load_source: short dist row in '" + line + "'");
    }
    spec.validate();
    return spec;
}

} // namespace gedi
