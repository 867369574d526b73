// SPDX-License-Identifier: Apache-2.0

// Command-line front end: data synthesis, CC-LM training, guided/direct
// generation, classification, evaluation and lambda sweeps. Every artifact
// embeds the producing config, seed and a format-version tag, and identical
// command lines reproduce identical bytes.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gedi/eval.hpp"

using json = nlohmann::ordered_json;
using namespace gedi;

namespace {

std::vector<LabeledSequence> sequences_of(const LabeledCorpus& corpus,
                                          const std::vector<Split>& splits) {
    std::vector<LabeledSequence> out;
    for (const auto& e : corpus.items)
        for (Split s : splits)
            if (e.split == s) {
                out.push_back({e.tokens, e.class_id});
                break;
            }
    return out;
}

std::vector<Split> parse_split_selector(const std::string& sel) {
    if (sel == "A") return {Split::A};
    if (sel == "B") return {Split::B};
    if (sel == "val") return {Split::Validation};
    if (sel == "AB") return {Split::A, Split::B};
    if (sel == "all") return {Split::A, Split::B, Split::Validation, Split::None};
    throw InvalidArgument("unknown split selector '" + sel + "' (use A|B|val|AB|all)");
}

/// Binarized guides name each task class with the vocab token "<name>".
std::vector<int> name_token_ids_for(const Vocab& vocab, const std::vector<std::string>& classes) {
    std::vector<int> ids;
    for (const auto& cls : classes) {
        try {
            ids.push_back(vocab.id_of("<" + cls + ">"));
        } catch (const DataError&) {
            throw DataError("binarized mode needs a '<" + cls + ">' class-name token in the vocab");
        }
    }
    return ids;
}

std::vector<int> tokens_from_names(const Vocab& vocab, const std::vector<std::string>& names) {
    std::vector<int> out;
    for (const auto& n : names) out.push_back(vocab.id_of(n));
    return out;
}

json names_of_tokens(const Vocab& vocab, std::span<const int> tokens) {
    json arr = json::array();
    for (int tok : tokens) arr.push_back(vocab.name_of(tok));
    return arr;
}

json config_json(const GenerationConfig& c) {
    return json{{"omega", c.omega},
                {"rho", c.rho},
                {"tau", c.tau},
                {"rep-penalty", c.rep_penalty},
                {"target-bias", c.target_bias},
                {"max-new-tokens", c.max_new_tokens},
                {"filtering", c.filtering},
                {"mode", c.mode == GenerationConfig::Mode::Guided ? "guided" : "direct"}};
}

struct GenerateFlags {
    std::string preset;
    double omega = -1.0, rho = -1.0, tau = -1.0, rep_penalty = -1.0, bias = 0.0;
    int max_new = -1;
    bool no_filter = false;
    bool bias_set = false;
};

GenerationConfig build_generation_config(const GenerateFlags& f, GenerationConfig::Mode mode) {
    GenerationConfig c = f.preset.empty() ? GenerationConfig{} : GenerationConfig::preset(f.preset);
    if (f.omega >= 0.0) c.omega = f.omega;
    if (f.rho >= 0.0) c.rho = f.rho;
    if (f.tau >= 0.0) c.tau = f.tau;
    if (f.rep_penalty >= 0.0) c.rep_penalty = f.rep_penalty;
    if (f.bias_set) c.target_bias = f.bias;
    if (f.max_new > 0) c.max_new_tokens = f.max_new;
    if (f.no_filter) c.filtering = false;
    c.mode = mode;
    c.validate();
    return c;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    return os;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string source = "s1";
    int n = 1000;
    std::uint64_t seed = 0;
    std::uint64_t source_seed = 1;
    std::uint64_t split_seed = 0;
    bool split_seed_set = false;
    bool no_split = false;
    std::string out;
    std::string save_source_path;
    bool serial = false;
};

int run_synth(const SynthArgs& a) {
    SourceSpec spec;
    if (a.source == "s1")
        spec = make_s1();
    else if (a.source == "s2")
        spec = make_s2(a.source_seed);
    else
        spec = load_source(a.source);

    auto corpus = sample_corpus(spec, a.n, a.seed,
                                a.serial ? ExecMode::Serial : default_exec_mode());
    if (!a.no_split) half_split(corpus, a.split_seed_set ? a.split_seed : a.seed);
    save_corpus(a.out, corpus);
    if (!a.save_source_path.empty()) save_source(a.save_source_path, spec);
    std::cout << "wrote " << corpus.items.size() << " records to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::string metrics;
    std::string split = "A";
    double lambda = 0.5;
    double lr = 0.1;
    int epochs = 50;
    int batch_size = 0;
    int order = 0;
    std::uint64_t seed = 0;
    std::string optimizer = "adam";
    double alpha_init = 1.0;
    bool learn_bias = false;
    bool binarized = false;
    bool unlabeled = false;
    bool serial = false;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg;
    cfg.lambda = a.lambda;
    cfg.lr = a.lr;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.seed = a.seed;
    cfg.learn_bias = a.learn_bias;
    cfg.binarized = a.binarized;
    cfg.exec = a.serial ? ExecMode::Serial : default_exec_mode();
    if (a.optimizer == "adam")
        cfg.optimizer = TrainConfig::Optimizer::Adam;
    else if (a.optimizer == "sgd")
        cfg.optimizer = TrainConfig::Optimizer::Sgd;
    else
        throw InvalidArgument("unknown optimizer '" + a.optimizer + "' (use adam|sgd)");
    cfg.validate();
    if (!(a.alpha_init > 0.0)) throw InvalidArgument("alpha-init must be positive");

    const auto corpus = load_corpus(a.corpus);
    const auto train_data = sequences_of(corpus, parse_split_selector(a.split));
    const auto val_data = sequences_of(corpus, {Split::Validation});
    if (train_data.empty()) throw DataError("train: selected split is empty in " + a.corpus);

    TabularCCLM model;
    std::vector<LabeledSequence> train_view = train_data;
    if (a.unlabeled) {
        if (a.binarized) throw InvalidArgument("--unlabeled and --binarized are incompatible");
        model = tabular_init(corpus.vocab, a.order, ControlCodeSet::standard({"uncond"}),
                             InitScheme::Zeros, a.seed);
        for (auto& s : train_view) s.class_id = 0;
    } else if (a.binarized) {
        model = tabular_init(corpus.vocab, a.order,
                             ControlCodeSet::binary_pair(
                                 corpus.class_names,
                                 name_token_ids_for(corpus.vocab, corpus.class_names)),
                             InitScheme::Zeros, a.seed);
    } else {
        model = tabular_init(corpus.vocab, a.order, ControlCodeSet::standard(corpus.class_names),
                             InitScheme::Zeros, a.seed);
    }
    model.alpha = a.alpha_init;

    const auto val_view = a.unlabeled ? std::vector<LabeledSequence>{} : val_data;
    const auto result = train(model, train_view, val_view, cfg);

    std::ostringstream note;
    note << "trained-from: " << a.corpus << " split=" << a.split << " lambda=" << a.lambda
         << " lr=" << a.lr << " epochs=" << a.epochs << " batch=" << a.batch_size
         << " optimizer=" << a.optimizer << " seed=" << a.seed << " order=" << a.order
         << " alpha-init=" << a.alpha_init << " learn-bias=" << a.learn_bias
         << " binarized=" << a.binarized << " unlabeled=" << a.unlabeled;
    save_checkpoint(a.out, model, note.str());

    if (!a.metrics.empty()) {
        auto os = open_out(a.metrics);
        os << "# gedi-metrics v1\n";
        os << "# " << note.str() << "\n";
        os << "epoch\tloss_g\tloss_d\tloss_gd\tval_accuracy\tval_perplexity\n";
        char buf[256];
        for (std::size_t e = 0; e < result.history.size(); ++e) {
            const auto& h = result.history[e];
            std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", e + 1,
                          h.loss_g, h.loss_d, h.loss_gd, h.val_accuracy, h.val_perplexity);
            os << buf;
        }
    }
    if (!result.history.empty()) {
        const auto& last = result.history.back();
        std::cout << "final: loss_gd=" << last.loss_gd << " val_accuracy=" << last.val_accuracy
                  << " val_perplexity=" << last.val_perplexity << "\n";
    }
    std::cout << "wrote checkpoint to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string mode = "guided";
    std::string base_path;
    std::string guide_path;
    std::string model_path;
    std::string target; // empty = every class in turn
    std::string prompt_inline;
    std::string prompts_file;
    std::string prompts_from;
    std::string prompt_split = "val";
    int prompt_len = 4;
    int limit = 50;
    std::string out;
    std::uint64_t seed = 0;
    GenerateFlags flags;
    bool serial = false;
};

struct PromptRequest {
    std::vector<int> prompt;
    int target_class;
    std::optional<GenerationConfig> override_config;
};

int run_generate(const GenerateArgs& a) {
    const bool guided = a.mode == "guided";
    if (!guided && a.mode != "direct")
        throw InvalidArgument("unknown mode '" + a.mode + "' (use guided|direct)");
    const GenerationConfig base_config = build_generation_config(
        a.flags, guided ? GenerationConfig::Mode::Guided : GenerationConfig::Mode::Direct);

    TabularCCLM guide, base;
    if (guided) {
        if (a.base_path.empty() || a.guide_path.empty())
            throw InvalidArgument("guided mode needs --base and --guide checkpoints");
        base = load_checkpoint(a.base_path);
        guide = load_checkpoint(a.guide_path);
        if (base.vocab != guide.vocab)
            throw DataError("base and guide checkpoints disagree on the vocab");
    } else {
        if (a.model_path.empty()) throw InvalidArgument("direct mode needs --model");
        guide = load_checkpoint(a.model_path);
    }
    const Vocab& vocab = guide.vocab;
    const auto& class_names = guide.codes.class_names;

    std::vector<int> targets;
    if (a.target.empty()) {
        for (int c = 0; c < static_cast<int>(class_names.size()); ++c) targets.push_back(c);
    } else {
        targets.push_back(guide.codes.class_of(a.target));
    }

    // Assemble prompt requests from whichever source was given.
    std::vector<PromptRequest> requests;
    if (!a.prompts_file.empty()) {
        std::ifstream is(a.prompts_file);
        if (!is) throw DataError("cannot open prompts file '" + a.prompts_file + "'");
        std::string line;
        long line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty()) continue;
            json rec;
            try {
                rec = json::parse(line);
            } catch (const json::exception& e) {
                throw DataError("prompts file line " + std::to_string(line_no) + ": " + e.what());
            }
            PromptRequest req;
            std::vector<std::string> names = rec.value("prompt", std::vector<std::string>{});
            req.prompt = tokens_from_names(vocab, names);
            req.target_class = rec.contains("target")
                                   ? guide.codes.class_of(rec["target"].get<std::string>())
                                   : targets.front();
            if (rec.contains("overrides")) {
                GenerationConfig oc = base_config;
                const auto& ov = rec["overrides"];
                if (ov.contains("omega")) oc.omega = ov["omega"].get<double>();
                if (ov.contains("rho")) oc.rho = ov["rho"].get<double>();
                if (ov.contains("tau")) oc.tau = ov["tau"].get<double>();
                if (ov.contains("rep-penalty")) oc.rep_penalty = ov["rep-penalty"].get<double>();
                if (ov.contains("target-bias")) oc.target_bias = ov["target-bias"].get<double>();
                if (ov.contains("max-new-tokens")) oc.max_new_tokens = ov["max-new-tokens"].get<int>();
                if (ov.contains("filtering")) oc.filtering = ov["filtering"].get<bool>();
                oc.validate();
                req.override_config = oc;
            }
            requests.push_back(std::move(req));
        }
    } else if (!a.prompts_from.empty()) {
        const auto corpus = load_corpus(a.prompts_from);
        if (corpus.vocab != vocab) throw DataError("prompt corpus vocab differs from the model vocab");
        const auto pool = sequences_of(corpus, parse_split_selector(a.prompt_split));
        if (pool.empty()) throw DataError("prompt split '" + a.prompt_split + "' is empty");
        const int n = std::min<int>(a.limit, static_cast<int>(pool.size()));
        for (int i = 0; i < n; ++i) {
            const auto& src = pool[static_cast<std::size_t>(i)].tokens;
            std::vector<int> prompt(src.begin(),
                                    src.begin() + std::min<std::size_t>(
                                                      src.size(), static_cast<std::size_t>(a.prompt_len)));
            for (int target : targets) requests.push_back({prompt, target, std::nullopt});
        }
    } else {
        std::istringstream ss(a.prompt_inline);
        std::vector<std::string> names;
        std::string tok;
        while (ss >> tok) names.push_back(tok);
        for (int target : targets)
            requests.push_back({tokens_from_names(vocab, names), target, std::nullopt});
    }
    if (requests.empty()) throw DataError("no generation requests assembled");

    auto os = open_out(a.out);
    json header = {{"format", "gedi-generations v1"},
                   {"mode", a.mode},
                   {"config", config_json(base_config)},
                   {"seed", a.seed},
                   {"contrast-size", 2}};
    if (guided) {
        header["base"] = a.base_path;
        header["guide"] = a.guide_path;
        GuideState probe = init_guide(guide, targets.front());
        header["contrast-size"] = static_cast<int>(probe.contrast_model_classes.size());
    } else {
        header["model"] = a.model_path;
        header.erase("contrast-size");
    }
    os << header.dump() << "\n";

    const auto t0 = std::chrono::steady_clock::now();
    long total_tokens = 0;
    for (const auto& req : requests) {
        const GenerationConfig& cfg = req.override_config ? *req.override_config : base_config;
        json rec;
        rec["target"] = class_names.at(static_cast<std::size_t>(req.target_class));
        rec["prompt"] = names_of_tokens(vocab, req.prompt);
        if (guided) {
            const auto result = gedi_generate(base, guide, req.target_class, req.prompt, cfg);
            rec["tokens"] = names_of_tokens(vocab, result.tokens);
            rec["steps"] = result.trace.size();
            long base_passes = 0, guide_passes = 0;
            json trace = json::array();
            for (const auto& tr : result.trace) {
                base_passes += tr.base_passes;
                guide_passes += tr.guide_passes;
                trace.push_back({{"chosen", vocab.name_of(tr.chosen)},
                                 {"kept", tr.kept.size()},
                                 {"target-posterior", tr.target_posterior[static_cast<std::size_t>(tr.chosen)]},
                                 {"base-passes", tr.base_passes},
                                 {"guide-passes", tr.guide_passes}});
            }
            rec["base-passes"] = base_passes;
            rec["guide-passes"] = guide_passes;
            rec["prompt-base-passes"] = result.prompt_base_passes;
            rec["prompt-guide-passes"] = result.prompt_guide_passes;
            rec["trace"] = std::move(trace);
            total_tokens += static_cast<long>(result.tokens.size());
        } else {
            const auto tokens = direct_generate(guide, req.target_class, req.prompt, cfg);
            rec["tokens"] = names_of_tokens(vocab, tokens);
            total_tokens += static_cast<long>(tokens.size());
        }
        if (req.override_config) rec["config"] = config_json(cfg);
        os << rec.dump() << "\n";
    }
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "wrote " << requests.size() << " generations (" << total_tokens << " tokens, "
              << dt << " s) to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

struct ClassifyArgs {
    std::string model_path;
    std::string corpus;
    std::string split = "val";
    std::string report;
    bool serial = false;
};

int run_classify(const ClassifyArgs& a) {
    const auto model = load_checkpoint(a.model_path);
    const auto corpus = load_corpus(a.corpus);
    if (corpus.vocab != model.vocab) throw DataError("classifier and corpus vocab mismatch");
    const auto data = sequences_of(corpus, parse_split_selector(a.split));
    if (data.empty()) throw DataError("split '" + a.split + "' is empty");

    const ExecMode exec = a.serial ? ExecMode::Serial : default_exec_mode();
    std::vector<int> predicted(data.size());
    parallel_for(exec, data.size(), [&](std::size_t i) {
        predicted[i] = classify(model, data[i].tokens).class_id;
    });
    long correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += predicted[i] == data[i].class_id;
    const double accuracy = static_cast<double>(correct) / static_cast<double>(data.size());

    std::ostringstream report;
    report << "# gedi-report v1\n";
    report << "metric: classification-accuracy\n";
    report << "model: " << a.model_path << "\n";
    report << "corpus: " << a.corpus << " split: " << a.split << "\n";
    report << "samples: " << data.size() << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", accuracy);
    report << "accuracy: " << buf << "\n";
    if (!a.report.empty()) open_out(a.report) << report.str();
    std::cout << report.str();
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string generations;
    std::string classifier_path;
    std::string oracle_path;
    std::string report;
    bool serial = false;
};

int run_evaluate(const EvaluateArgs& a) {
    if (a.classifier_path.empty() == a.oracle_path.empty())
        throw InvalidArgument("evaluate needs exactly one of --classifier or --oracle");

    std::ifstream is(a.generations);
    if (!is) throw DataError("cannot open generations file '" + a.generations + "'");

    TabularCCLM clf_model;
    SourceSpec oracle_spec;
    std::string classifier_id;
    if (!a.classifier_path.empty()) {
        clf_model = load_checkpoint(a.classifier_path);
        classifier_id = "cclm:" + a.classifier_path;
    } else {
        oracle_spec = load_source(a.oracle_path);
        classifier_id = "oracle:" + a.oracle_path;
    }

    std::vector<ControlledSample> samples;
    std::vector<std::string> class_names;
    std::vector<StepTrace> traces;
    int contrast_size = 0;
    long prompt_base = 0, prompt_guide = 0;
    bool any_guided = false;

    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("generations file line " + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.contains("format")) { // header record
            if (rec["format"] != "gedi-generations v1")
                throw DataError("unsupported generations format: " +
                                rec["format"].get<std::string>());
            if (rec.contains("contrast-size")) contrast_size = rec["contrast-size"].get<int>();
            continue;
        }
        const std::string target = rec.at("target").get<std::string>();
        if (std::find(class_names.begin(), class_names.end(), target) == class_names.end())
            class_names.push_back(target);

        const Vocab& vocab = a.classifier_path.empty() ? oracle_spec.vocab : clf_model.vocab;
        ControlledSample sample;
        sample.tokens = tokens_from_names(vocab, rec.value("prompt", std::vector<std::string>{}));
        const auto gen = tokens_from_names(vocab, rec.at("tokens").get<std::vector<std::string>>());
        sample.tokens.insert(sample.tokens.end(), gen.begin(), gen.end());
        sample.control_class = static_cast<int>(
            std::find(class_names.begin(), class_names.end(), target) - class_names.begin());
        samples.push_back(std::move(sample));

        if (rec.contains("trace")) {
            any_guided = true;
            prompt_base += rec.value("prompt-base-passes", 0L);
            prompt_guide += rec.value("prompt-guide-passes", 0L);
            for (const auto& step : rec["trace"]) {
                StepTrace tr;
                tr.base_passes = step.value("base-passes", 1);
                tr.guide_passes = step.value("guide-passes", 0);
                tr.chosen = 0;
                traces.push_back(tr);
            }
        }
    }
    if (samples.empty()) throw DataError("no generation records in '" + a.generations + "'");

    // Control classes were recorded in first-seen order; the classifier must
    // use the same ordering, so resolve names against it.
    Classifier clf;
    if (!a.classifier_path.empty()) {
        std::vector<int> remap(class_names.size());
        for (std::size_t i = 0; i < class_names.size(); ++i)
            remap[i] = clf_model.codes.class_of(class_names[i]);
        clf = [&clf_model, remap](std::span<const int> tokens) {
            const auto c = classify(clf_model, tokens);
            // map classifier class back into the report's class ordering
            for (std::size_t i = 0; i < remap.size(); ++i)
                if (remap[i] == c.class_id) return Classification{static_cast<int>(i), c.posterior};
            return Classification{-1, c.posterior};
        };
    } else {
        std::vector<int> remap(class_names.size());
        for (std::size_t i = 0; i < class_names.size(); ++i) {
            const auto it = std::find(oracle_spec.class_names.begin(),
                                      oracle_spec.class_names.end(), class_names[i]);
            if (it == oracle_spec.class_names.end())
                throw DataError("oracle source does not know class '" + class_names[i] + "'");
            remap[i] = static_cast<int>(it - oracle_spec.class_names.begin());
        }
        clf = [&oracle_spec, remap](std::span<const int> tokens) {
            const auto c = classify_oracle(oracle_spec, tokens);
            for (std::size_t i = 0; i < remap.size(); ++i)
                if (remap[i] == c.class_id) return Classification{static_cast<int>(i), c.posterior};
            return Classification{-1, c.posterior};
        };
    }

    const ExecMode exec = a.serial ? ExecMode::Serial : default_exec_mode();
    const auto fidelity = label_fidelity(samples, clf, classifier_id,
                                         static_cast<int>(class_names.size()), exec);

    std::ostringstream report;
    write_fidelity_report(report, fidelity);
    report << "generations: " << a.generations << "\n";
    for (std::size_t i = 0; i < class_names.size(); ++i)
        report << "class-name " << i << ": " << class_names[i] << "\n";
    if (any_guided) {
        if (contrast_size < 2)
            throw DataError("generations file has guided traces but no valid contrast-size header");
        const auto cost = audit_cost(traces, contrast_size, prompt_base, prompt_guide);
        report << "\n";
        write_cost_report(report, cost);
    }
    if (!a.report.empty()) open_out(a.report) << report.str();
    std::cout << report.str();
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string corpus;
    std::vector<double> lambdas = {0.05, 0.25, 0.5, 0.75, 1.0};
    int epochs = 60;
    double lr = 0.1;
    std::uint64_t seed = 0;
    int order = 0;
    int classifier_epochs = 60;
    int classifier_order = 0;
    int gens_per_class = 50;
    int prompt_len = 4;
    int max_new = 16;
    std::string out;
    bool serial = false;
};

int run_sweep(const SweepArgs& a) {
    const auto corpus = load_corpus(a.corpus);
    SweepConfig cfg;
    cfg.train.epochs = a.epochs;
    cfg.train.lr = a.lr;
    cfg.train.seed = a.seed;
    cfg.guide_order = a.order;
    cfg.classifier_train.epochs = a.classifier_epochs;
    cfg.classifier_train.lr = a.lr;
    cfg.classifier_train.lambda = 0.5;
    cfg.classifier_train.seed = a.seed + 1;
    cfg.classifier_order = a.classifier_order;
    cfg.generations_per_class = a.gens_per_class;
    cfg.prompt_len = a.prompt_len;
    cfg.generation.max_new_tokens = a.max_new;
    cfg.exec = a.serial ? ExecMode::Serial : default_exec_mode();

    const auto rows = lambda_sweep(corpus, a.lambdas, cfg);

    std::ostringstream provenance;
    provenance << "corpus: " << a.corpus << " seed: " << a.seed << " epochs: " << a.epochs
               << " lr: " << a.lr << " order: " << a.order
               << " gens-per-class: " << a.gens_per_class;
    if (!a.out.empty()) {
        auto os = open_out(a.out);
        write_sweep_table(os, rows, provenance.str());
    }
    write_sweep_table(std::cout, rows, provenance.str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"guided decoding with class-conditional language models as generative discriminators"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "sample a labeled synthetic corpus");
    synth_cmd->add_option("--source", synth.source, "s1 | s2 | path to a source parameter file");
    synth_cmd->add_option("--n", synth.n, "number of sequences")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", synth.seed, "sampling seed")->envname("GEDI_SEED");
    synth_cmd->add_option("--source-seed", synth.source_seed, "parameter seed for s2");
    synth_cmd->add_option("--split-seed", synth.split_seed, "half-split seed (defaults to --seed)");
    synth_cmd->add_flag("--no-split", synth.no_split, "skip A/B/validation tagging");
    synth_cmd->add_option("--out", synth.out, "corpus file to write")->required();
    synth_cmd->add_option("--save-source", synth.save_source_path, "also write the source parameters");
    synth_cmd->add_flag("--serial", synth.serial, "force the serial reference path");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a CC-LM with the hybrid objective");
    train_cmd->add_option("--corpus", train_args.corpus, "corpus file")->required();
    train_cmd->add_option("--out", train_args.out, "checkpoint to write")->required();
    train_cmd->add_option("--metrics", train_args.metrics, "per-epoch metrics file");
    train_cmd->add_option("--split", train_args.split, "training split: A|B|val|AB|all");
    train_cmd->add_option("--lambda", train_args.lambda, "generative weight in [0,1]");
    train_cmd->add_option("--lr", train_args.lr, "learning rate");
    train_cmd->add_option("--epochs", train_args.epochs, "epochs");
    train_cmd->add_option("--batch-size", train_args.batch_size, "0 = full batch");
    train_cmd->add_option("--order", train_args.order, "context order k");
    train_cmd->add_option("--seed", train_args.seed, "training seed")->envname("GEDI_SEED");
    train_cmd->add_option("--optimizer", train_args.optimizer, "adam | sgd");
    train_cmd->add_option("--alpha-init", train_args.alpha_init, "initial scale alpha");
    train_cmd->add_flag("--learn-bias", train_args.learn_bias, "learn the class prior biases");
    train_cmd->add_flag("--binarized", train_args.binarized, "true/false pairing scheme");
    train_cmd->add_flag("--unlabeled", train_args.unlabeled, "single-class base LM on the mixture");
    train_cmd->add_flag("--serial", train_args.serial, "force the serial reference path");

    GenerateArgs gen;
    auto* gen_cmd = app.add_subcommand("generate", "guided or direct generation");
    gen_cmd->add_option("--mode", gen.mode, "guided | direct");
    gen_cmd->add_option("--base", gen.base_path, "base LM checkpoint (guided)");
    gen_cmd->add_option("--guide", gen.guide_path, "guide checkpoint (guided)");
    gen_cmd->add_option("--model", gen.model_path, "CC-LM checkpoint (direct)");
    gen_cmd->add_option("--target", gen.target, "target class name (default: every class)");
    gen_cmd->add_option("--prompt", gen.prompt_inline, "inline prompt as token names");
    gen_cmd->add_option("--prompts", gen.prompts_file, "JSONL prompt request file");
    gen_cmd->add_option("--prompts-from", gen.prompts_from, "draw prompts from a corpus file");
    gen_cmd->add_option("--prompt-split", gen.prompt_split, "corpus split for prompts");
    gen_cmd->add_option("--prompt-len", gen.prompt_len, "prompt length when drawing from a corpus");
    gen_cmd->add_option("--limit", gen.limit, "max prompts drawn from the corpus");
    gen_cmd->add_option("--out", gen.out, "JSONL generations file")->required();
    gen_cmd->add_option("--seed", gen.seed, "recorded seed (greedy decoding uses none)")
        ->envname("GEDI_SEED");
    gen_cmd->add_option("--preset", gen.flags.preset,
                        "paper-default | detox-style | strong-penalty");
    gen_cmd->add_option("--omega", gen.flags.omega, "posterior exponent");
    gen_cmd->add_option("--rho", gen.flags.rho, "cumulative-mass floor");
    gen_cmd->add_option("--tau", gen.flags.tau, "posterior keep threshold");
    gen_cmd->add_option("--rep-penalty", gen.flags.rep_penalty, "repetition penalty");
    auto* bias_opt = gen_cmd->add_option("--bias", gen.flags.bias, "target-class prior bias");
    gen_cmd->add_option("--max-new", gen.flags.max_new, "max new tokens");
    gen_cmd->add_flag("--no-filter", gen.flags.no_filter, "disable candidate filtering");
    gen_cmd->add_flag("--serial", gen.serial, "force the serial reference path");

    ClassifyArgs cls;
    auto* cls_cmd = app.add_subcommand("classify", "classification accuracy of a CC-LM");
    cls_cmd->add_option("--model", cls.model_path, "classifier checkpoint")->required();
    cls_cmd->add_option("--corpus", cls.corpus, "corpus file")->required();
    cls_cmd->add_option("--split", cls.split, "split to score: A|B|val|AB|all");
    cls_cmd->add_option("--report", cls.report, "report file");
    cls_cmd->add_flag("--serial", cls.serial, "force the serial reference path");

    EvaluateArgs ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "label fidelity and cost audit of generations");
    ev_cmd->add_option("--generations", ev.generations, "JSONL generations file")->required();
    ev_cmd->add_option("--classifier", ev.classifier_path, "CC-LM classifier checkpoint");
    ev_cmd->add_option("--oracle", ev.oracle_path, "source parameter file (exact oracle)");
    ev_cmd->add_option("--report", ev.report, "report file");
    ev_cmd->add_flag("--serial", ev.serial, "force the serial reference path");

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "train/evaluate one model per lambda");
    sweep_cmd->add_option("--corpus", sweep.corpus, "corpus file with A/B/val splits")->required();
    sweep_cmd->add_option("--lambdas", sweep.lambdas, "lambda grid")->delimiter(',');
    sweep_cmd->add_option("--epochs", sweep.epochs, "epochs per sweep point");
    sweep_cmd->add_option("--lr", sweep.lr, "learning rate");
    sweep_cmd->add_option("--seed", sweep.seed, "training seed")->envname("GEDI_SEED");
    sweep_cmd->add_option("--order", sweep.order, "guide context order");
    sweep_cmd->add_option("--classifier-epochs", sweep.classifier_epochs, "split-B classifier epochs");
    sweep_cmd->add_option("--classifier-order", sweep.classifier_order, "split-B classifier order");
    sweep_cmd->add_option("--gens-per-class", sweep.gens_per_class, "fidelity generations per class");
    sweep_cmd->add_option("--prompt-len", sweep.prompt_len, "prompt length for fidelity runs");
    sweep_cmd->add_option("--max-new", sweep.max_new, "max new tokens for fidelity runs");
    sweep_cmd->add_option("--out", sweep.out, "sweep table file");
    sweep_cmd->add_flag("--serial", sweep.serial, "force the serial reference path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        synth.split_seed_set = synth_cmd->count("--split-seed") > 0;
        gen.flags.bias_set = bias_opt->count() > 0;
        if (synth_cmd->parsed()) return run_synth(synth);
        if (train_cmd->parsed()) return run_train(train_args);
        if (gen_cmd->parsed()) return run_generate(gen);
        if (cls_cmd->parsed()) return run_classify(cls);
        if (ev_cmd->parsed()) return run_evaluate(ev);
        if (sweep_cmd->parsed()) return run_sweep(sweep);
    } catch (const InvalidArgument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
