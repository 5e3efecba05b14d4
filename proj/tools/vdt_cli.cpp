// vdtk: command-line front end. JSON results go to stdout (or --out),
// human-readable tables to stderr, failures to stdout as
// {"error": {"code", "message"}} with a nonzero exit status.

#include "vdt/adapters.hpp"
#include "vdt/error.hpp"
#include "vdt/evaluation.hpp"
#include "vdt/gradcheck.hpp"
#include "vdt/io.hpp"
#include "vdt/training.hpp"
#include "vdt/vdt_gen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void emit(const ordered_json& j, const std::string& out_path) {
    const auto text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text << std::flush;
    } else {
        vdt::write_file_atomic(out_path, text);
    }
}

vdt::TrainConfig train_config_from_json(const fs::path& path) {
    vdt::TrainConfig c;
    const auto j = ordered_json::parse(vdt::read_file(path));
    c.shots = j.value("shots", c.shots);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta_grid = j.value("beta_grid", c.beta_grid);
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta = j.value("beta", c.beta);
    c.tau = j.value("tau", c.tau);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.heads = j.value("heads", c.heads);
    c.init_scale = j.value("init_scale", c.init_scale);
    if (j.contains("init")) {
        const auto s = j.at("init").get<std::string>();
        if (s == "identity_residual") {
            c.init = vdt::AttentionInit::IdentityResidual;
        } else if (s == "uniform") {
            c.init = vdt::AttentionInit::Uniform;
        } else {
            throw vdt::Error(vdt::ErrorCode::InvalidArgument, "init must be identity_residual or uniform, got " + s);
        }
    }
    return c;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::vector<std::string> out;
    std::istringstream in(vdt::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
            line.pop_back();
        }
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

vdt::SplitManifest manifest_split(const vdt::DatasetManifest& m, std::uint64_t seed) {
    if (m.split) {
        return vdt::SplitManifest::load(m.resolve(*m.split));
    }
    return vdt::split_base_new(m.class_names, m.dataset_id, seed);
}

// Restricts data and bank to the requested half of the split ("all" keeps both).
std::vector<std::string> subset_classes(const vdt::DatasetManifest& m, const std::string& subset, std::uint64_t seed) {
    if (subset == "all") {
        return m.class_names;
    }
    const auto split = manifest_split(m, seed);
    return subset == "base" ? split.base_classes : split.new_classes;
}

ordered_json report_json(const vdt::TrainReport& r) {
    ordered_json j;
    j["final_beta"] = r.final_beta;
    j["train_accuracy"] = r.train_accuracy;
    j["loss_history"] = r.loss_history;
    return j;
}

ordered_json error_json(const std::string& code, const std::string& message) {
    ordered_json j;
    j["error"] = {{"code", code}, {"message", message}};
    return j;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visually descriptive text classifiers: generation, training and evaluation"};
    app.require_subcommand(1);

    std::string out_path;
    std::string manifest_path;
    std::string split_name = "test";
    double tau = vdt::kDefaultTau;
    std::uint64_t seed = 0;

    // gen-vdt
    auto* gen = app.add_subcommand("gen-vdt", "Generate a VDT corpus from an LLM endpoint");
    std::string endpoint_path, classes_path, cache_dir = ".vdt_cache", dataset_id;
    vdt::PromptStyle style;
    std::size_t in_flight = 4;
    std::size_t malformed_retries = 3;
    gen->add_option("--endpoint", endpoint_path, "Endpoint config JSON");
    auto* gen_manifest = gen->add_option("--manifest", manifest_path, "Dataset manifest (class names)");
    auto* gen_classes = gen->add_option("--classes", classes_path, "Class names, one per line");
    gen_manifest->excludes(gen_classes);
    gen->add_option("--dataset-id", dataset_id);
    gen->add_option("--description", style.dataset_description, "What the images show");
    gen->add_option("--noun", style.subject_noun, "Noun for one class, e.g. aircraft");
    gen->add_option("--key", style.key_description, "Dictionary key description");
    gen->add_option("--count", style.attribute_count, "Attributes to request")->check(CLI::PositiveNumber);
    gen->add_option("--cache", cache_dir, "Response cache directory");
    gen->add_option("--in-flight", in_flight, "Concurrent class requests")->check(CLI::PositiveNumber);
    gen->add_option("--malformed-retries", malformed_retries, "Re-requests for an unparsable reply");
    gen->add_option("--out", out_path, "Corpus JSON output")->required();

    // build-prompts
    auto* build = app.add_subcommand("build-prompts", "Assemble classifier prompts from a VDT corpus");
    std::string corpus_path, prompt_template = std::string(vdt::kDefaultPromptTemplate);
    build->add_option("--corpus", corpus_path, "VDT corpus JSON")->required();
    build->add_option("--template", prompt_template, "Prompt template with {classname} and {sentence}");
    build->add_option("--manifest", manifest_path, "Dataset manifest whose classes must all be covered");
    build->add_option("--out", out_path);

    // zeroshot
    auto* zs = app.add_subcommand("zeroshot", "Zero-shot accuracy with prompt ensembles");
    std::string mode = "mean";
    zs->add_option("--manifest", manifest_path)->required();
    zs->add_option("--split", split_name);
    zs->add_option("--tau", tau)->check(CLI::PositiveNumber);
    zs->add_option("--mode", mode, "mean (prototype) or score (averaged per-sentence scores)")
        ->check(CLI::IsMember({"mean", "score"}));
    zs->add_option("--out", out_path);

    // train
    auto* train = app.add_subcommand("train", "Train the attention adapter on few-shot features");
    std::string config_path, checkpoint_path, subset = "all", train_split = "train";
    std::optional<double> beta;
    bool tune = false;
    std::optional<std::uint64_t> train_seed;
    std::optional<double> train_tau;
    bool timing = false;
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--config", config_path, "Training config JSON");
    train->add_option("--split", train_split);
    train->add_option("--subset", subset, "Classes to train on")->check(CLI::IsMember({"all", "base", "new"}));
    auto* beta_opt = train->add_option("--beta", beta, "Fixed residual ratio")->check(CLI::Range(0.0, 1.0));
    train->add_flag("--tune-beta", tune, "Select beta on the config grid")->excludes(beta_opt);
    train->add_option("--seed", train_seed);
    train->add_option("--tau", train_tau)->check(CLI::PositiveNumber);
    train->add_option("--checkpoint", checkpoint_path, "Checkpoint output")->required();
    train->add_flag("--timing", timing, "Include wall_clock_seconds in the JSON");
    train->add_option("--out", out_path);

    // eval-base-new
    auto* ebn = app.add_subcommand("eval-base-new", "Base/new accuracy and harmonic mean");
    std::string ckpt_in;
    std::optional<double> eval_beta;
    std::optional<double> eval_tau;
    ebn->add_option("--manifest", manifest_path)->required();
    ebn->add_option("--checkpoint", ckpt_in, "Adapter checkpoint; omitted means the plain ensemble");
    ebn->add_option("--beta", eval_beta)->check(CLI::Range(0.0, 1.0));
    ebn->add_option("--split", split_name);
    ebn->add_option("--seed", seed, "Split seed when the manifest has no split file");
    ebn->add_option("--tau", eval_tau)->check(CLI::PositiveNumber);
    ebn->add_option("--out", out_path);

    // analyze-attention
    auto* aa = app.add_subcommand("analyze-attention", "Rank attributes by received attention");
    std::size_t top_n = 5;
    aa->add_option("--manifest", manifest_path)->required();
    aa->add_option("--checkpoint", ckpt_in)->required();
    aa->add_option("--subset", subset, "Classes to average over")->check(CLI::IsMember({"all", "base", "new"}));
    aa->add_option("--seed", seed);
    aa->add_option("--top", top_n);
    aa->add_option("--out", out_path);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the adapter gradients");
    vdt::GradCheckOptions gc_opts;
    gc->add_option("--seed", seed)->required();
    gc->add_option("--heads", gc_opts.heads)->check(CLI::PositiveNumber);
    gc->add_option("--out", out_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return kExitUsage;
    }

    try {
        if (*gen) {
            vdt::LlmEndpointConfig ep;
            if (!endpoint_path.empty()) {
                ep = vdt::LlmEndpointConfig::from_json(vdt::read_file(endpoint_path));
            }
            std::vector<std::string> names;
            if (!manifest_path.empty()) {
                const auto m = vdt::DatasetManifest::load(manifest_path);
                names = m.class_names;
                if (dataset_id.empty()) {
                    dataset_id = m.dataset_id;
                }
            } else if (!classes_path.empty()) {
                names = read_lines(classes_path);
            } else {
                std::cerr << "error: gen-vdt needs --manifest or --classes\n\n" << gen->help();
                return kExitUsage;
            }
            vdt::HttpChatClient client(ep);
            vdt::GenerationOptions opts;
            opts.dataset_id = dataset_id;
            opts.cache_dir = cache_dir;
            opts.max_in_flight = in_flight;
            opts.max_malformed_retries = malformed_retries;
            opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
            const auto r = vdt::generate_corpus(client, style, names, opts);
            r.corpus.save(out_path);
            ordered_json j;
            j["out"] = out_path;
            j["classes"] = r.corpus.classes.size();
            j["attributes"] = r.corpus.attribute_list.size();
            j["quarantined"] = r.quarantined;
            j["cache_hits"] = r.cache_hits;
            j["requests"] = r.requests;
            emit(j, "");
            return r.quarantined.empty() ? 0 : kExitFailure;
        }

        if (*build) {
            const auto corpus = vdt::VdtCorpus::load(corpus_path);
            if (!manifest_path.empty()) {
                corpus.validate(vdt::DatasetManifest::load(manifest_path).class_names);
            }
            const auto pm = vdt::assemble_prompts(prompt_template, corpus);
            for (const auto& w : pm.warnings) {
                std::cerr << "warning: " << w << "\n";
            }
            const auto text = pm.to_json();
            if (out_path.empty()) {
                std::cout << text;
            } else {
                vdt::write_file_atomic(out_path, text);
            }
            return 0;
        }

        if (*zs) {
            const auto m = vdt::DatasetManifest::load(manifest_path);
            m.validate();
            const auto bank = vdt::load_bank(m);
            const auto data = vdt::load_features(m, split_name);
            const double acc = mode == "mean" ? vdt::zero_shot_eval(data, vdt::mean_prototype(bank), tau)
                                              : vdt::score_ensemble_eval(data, bank, tau);
            ordered_json j;
            j["accuracy"] = acc;
            j["mode"] = mode;
            j["tau"] = tau;
            j["split"] = split_name;
            j["classes"] = bank.classes();
            j["samples"] = data.features.rows();
            std::fprintf(stderr, "zero-shot (%s) on %s: %.2f%%\n", mode.c_str(), split_name.c_str(), 100.0 * acc);
            emit(j, out_path);
            return 0;
        }

        if (*train) {
            auto cfg = config_path.empty() ? vdt::TrainConfig{} : train_config_from_json(config_path);
            if (train_seed) {
                cfg.seed = *train_seed;
            }
            if (train_tau) {
                cfg.tau = *train_tau;
            }
            if (beta) {
                cfg.beta = *beta;
            }
            cfg.validate();
            const auto m = vdt::DatasetManifest::load(manifest_path);
            m.validate();
            const auto names = subset_classes(m, subset, cfg.seed);
            const auto bank = vdt::align_bank(vdt::load_bank(m), names);
            const auto data = vdt::select_classes(vdt::load_features(m, train_split), names);
            const auto few = vdt::sample_few_shot(data, cfg.shots, cfg.seed);

            ordered_json j;
            vdt::SelfAttentionParams params;
            vdt::TrainReport report;
            if (tune) {
                auto r = vdt::tune_beta(cfg, few, bank);
                params = std::move(r.params);
                report = r.report;
                ordered_json grid = ordered_json::array();
                for (const auto& [b, acc] : r.accuracies) {
                    grid.push_back({{"beta", b}, {"train_accuracy", acc}});
                }
                j = report_json(report);
                j["beta_search"] = grid;
            } else {
                auto r = vdt::train_adapter(cfg, few, bank);
                params = std::move(r.params);
                report = r.report;
                j = report_json(report);
            }
            vdt::save_checkpoint(checkpoint_path, params, vdt::CheckpointInfo{cfg.seed, report.final_beta, cfg.tau});
            j["checkpoint"] = checkpoint_path;
            j["classes"] = names.size();
            j["shots"] = cfg.shots;
            j["seed"] = cfg.seed;
            if (timing) {
                j["wall_clock_seconds"] = report.wall_clock.count();
            }
            std::fprintf(stderr, "beta %.2f  train accuracy %.2f%%  final loss %.6f  %.2fs\n", report.final_beta,
                         100.0 * report.train_accuracy,
                         report.loss_history.empty() ? 0.0 : report.loss_history.back(), report.wall_clock.count());
            emit(j, out_path);
            return 0;
        }

        if (*ebn) {
            const auto m = vdt::DatasetManifest::load(manifest_path);
            m.validate();
            const auto bank = vdt::load_bank(m);
            const auto split = manifest_split(m, seed);
            split.validate();
            vdt::SelfAttentionParams params;
            vdt::CheckpointInfo info;
            double b = 0.0;
            if (!ckpt_in.empty()) {
                params = vdt::load_checkpoint(ckpt_in, &info);
                b = info.beta;
            } else {
                params = vdt::SelfAttentionParams::zeros(bank.dim(), 1);
            }
            if (eval_beta) {
                b = *eval_beta;
            }
            const double t = eval_tau ? *eval_tau : (ckpt_in.empty() ? vdt::kDefaultTau : info.tau);
            const auto data = vdt::load_features(m, split_name);
            const auto r = vdt::evaluate_base_to_new(
                params, b, vdt::align_bank(bank, split.base_classes), vdt::align_bank(bank, split.new_classes),
                vdt::select_classes(data, split.base_classes), vdt::select_classes(data, split.new_classes), t);
            ordered_json j;
            j["base_acc"] = r.base_acc;
            j["new_acc"] = r.new_acc;
            j["harmonic"] = r.harmonic;
            j["beta"] = b;
            j["tau"] = t;
            j["base_classes"] = split.base_classes.size();
            j["new_classes"] = split.new_classes.size();
            std::cerr << vdt::format_base_to_new_table({{ckpt_in.empty() ? "ensemble" : "adapter", r}});
            emit(j, out_path);
            return 0;
        }

        if (*aa) {
            const auto m = vdt::DatasetManifest::load(manifest_path);
            m.validate();
            const auto names = subset_classes(m, subset, seed);
            const auto bank = vdt::align_bank(vdt::load_bank(m), names);
            const auto params = vdt::load_checkpoint(ckpt_in);
            const auto r = vdt::attention_report(params, bank, top_n);
            ordered_json j;
            ordered_json ranked = ordered_json::array();
            for (const auto& s : r.ranked) {
                ranked.push_back({{"attribute", s.attribute}, {"score", s.score}});
            }
            j["ranked"] = ranked;
            j["top"] = r.top;
            j["bottom"] = r.bottom;
            j["aggregation"] = r.aggregation;
            std::cerr << vdt::format_attention_table(r);
            emit(j, out_path);
            return 0;
        }

        if (*gc) {
            const auto r = vdt::gradient_check(seed, gc_opts);
            ordered_json j;
            j["seed"] = r.seed;
            j["max_rel_err"] = r.max_rel_err;
            j["pass"] = r.pass;
            ordered_json tensors = ordered_json::object();
            for (const auto& t : r.tensors) {
                tensors[t.name] = t.rel_err;
            }
            j["tensors"] = tensors;
            j["beta_rel_err"] = r.beta_rel_err;
            for (const auto& t : r.tensors) {
                std::fprintf(stderr, "%-4s %.3e\n", t.name.c_str(), t.rel_err);
            }
            emit(j, out_path);
            return r.pass ? 0 : kExitFailure;
        }
    } catch (const vdt::Error& e) {
        emit(error_json(std::string(vdt::to_string(e.code())), e.message()), "");
        return kExitFailure;
    } catch (const nlohmann::json::exception& e) {
        emit(error_json("InvalidArgument", e.what()), "");
        return kExitFailure;
    } catch (const std::exception& e) {
        emit(error_json("IoError", e.what()), "");
        return kExitFailure;
    }
    return kExitUsage;
}
