#include "cli.hpp"

#include "imagerag/error.hpp"
#include "imagerag/eval.hpp"
#include "imagerag/pipeline.hpp"
#include "imagerag/serialization.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>

namespace imagerag::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::string index_path;
    std::string metadata_path;
    std::string backend_profile;
    std::string rerank;
    std::optional<int> k;
    bool skip_decision = false;
    std::optional<std::int64_t> seed;
    std::string out_dir;
    std::string mock_transcript;
    bool plain = false;

    // command-specific
    std::string vectors_path;
    std::string out_path;
    std::string caption;
    std::string prompt;
    std::string subject;
    std::string classes_path;
    std::string report_path;
    std::string csv_path;
    std::vector<std::size_t> sizes;
};

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

std::string require_env(const char* name) {
    auto v = env_or_empty(name);
    if (v.empty()) throw UsageError(std::string(name) + " is not set (or pass --mock-transcript)");
    return v;
}

// Loaded config file plus the directory its relative paths are resolved from.
struct ConfigFile {
    json data = json::object();
    fs::path base = ".";

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : base / path;
    }
};

ConfigFile load_config(const std::string& path) {
    ConfigFile cfg;
    if (path.empty()) return cfg;
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw UsageError("config file not found: " + path);
    cfg.data = json::parse(read_file(path), nullptr, false);
    if (cfg.data.is_discarded() || !cfg.data.is_object()) {
        throw FormatError("config file is not a JSON object: " + path);
    }
    cfg.base = fs::path(path).parent_path();
    if (cfg.base.empty()) cfg.base = ".";
    return cfg;
}

// Scripted embedder entries from a mock transcript, keyed by model tag
// ("" applies to every embedder).
struct MockEmbeddings {
    std::vector<std::tuple<std::string, std::string, std::vector<float>>> texts;
    std::vector<std::tuple<std::string, std::string, std::vector<float>>> images;
};

MockEmbeddings load_mock_embeddings(const std::string& path) {
    MockEmbeddings out;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open mock transcript " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw FormatError("bad mock transcript line: " + line);
        const std::string model = j.value("model", "");
        if (j.contains("embed_text")) {
            out.texts.emplace_back(model, j["embed_text"].get<std::string>(),
                                   j.at("vector").get<std::vector<float>>());
        }
        if (j.contains("embed_image")) {
            out.images.emplace_back(model, j["embed_image"].get<std::string>(),
                                    j.at("vector").get<std::vector<float>>());
        }
    }
    return out;
}

class ClientFactory {
public:
    ClientFactory(const Options& opts, const ConfigFile& cfg) : opts_(opts), cfg_(cfg) {
        if (!opts.mock_transcript.empty()) mock_ = load_mock_embeddings(opts.mock_transcript);
    }

    bool mock() const { return mock_.has_value(); }

    std::shared_ptr<EmbedderClient> embedder(const std::string& tag, std::size_t dimension) {
        const std::string key = tag + "#" + std::to_string(dimension);
        if (auto it = embedders_.find(key); it != embedders_.end()) return it->second;
        std::shared_ptr<EmbedderClient> e;
        if (mock_) {
            auto m = std::make_shared<MockEmbedder>(tag, dimension);
            for (const auto& [model, text, vec] : mock_->texts) {
                if (model.empty() || model == tag) m->set_text(text, vec);
            }
            for (const auto& [model, uri, vec] : mock_->images) {
                if (model.empty() || model == tag) m->set_image(uri, vec);
            }
            e = m;
        } else {
            e = std::make_shared<HttpEmbedder>(require_env("IMAGERAG_EMBED_ENDPOINT"), tag);
        }
        embedders_.emplace(key, e);
        return e;
    }

    std::shared_ptr<VlmClient> vlm() {
        if (vlm_) return vlm_;
        VlmClientConfig vc;
        if (cfg_.data.contains("vlm")) {
            const auto& v = cfg_.data["vlm"];
            vc.model_name = v.value("model", vc.model_name);
            vc.timeout = std::chrono::milliseconds(v.value("timeout_ms", static_cast<long>(vc.timeout.count())));
            vc.transport_retries = v.value("transport_retries", vc.transport_retries);
        }
        std::shared_ptr<ChatTransport> transport;
        if (mock_) {
            transport = ScriptedChatTransport::from_transcript(opts_.mock_transcript);
        } else {
            transport = std::make_shared<HttpChatTransport>(require_env("IMAGERAG_VLM_ENDPOINT"),
                                                            env_or_empty("IMAGERAG_VLM_KEY"),
                                                            vc.timeout);
        }
        vlm_ = std::make_shared<VlmClient>(transport, vc);
        return vlm_;
    }

    std::shared_ptr<T2iClient> t2i(const BackendProfile& profile, const fs::path& artifact_dir,
                                   std::optional<ConditioningWorld> world = std::nullopt) {
        if (mock_) return std::make_shared<MockT2iClient>(artifact_dir, std::move(world));
        auto endpoint = env_or_empty("IMAGERAG_T2I_ENDPOINT");
        if (endpoint.empty()) endpoint = profile.endpoint;
        if (endpoint.empty()) throw UsageError("no T2I endpoint: set IMAGERAG_T2I_ENDPOINT");
        return std::make_shared<HttpT2iClient>(endpoint, artifact_dir);
    }

    // Sources from --index, else from the config's "sources" array.
    std::vector<RetrievalSource> sources(const json& list) {
        std::vector<RetrievalSource> out;
        if (!opts_.index_path.empty()) {
            const std::string meta =
                opts_.metadata_path.empty() ? default_sidecar_path(opts_.index_path).string() : opts_.metadata_path;
            out.push_back(load_source("index", opts_.index_path, meta, "clip", ""));
            return out;
        }
        if (!list.is_array() || list.empty()) {
            throw UsageError("no retrieval index: pass --index or list \"sources\" in the config");
        }
        for (const auto& s : list) {
            const std::string index = cfg_.resolve(s.at("index").get<std::string>()).string();
            const std::string meta = s.contains("metadata")
                                         ? cfg_.resolve(s["metadata"].get<std::string>()).string()
                                         : default_sidecar_path(index).string();
            out.push_back(load_source(s.value("name", "source" + std::to_string(out.size())), index,
                                      meta, s.value("metric", "clip"), s.value("embedder_model", "")));
        }
        return out;
    }

private:
    RetrievalSource load_source(const std::string& name, const std::string& index_path,
                                const std::string& meta_path, const std::string& metric,
                                std::string model) {
        auto key = index_path + "|" + meta_path;
        std::shared_ptr<const EmbeddingIndex> index;
        if (auto it = indexes_.find(key); it != indexes_.end()) {
            index = it->second;
        } else {
            index = std::make_shared<const EmbeddingIndex>(ingest(index_path, meta_path));
            indexes_.emplace(key, index);
        }
        if (model.empty()) model = index->embedder_tag().empty() ? metric : index->embedder_tag();
        return RetrievalSource{name, index, embedder(model, index->dimension()), metric_from_string(metric)};
    }

    const Options& opts_;
    const ConfigFile& cfg_;
    std::optional<MockEmbeddings> mock_;
    std::shared_ptr<VlmClient> vlm_;
    std::map<std::string, std::shared_ptr<EmbedderClient>> embedders_;
    std::map<std::string, std::shared_ptr<const EmbeddingIndex>> indexes_;
};

BackendProfile resolve_profile(const Options& opts, const ConfigFile& cfg) {
    if (!opts.backend_profile.empty()) return load_backend_profile(opts.backend_profile);
    if (cfg.data.contains("backend_profile")) {
        return load_backend_profile(cfg.resolve(cfg.data["backend_profile"].get<std::string>()));
    }
    throw UsageError("no backend profile: pass --backend-profile or set \"backend_profile\"");
}

PipelineConfig resolve_pipeline_config(const Options& opts, const ConfigFile& cfg) {
    PipelineConfig config = pipeline_config_from_json(cfg.data);
    if (!opts.rerank.empty()) config.rerank = rerank_mode_from_string(opts.rerank);
    if (opts.skip_decision) config.skip_decision = true;
    if (opts.seed) {
        config.initial_seed = opts.seed;
        config.final_seed = opts.seed;
    }
    if (opts.k) {
        if (*opts.k < 1) throw UsageError("--k must be at least 1");
        config.per_source_k = *opts.k;
    }
    return config;
}

fs::path resolve_out_dir(const Options& opts, const ConfigFile& cfg) {
    if (!opts.out_dir.empty()) return opts.out_dir;
    if (cfg.data.contains("out_dir")) return cfg.resolve(cfg.data["out_dir"].get<std::string>());
    return "runs";
}

void emit(std::ostream& out, const Options& opts, const json& j, const std::string& plain_line) {
    if (opts.plain) {
        out << plain_line << '\n';
    } else {
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& opts, std::ostream& out) {
    const std::string meta =
        opts.metadata_path.empty() ? default_sidecar_path(opts.vectors_path).string() : opts.metadata_path;
    const auto index = ingest(opts.vectors_path, meta);
    json j{{"records", index.size()}, {"dimension", index.dimension()}};
    if (!opts.out_path.empty()) {
        save_index(index, opts.out_path, default_sidecar_path(opts.out_path));
        j["out"] = opts.out_path;
    }
    emit(out, opts, j,
         std::to_string(index.size()) + " records, dim " + std::to_string(index.dimension()));
    return kExitOk;
}

int cmd_retrieve(const Options& opts, std::ostream& out, std::ostream& err) {
    if (!opts.k || *opts.k < 1) throw UsageError("--k must be at least 1");
    const auto cfg = load_config(opts.config_path);
    ClientFactory factory(opts, cfg);
    const auto sources = factory.sources(cfg.data.value("sources", json::array()));
    const auto mode = opts.rerank.empty() ? RerankMode::none : rerank_mode_from_string(opts.rerank);
    const auto k = static_cast<std::size_t>(*opts.k);

    if (mode == RerankMode::bm25) {
        for (const auto& s : sources) {
            if (!s.index->has_all_captions()) {
                throw UsageError("--rerank bm25 needs a caption for every record; '" + s.name +
                                 "' metadata has records without one");
            }
        }
    }

    std::vector<RetrievalHit> hits;
    bool warning = false;
    if (mode == RerankMode::none) {
        const auto& src = sources.front();
        hits = src.index->top_k(embed_text(*src.embedder, opts.caption, src.index->dimension()), k,
                                src.metric);
    } else {
        const auto pool = build_pool(opts.caption, k, sources);
        if (mode == RerankMode::bm25) {
            hits = bm25_rerank(pool, opts.caption);
        } else {
            auto res = vlm_rerank(pool, opts.caption, *factory.vlm());
            hits = std::move(res.hits);
            warning = res.warning;
        }
        if (hits.size() > k) hits.resize(k);
    }

    json arr = json::array();
    std::string plain;
    for (const auto& h : hits) {
        json j = h;
        for (const auto& s : sources) {
            if (auto pos = s.index->find(h.id)) {
                j["uri"] = s.index->metadata(*pos).uri;
                break;
            }
        }
        arr.push_back(std::move(j));
        if (!plain.empty()) plain += ' ';
        plain += h.id;
    }
    if (warning) err << "warning: VLM re-rank answer unusable; kept cosine order\n";
    emit(out, opts, arr, plain);
    return kExitOk;
}

int cmd_generate(const Options& opts, std::ostream& out, std::ostream& err, bool personalized) {
    if (trim(opts.prompt).empty()) throw UsageError("--prompt must be non-empty");
    const auto cfg = load_config(opts.config_path);
    const auto profile = resolve_profile(opts, cfg);
    const auto config = resolve_pipeline_config(opts, cfg);
    config.validate(profile.capabilities, personalized);
    const auto out_dir = resolve_out_dir(opts, cfg);

    ClientFactory factory(opts, cfg);
    PipelineClients clients;
    clients.backend = profile;
    clients.sources = factory.sources(cfg.data.value("sources", json::array()));
    clients.t2i = factory.t2i(profile, out_dir / "artifacts");
    clients.vlm = factory.vlm();

    const auto trace = personalized ? run_personalized(opts.prompt, ImageRef{opts.subject}, config, clients)
                                    : run(opts.prompt, config, clients);
    const auto persisted = persist_run(trace, out_dir);

    json j{{"run_id", trace.run_id}, {"run_dir", persisted.dir.string()}};
    const auto final_path = persisted.final_image ? persisted.final_image : persisted.initial;
    j["final"] = (trace.final_image() && final_path) ? json(final_path->string()) : json(nullptr);
    j["regenerated"] = trace.final_result.has_value();
    if (trace.error) j["error"] = *trace.error;
    emit(out, opts, j, trace.run_id + " " + (final_path ? final_path->string() : std::string("-")));
    if (trace.error) {
        err << "pipeline failed: " << *trace.error << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

GridContext build_grid_context(const Options& opts, const ConfigFile& cfg, ClientFactory& factory) {
    GridContext ctx;
    ctx.backend = resolve_profile(opts, cfg);
    ctx.pipeline = resolve_pipeline_config(opts, cfg);
    ctx.samples_per_class = cfg.data.value("samples_per_class", std::size_t{1});
    ctx.parallelism = cfg.data.value("parallelism", std::size_t{1});
    ctx.subset_seed = cfg.data.value("subset_seed", std::uint64_t{0});

    if (cfg.data.contains("retrieval_sets")) {
        for (const auto& [name, list] : cfg.data["retrieval_sets"].items()) {
            ctx.retrieval_sets[name] = factory.sources(list);
        }
    } else {
        ctx.retrieval_sets["default"] = factory.sources(cfg.data.value("sources", json::array()));
    }
    const std::size_t dim = ctx.retrieval_sets.begin()->second.front().index->dimension();

    const json evaluators = cfg.data.value(
        "evaluators", json{{"clip", "eval-clip"}, {"siglip", "eval-siglip"}, {"dino", "eval-dino"}});
    const std::size_t eval_dim = cfg.data.value("eval_dimension", dim);
    if (evaluators.contains("clip")) ctx.evaluators.clip = factory.embedder(evaluators["clip"], eval_dim);
    if (evaluators.contains("siglip")) ctx.evaluators.siglip = factory.embedder(evaluators["siglip"], eval_dim);
    if (evaluators.contains("dino")) ctx.evaluators.dino = factory.embedder(evaluators["dino"], eval_dim);

    const auto out_dir = resolve_out_dir(opts, cfg);
    ctx.t2i = factory.t2i(ctx.backend, out_dir / "artifacts");
    ctx.vlm = factory.vlm();
    return ctx;
}

int write_report(const Options& opts, const Report& report, std::ostream& out) {
    const auto j = to_json(report);
    if (!opts.report_path.empty()) write_file(opts.report_path, j.dump(2) + "\n");
    if (!opts.csv_path.empty()) write_file(opts.csv_path, to_csv(report));
    std::size_t failed = 0;
    for (const auto& c : report.cells) failed += c.error ? 1 : 0;
    emit(out, opts, opts.report_path.empty() ? j : json{{"report", opts.report_path}, {"failed_cells", failed}},
         std::to_string(report.cells.size()) + " cells, " + std::to_string(failed) + " failed");
    return kExitOk;
}

int cmd_eval(const Options& opts, std::ostream& out) {
    const auto cfg = load_config(opts.config_path);
    if (!cfg.data.contains("plans")) throw UsageError("eval config needs a \"plans\" array");
    std::vector<ExperimentPlan> plans;
    for (const auto& p : cfg.data["plans"]) plans.push_back(experiment_plan_from_json(p));
    const auto classes = load_class_list(opts.classes_path);
    ClientFactory factory(opts, cfg);
    const auto ctx = build_grid_context(opts, cfg, factory);
    return write_report(opts, run_grid(plans, classes, ctx), out);
}

int cmd_sweep(const Options& opts, std::ostream& out) {
    const auto cfg = load_config(opts.config_path);
    if (opts.sizes.empty()) throw UsageError("--sizes is required");
    if (!std::is_sorted(opts.sizes.begin(), opts.sizes.end())) throw UsageError("--sizes must be ascending");
    ExperimentPlan base;
    base.name = "sweep";
    if (cfg.data.contains("sweep_plan")) base = experiment_plan_from_json(cfg.data["sweep_plan"]);
    const auto plans = sweep_plans(base, opts.sizes);
    const auto classes = load_class_list(opts.classes_path);
    ClientFactory factory(opts, cfg);
    const auto ctx = build_grid_context(opts, cfg, factory);
    return write_report(opts, run_grid(plans, classes, ctx), out);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Reference-guided image generation with dynamic retrieval", "imagerag"};
    app.require_subcommand(1);
    Options opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON config file");
        sub->add_option("--index", opts.index_path, "Index vectors file (overrides config sources)");
        sub->add_option("--metadata", opts.metadata_path, "Metadata sidecar (default: <index>.jsonl)");
        sub->add_option("--backend-profile", opts.backend_profile, "Backend profile JSON");
        sub->add_option("--rerank", opts.rerank, "none|bm25|vlm")
            ->check(CLI::IsMember({"none", "bm25", "vlm"}));
        sub->add_option("--k", opts.k, "Candidates per source");
        sub->add_flag("--skip-decision", opts.skip_decision, "Always regenerate");
        sub->add_option("--seed", opts.seed, "Seed for both generations");
        sub->add_option("--out-dir", opts.out_dir, "Run / artifact directory");
        sub->add_option("--mock-transcript", opts.mock_transcript,
                        "Route every client to scripted mocks driven by this JSON-lines file");
        sub->add_flag("--plain", opts.plain, "Single plain-text line instead of JSON");
    };

    auto* ingest_cmd = app.add_subcommand("ingest", "Validate an embedding export and write an index");
    ingest_cmd->add_option("--vectors", opts.vectors_path, "Binary vectors file")->required();
    ingest_cmd->add_option("--metadata", opts.metadata_path, "Metadata sidecar");
    ingest_cmd->add_option("--out", opts.out_path, "Write the normalized index here");
    ingest_cmd->add_flag("--plain", opts.plain, "Single plain-text line instead of JSON");

    auto* retrieve_cmd = app.add_subcommand("retrieve", "Top-k images for a caption");
    add_common(retrieve_cmd);
    retrieve_cmd->add_option("--caption", opts.caption, "Query caption")->required();

    auto* generate_cmd = app.add_subcommand("generate", "Run the full pipeline for a prompt");
    add_common(generate_cmd);
    generate_cmd->add_option("--prompt", opts.prompt, "Text prompt")->required();

    auto* personalize_cmd = app.add_subcommand("personalize", "Pipeline with a personal subject image");
    add_common(personalize_cmd);
    personalize_cmd->add_option("--prompt", opts.prompt, "Text prompt")->required();
    personalize_cmd->add_option("--subject", opts.subject, "Subject image")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Run an experiment grid and report mean +- sem");
    add_common(eval_cmd);
    eval_cmd->add_option("--classes", opts.classes_path, "Class list (JSON lines)")->required();
    eval_cmd->add_option("--report", opts.report_path, "Write the JSON report here");
    eval_cmd->add_option("--csv", opts.csv_path, "Write the CSV projection here");

    auto* sweep_cmd = app.add_subcommand("sweep", "Retrieval-set size sweep over nested subsets");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--classes", opts.classes_path, "Class list (JSON lines)")->required();
    sweep_cmd->add_option("--sizes", opts.sizes, "Ascending subset sizes")->delimiter(',')->required();
    sweep_cmd->add_option("--report", opts.report_path, "Write the JSON report here");
    sweep_cmd->add_option("--csv", opts.csv_path, "Write the CSV projection here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (ingest_cmd->parsed()) return cmd_ingest(opts, out);
        if (retrieve_cmd->parsed()) return cmd_retrieve(opts, out, err);
        if (generate_cmd->parsed()) return cmd_generate(opts, out, err, false);
        if (personalize_cmd->parsed()) return cmd_generate(opts, out, err, true);
        if (eval_cmd->parsed()) return cmd_eval(opts, out);
        if (sweep_cmd->parsed()) return cmd_sweep(opts, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        err << "error: bad JSON: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "failed: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace imagerag::cli
