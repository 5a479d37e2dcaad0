#include "imagerag/eval.hpp"

#include "imagerag/error.hpp"
#include "imagerag/serialization.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace imagerag {

using nlohmann::json;

std::string_view to_string(EvalMetric m) {
    switch (m) {
    case EvalMetric::clip_t2i: return "clip-t2i";
    case EvalMetric::siglip_t2i: return "siglip-t2i";
    case EvalMetric::dino_i2i: return "dino-i2i";
    }
    return "unknown";
}

EvalMetric eval_metric_from_string(std::string_view s) {
    for (auto m : {EvalMetric::clip_t2i, EvalMetric::siglip_t2i, EvalMetric::dino_i2i}) {
        if (to_string(m) == s) return m;
    }
    throw UsageError("unknown eval metric '" + std::string(s) + "'");
}

AggregateCell aggregate(std::span<const double> values) {
    if (values.empty()) throw UsageError("cannot aggregate an empty sample");
    // Welford's running mean / sum of squared deviations.
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t n = 0;
    for (double x : values) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    AggregateCell cell;
    cell.mean = mean;
    cell.n = n;
    cell.degenerate = n == 1;
    if (n > 1) {
        const double sd = std::sqrt(m2 / static_cast<double>(n - 1));
        cell.sem = sd / std::sqrt(static_cast<double>(n));
    }
    return cell;
}

AggregateCell aggregate(std::span<const ScoreSample> samples) {
    std::vector<double> values;
    values.reserve(samples.size());
    for (const auto& s : samples) values.push_back(s.value);
    return aggregate(values);
}

double text_image_score(EmbedderClient& embedder, std::string_view text, const ImageRef& image) {
    const auto t = embed_text(embedder, text);
    const auto i = embed_image(embedder, image, t.size());
    return dot(t, i);
}

double image_image_score(EmbedderClient& embedder, const ImageRef& a, const ImageRef& b) {
    const auto va = embed_image(embedder, a);
    const auto vb = embed_image(embedder, b, va.size());
    return dot(va, vb);
}

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::base: return "base";
    case Variant::rephrased_prompt: return "rephrased-prompt";
    case Variant::retrieve_concepts: return "retrieve-concepts";
    case Variant::retrieve_prompt: return "retrieve-prompt";
    case Variant::full_method: return "full-method";
    }
    return "unknown";
}

Variant variant_from_string(std::string_view s) {
    for (auto v : {Variant::base, Variant::rephrased_prompt, Variant::retrieve_concepts,
                   Variant::retrieve_prompt, Variant::full_method}) {
        if (to_string(v) == s) return v;
    }
    throw UsageError("unknown variant '" + std::string(s) + "'");
}

json to_json(const ExperimentPlan& p) {
    json j{{"name", p.name}, {"variant", to_string(p.variant)}, {"retrieval_set", p.retrieval_set}};
    j["subset_size"] = p.subset_size ? json(*p.subset_size) : json(nullptr);
    j["rerank"] = p.rerank ? json(to_string(*p.rerank)) : json(nullptr);
    return j;
}

ExperimentPlan experiment_plan_from_json(const json& j) {
    ExperimentPlan p;
    try {
        p.variant = variant_from_string(j.at("variant").get<std::string>());
        p.name = j.value("name", std::string(to_string(p.variant)));
        p.retrieval_set = j.value("retrieval_set", p.retrieval_set);
        if (j.contains("subset_size") && !j["subset_size"].is_null()) {
            p.subset_size = j["subset_size"].get<std::size_t>();
        }
        if (j.contains("rerank") && !j["rerank"].is_null()) {
            p.rerank = rerank_mode_from_string(j["rerank"].get<std::string>());
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad experiment plan: ") + e.what());
    }
    return p;
}

std::vector<EvalClass> load_class_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open class list " + path.string());
    std::vector<EvalClass> classes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            EvalClass c;
            c.class_id = j.at("class_id").get<std::string>();
            c.prompt = j.at("prompt").get<std::string>();
            c.real_images = j.value("real_images", json::array()).get<std::vector<ImageRef>>();
            classes.push_back(std::move(c));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return classes;
}

std::vector<EvalMetric> Evaluators::metrics() const {
    std::vector<EvalMetric> out;
    if (clip) out.push_back(EvalMetric::clip_t2i);
    if (siglip) out.push_back(EvalMetric::siglip_t2i);
    if (dino) out.push_back(EvalMetric::dino_i2i);
    return out;
}

// ---------------------------------------------------------------------------
// Subsets
// ---------------------------------------------------------------------------

std::vector<std::size_t> seeded_permutation(std::size_t population, std::uint64_t seed) {
    std::vector<std::size_t> perm(population);
    for (std::size_t i = 0; i < population; ++i) perm[i] = i;
    std::mt19937_64 rng(seed);
    // Fisher-Yates with rejection sampling so the result does not depend on
    // the standard library's distribution implementation.
    for (std::size_t i = population; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(perm[i - 1], perm[r % bound]);
    }
    return perm;
}

std::vector<std::vector<std::size_t>> nested_subsets(std::size_t population,
                                                     std::span<const std::size_t> sizes,
                                                     std::uint64_t seed) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0 || sizes[i] > population) {
            throw UsageError("subset size " + std::to_string(sizes[i]) +
                             " outside [1, " + std::to_string(population) + "]");
        }
        if (i > 0 && sizes[i] <= sizes[i - 1]) throw UsageError("subset sizes must be ascending");
    }
    const auto perm = seeded_permutation(population, seed);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s : sizes) out.emplace_back(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s));
    return out;
}

std::vector<ExperimentPlan> sweep_plans(const ExperimentPlan& base, std::span<const std::size_t> sizes) {
    std::vector<ExperimentPlan> plans;
    for (std::size_t s : sizes) {
        ExperimentPlan p = base;
        p.subset_size = s;
        p.name = base.name + "@" + std::to_string(s);
        plans.push_back(std::move(p));
    }
    return plans;
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

namespace {

std::vector<RetrievalSource> sources_for(const ExperimentPlan& plan, const GridContext& ctx) {
    auto it = ctx.retrieval_sets.find(plan.retrieval_set);
    if (it == ctx.retrieval_sets.end() || it->second.empty()) {
        throw UsageError("plan '" + plan.name + "' names unknown retrieval set '" + plan.retrieval_set + "'");
    }
    auto sources = it->second;
    if (!plan.subset_size) return sources;

    const auto& primary = *sources.front().index;
    const auto order = nested_subsets(primary.size(), std::span(&*plan.subset_size, 1), ctx.subset_seed).front();
    for (auto& src : sources) {
        std::vector<std::size_t> positions;
        positions.reserve(order.size());
        for (std::size_t pos : order) {
            auto mapped = src.index->find(primary.id(pos));
            if (!mapped) throw UsageError("source '" + src.name + "' lacks id '" + primary.id(pos) + "'");
            positions.push_back(*mapped);
        }
        src.index = std::make_shared<const EmbeddingIndex>(src.index->subset(positions));
    }
    return sources;
}

PipelineConfig config_for(const ExperimentPlan& plan, const GridContext& ctx) {
    PipelineConfig config = ctx.pipeline;
    if (plan.rerank) config.rerank = *plan.rerank;
    switch (plan.variant) {
    case Variant::retrieve_concepts: config.query_source = QuerySource::concepts; break;
    case Variant::retrieve_prompt: config.query_source = QuerySource::prompt; break;
    default: config.query_source = QuerySource::captions; break;
    }
    return config;
}

ImageRef generate_for(const ExperimentPlan& plan, const EvalClass& cls, std::size_t sample,
                      const std::vector<RetrievalSource>& sources, const GridContext& ctx) {
    PipelineConfig config = config_for(plan, ctx);
    if (sample > 0) {
        if (config.initial_seed) *config.initial_seed += static_cast<std::int64_t>(sample);
        if (config.final_seed) *config.final_seed += static_cast<std::int64_t>(sample);
    }
    GenerationParams params = ctx.backend.capabilities.default_params;
    if (config.initial_seed) params.seed = config.initial_seed;
    const auto& caps = ctx.backend.capabilities;

    switch (plan.variant) {
    case Variant::base:
        return generate(*ctx.t2i, caps, cls.prompt, params).image;
    case Variant::rephrased_prompt: {
        if (!ctx.vlm) throw UsageError("rephrased-prompt plans need a VLM");
        const auto initial = generate(*ctx.t2i, caps, cls.prompt, params).image;
        const auto rephrased = rephrase_prompt(*ctx.vlm, cls.prompt, initial);
        if (config.final_seed) params.seed = config.final_seed;
        return generate(*ctx.t2i, caps, rephrased, params).image;
    }
    default: {
        PipelineClients clients{ctx.vlm, ctx.t2i, sources, ctx.backend};
        const auto trace = run(cls.prompt, config, clients);
        if (trace.error) throw Error(*trace.error);
        auto image = trace.final_image();
        if (!image) throw Error("pipeline produced no image");
        return *image;
    }
    }
}

struct CellResult {
    std::map<EvalMetric, std::vector<double>> samples;
    std::optional<std::string> error;
};

CellResult evaluate_cell(const ExperimentPlan& plan, const EvalClass& cls,
                         const std::vector<RetrievalSource>& sources, const GridContext& ctx) {
    CellResult out;
    try {
        for (std::size_t s = 0; s < ctx.samples_per_class; ++s) {
            const auto image = generate_for(plan, cls, s, sources, ctx);
            if (ctx.evaluators.clip) {
                out.samples[EvalMetric::clip_t2i].push_back(
                    text_image_score(*ctx.evaluators.clip, cls.prompt, image));
            }
            if (ctx.evaluators.siglip) {
                out.samples[EvalMetric::siglip_t2i].push_back(
                    text_image_score(*ctx.evaluators.siglip, cls.prompt, image));
            }
            if (ctx.evaluators.dino) {
                for (const auto& real : cls.real_images) {
                    out.samples[EvalMetric::dino_i2i].push_back(
                        image_image_score(*ctx.evaluators.dino, real, image));
                }
            }
        }
    } catch (const std::exception& e) {
        out.samples.clear();
        out.error = e.what();
    }
    return out;
}

json cell_json(const std::optional<AggregateCell>& v) {
    if (!v) return json{{"mean", nullptr}, {"sem", nullptr}, {"n", 0}};
    json j{{"mean", v->mean}, {"sem", v->sem}, {"n", v->n}};
    if (v->degenerate) j["degenerate"] = true;
    return j;
}

} // namespace

Report run_grid(const std::vector<ExperimentPlan>& plans, const std::vector<EvalClass>& classes,
                const GridContext& ctx) {
    if (!ctx.t2i) throw UsageError("grid needs a T2I client");
    if (ctx.samples_per_class == 0) throw UsageError("samples_per_class must be >= 1");
    Report report;
    report.plans = plans;
    report.metrics = ctx.evaluators.metrics();

    // Plans with a bad retrieval set fail all their cells, like any other error.
    std::vector<std::vector<RetrievalSource>> plan_sources(plans.size());
    std::vector<std::optional<std::string>> plan_errors(plans.size());
    for (std::size_t p = 0; p < plans.size(); ++p) {
        if (plans[p].variant == Variant::base || plans[p].variant == Variant::rephrased_prompt) continue;
        try {
            plan_sources[p] = sources_for(plans[p], ctx);
        } catch (const std::exception& e) {
            plan_errors[p] = e.what();
        }
    }

    const std::size_t total = plans.size() * classes.size();
    std::vector<CellResult> results(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            const std::size_t p = i / classes.size();
            if (plan_errors[p]) {
                results[i].error = *plan_errors[p];
                continue;
            }
            results[i] = evaluate_cell(plans[p], classes[i % classes.size()], plan_sources[p], ctx);
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(ctx.parallelism, total));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    for (std::size_t p = 0; p < plans.size(); ++p) {
        std::map<EvalMetric, std::vector<double>> pooled;
        for (std::size_t c = 0; c < classes.size(); ++c) {
            const auto& res = results[p * classes.size() + c];
            for (auto metric : report.metrics) {
                GridCell cell{plans[p].name, classes[c].class_id, metric, std::nullopt, res.error};
                auto it = res.samples.find(metric);
                if (!res.error && it != res.samples.end() && !it->second.empty()) {
                    cell.value = aggregate(it->second);
                    auto& dst = pooled[metric];
                    dst.insert(dst.end(), it->second.begin(), it->second.end());
                } else if (!res.error) {
                    cell.error = "no samples";
                }
                report.cells.push_back(std::move(cell));
            }
        }
        for (auto metric : report.metrics) {
            PlanSummary s{plans[p].name, metric, std::nullopt};
            if (auto it = pooled.find(metric); it != pooled.end()) s.value = aggregate(it->second);
            report.summary.push_back(std::move(s));
        }
    }
    return report;
}

json to_json(const Report& report) {
    json plans = json::array();
    for (const auto& p : report.plans) plans.push_back(to_json(p));
    json metrics = json::array();
    for (auto m : report.metrics) metrics.push_back(to_string(m));
    json cells = json::array();
    for (const auto& c : report.cells) {
        json j = cell_json(c.value);
        j["plan"] = c.plan;
        j["class_id"] = c.class_id;
        j["metric"] = to_string(c.metric);
        if (c.error) j["error"] = *c.error;
        cells.push_back(std::move(j));
    }
    json summary = json::array();
    for (const auto& s : report.summary) {
        json j = cell_json(s.value);
        j["plan"] = s.plan;
        j["metric"] = to_string(s.metric);
        summary.push_back(std::move(j));
    }
    return {{"plans", std::move(plans)},
            {"metrics", std::move(metrics)},
            {"cells", std::move(cells)},
            {"summary", std::move(summary)}};
}

std::string to_csv(const Report& report) {
    std::ostringstream out;
    out << "plan";
    for (auto m : report.metrics) out << ',' << to_string(m) << "_mean," << to_string(m) << "_sem";
    out << '\n';
    out.precision(6);
    out << std::fixed;
    for (const auto& plan : report.plans) {
        out << plan.name;
        for (auto m : report.metrics) {
            const PlanSummary* found = nullptr;
            for (const auto& s : report.summary) {
                if (s.plan == plan.name && s.metric == m) found = &s;
            }
            if (found && found->value) {
                out << ',' << found->value->mean << ',' << found->value->sem;
            } else {
                out << ",,";
            }
        }
        out << '\n';
    }
    return out.str();
}

} // namespace imagerag
