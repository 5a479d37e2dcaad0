#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace imagerag::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "imagerag-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return fs::path(IMAGERAG_SOURCE_DIR) / "tests" / "fixtures"; }

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v) x = normal(rng);
    return v;
}

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
    return normalized(random_vector(rng, dim));
}

std::vector<EmbeddingRecord> random_records(std::mt19937_64& rng, std::size_t count, std::size_t dim) {
    std::vector<EmbeddingRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "r%05zu", i);
        out.push_back({id, random_vector(rng, dim), {std::string("img/") + id + ".png", std::nullopt}});
    }
    return out;
}

std::vector<OracleHit> exhaustive_top_k(const EmbeddingIndex& index, std::span<const float> query,
                                        std::size_t k) {
    std::vector<OracleHit> all;
    all.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto v = index.vector(i);
        long double s = 0;
        for (std::size_t d = 0; d < v.size(); ++d) s += static_cast<long double>(v[d]) * query[d];
        all.push_back({index.id(i), s});
    }
    std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

double bm25_oracle(const std::vector<std::string>& doc, const std::vector<std::vector<std::string>>& corpus,
                   const std::vector<std::string>& query, double k1, double b) {
    const double n = static_cast<double>(corpus.size());
    double total_len = 0;
    for (const auto& d : corpus) total_len += static_cast<double>(d.size());
    const double avgdl = total_len / n;
    double score = 0;
    for (const auto& term : query) {
        double df = 0;
        for (const auto& d : corpus) df += std::count(d.begin(), d.end(), term) > 0 ? 1 : 0;
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), term));
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * static_cast<double>(doc.size()) / avgdl));
    }
    return score;
}

BackendProfile omnigen_profile() {
    return load_backend_profile(fs::path(IMAGERAG_SOURCE_DIR) / "profiles" / "omnigen.json");
}

BackendProfile sdxl_profile() {
    return load_backend_profile(fs::path(IMAGERAG_SOURCE_DIR) / "profiles" / "sdxl_ip.json");
}

TwoConceptWorld make_two_concept_world(const fs::path& artifacts, std::uint64_t seed) {
    constexpr std::size_t dim = 16;
    std::mt19937_64 rng(seed);
    auto records = random_records(rng, 200, dim);
    for (auto& r : records) r.metadata.caption = "photo " + r.id;
    auto index = std::make_shared<const EmbeddingIndex>(dim, std::move(records), "clip");

    TwoConceptWorld w;
    w.captions = {"A red panda sitting on a tree branch", "A watercolor painting of a mountain lake"};
    w.embedder = std::make_shared<MockEmbedder>("clip");
    std::vector<std::vector<float>> queries;
    for (const auto& c : w.captions) {
        queries.push_back(random_unit(rng, dim));
        w.embedder->set_text(c, queries.back());
    }
    for (const auto& q : queries) {
        for (const auto& hit : exhaustive_top_k(*index, q, 2)) {
            if (std::find(w.expected_ids.begin(), w.expected_ids.end(), hit.id) == w.expected_ids.end()) {
                w.expected_ids.push_back(hit.id);
                break;
            }
        }
    }

    w.transport = std::make_shared<ScriptedChatTransport>();
    w.transport->push("No.");
    w.transport->push("a red panda\nwatercolor style");
    w.transport->push(w.captions[0] + "\n" + w.captions[1]);

    w.t2i = std::make_shared<MockT2iClient>(artifacts);
    w.clients.vlm = std::make_shared<VlmClient>(w.transport);
    w.clients.t2i = w.t2i;
    w.clients.sources = {RetrievalSource{"clip", index, w.embedder, Metric::cosine_clip}};
    w.clients.backend = omnigen_profile();
    w.config.initial_seed = 42;
    w.config.final_seed = 42;
    return w;
}

ImprovementWorld make_improvement_world(const fs::path& artifacts, std::size_t classes, std::uint64_t seed) {
    constexpr std::size_t dim = 32;
    constexpr std::size_t refs_per_class = 3;
    std::mt19937_64 rng(seed);

    auto retrieval = std::make_shared<MockEmbedder>("clip");
    auto references = std::make_shared<MockEmbedder>("reference-space");
    auto generator = std::make_shared<MockEmbedder>("generator-text", dim);
    auto eval_clip = std::make_shared<MockEmbedder>("eval-clip");
    auto eval_dino = std::make_shared<MockEmbedder>("eval-dino");

    auto jitter = [&](const std::vector<float>& base, float amount) {
        auto noise = random_vector(rng, dim);
        std::vector<float> v(dim);
        for (std::size_t d = 0; d < dim; ++d) v[d] = base[d] + amount * noise[d] / std::sqrt(float(dim));
        return normalized(v);
    };

    ImprovementWorld w;
    w.transport = std::make_shared<ScriptedChatTransport>();
    std::vector<EmbeddingRecord> records;
    for (std::size_t c = 0; c < classes; ++c) {
        const std::string cid = "class" + std::to_string(c);
        const auto truth = random_unit(rng, dim);
        EvalClass cls{cid, "a photo of the rare thing " + cid, {ImageRef{"real/" + cid + ".png"}}};
        eval_clip->set_text(cls.prompt, truth);
        eval_dino->set_image(cls.real_images.front().uri, truth);

        const std::string caption = "a clear picture showing " + cid;
        const auto query = jitter(truth, 0.2f);
        retrieval->set_text(caption, query);
        retrieval->set_text("the rare thing " + cid, query);
        for (std::size_t r = 0; r < refs_per_class; ++r) {
            const std::string id = cid + "-ref" + std::to_string(r);
            auto v = jitter(truth, 0.4f);
            references->set_image("refs/" + id + ".png", v);
            records.push_back({id, std::move(v), {"refs/" + id + ".png", caption}});
        }
        w.transport->push("no");
        w.transport->push("the rare thing " + cid);
        w.transport->push(caption);
        w.classes.push_back(std::move(cls));
    }
    for (std::size_t i = 0; i < 100; ++i) {
        const std::string id = "distractor" + std::to_string(i);
        auto v = random_unit(rng, dim);
        references->set_image("refs/" + id + ".png", v);
        records.push_back({id, std::move(v), {"refs/" + id + ".png", "something else"}});
    }

    auto& ctx = w.context;
    ctx.vlm = std::make_shared<VlmClient>(w.transport);
    ctx.t2i = std::make_shared<MockT2iClient>(artifacts, ConditioningWorld{generator, references});
    ctx.backend = omnigen_profile();
    ctx.retrieval_sets["default"] = {RetrievalSource{
        "clip", std::make_shared<const EmbeddingIndex>(dim, std::move(records), "clip"), retrieval,
        Metric::cosine_clip}};
    ctx.evaluators.clip = eval_clip;
    ctx.evaluators.dino = eval_dino;
    ctx.pipeline.initial_seed = 1;
    ctx.pipeline.final_seed = 1;
    return w;
}

} // namespace imagerag::testing

namespace imagerag::testing {

std::string prompt_fixture(const std::string& name, const std::string& prompt) {
    auto text = read_file(fixture_dir() / "prompts" / (name + ".txt"));
    const std::string key = "{prompt}";
    if (auto pos = text.find(key); pos != std::string::npos) text.replace(pos, key.size(), prompt);
    return text;
}

std::vector<std::string> last_user_texts(const ChatRequest& request) {
    const auto wire = to_json(request);
    std::vector<std::string> out;
    for (auto it = wire["messages"].rbegin(); it != wire["messages"].rend(); ++it) {
        if ((*it)["role"] != "user") continue;
        for (const auto& part : (*it)["content"]) {
            if (part["type"] == "text") out.push_back(part["text"].get<std::string>());
        }
        break;
    }
    return out;
}

} // namespace imagerag::testing
