// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "imagerag/error.hpp"
#include "imagerag/eval.hpp"
#include "imagerag/pipeline.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace imagerag;
namespace t = imagerag::testing;
using t::make_plan;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

Outcome retrieval_oracle() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20250601);
    std::size_t queries = 0;
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 10000;
        const std::size_t dim = 8 + rng() % 505;
        const EmbeddingIndex index(dim, t::random_records(rng, n, dim));
        const auto q = t::random_unit(rng, dim);
        const std::size_t k = 1 + rng() % 50;
        const auto hits = index.top_k(q, k);
        const auto oracle = t::exhaustive_top_k(index, q, k);
        ++queries;
        o.check(hits.size() == oracle.size(), "hit count, trial " + std::to_string(trial));
        for (std::size_t i = 0; i < std::min(hits.size(), oracle.size()); ++i) {
            o.check(hits[i].id == oracle[i].id, "id mismatch, trial " + std::to_string(trial));
            worst = std::max(worst, std::abs(hits[i].score - static_cast<double>(oracle[i].score)));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.check(worst <= 1e-9, "score error");
    o.check(secs < 60.0, "runtime");
    o.detail << queries << " indices, max |score diff| " << worst << ", " << secs << " s";
    return o;
}

Outcome bm25_oracle() {
    Outcome o;
    const std::vector<std::string> texts{"a red bird on a branch", "a blue car", "red red car in the rain",
                                         "bird watching guide", "a small red bird and a big red bird"};
    // Hand arithmetic: N=5, avgdl=27/5, df(red)=df(bird)=3, idf=ln(12/7).
    const std::vector<double> hand{1.0311237405320974, 0.0, 0.7186620009769163, 0.6587735008955067,
                                   1.2482024227493809};
    std::vector<std::vector<std::string>> docs;
    for (const auto& s : texts) docs.push_back(tokenize(s));
    const auto scores = bm25_scores(docs, tokenize("red bird"), {1.2, 0.75});
    double worst = 0;
    for (std::size_t i = 0; i < hand.size(); ++i) worst = std::max(worst, std::abs(scores[i] - hand[i]));
    o.check(worst <= 1e-9, "toy corpus");

    std::mt19937_64 rng(5);
    const std::vector<std::string> vocab{"red", "bird", "car", "blue", "tree", "sky", "a", "the"};
    int pools = 0;
    for (int trial = 0; trial < 100; ++trial) {
        CandidatePool pool;
        const std::size_t n = 2 + rng() % 10;
        for (std::size_t i = 0; i < n; ++i) {
            std::string caption;
            for (std::size_t w = 0, len = 1 + rng() % 6; w < len; ++w) caption += vocab[rng() % vocab.size()] + " ";
            pool.candidates.push_back({{"c" + std::to_string(i), 1.0 - 0.01 * i, Metric::cosine_clip}, caption, ""});
        }
        const std::string query = vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()];
        const auto base = bm25_rerank(pool, query);
        auto shuffled = pool;
        std::shuffle(shuffled.candidates.begin(), shuffled.candidates.end(), rng);
        const auto permuted = bm25_rerank(shuffled, query);
        o.check(permuted == base, "permutation, pool " + std::to_string(trial));
        std::multiset<std::string> a, b;
        for (const auto& h : base) a.insert(h.id);
        for (const auto& c : pool.candidates) b.insert(c.hit.id);
        o.check(a == b, "rerank output is a permutation of the pool");
        ++pools;
    }
    o.detail << "max toy-corpus error " << worst << ", " << pools << " random pools";
    return o;
}

Outcome prompt_fidelity() {
    Outcome o;
    const ImageRef image{"initial.png"};
    int checked = 0;
    for (int i = 0; i < 20; ++i) {
        const std::string prompt = "prompt number " + std::to_string(i) + (i % 2 ? " with \"quotes\"" : " of a Chow");
        auto transport = std::make_shared<ScriptedChatTransport>();
        transport->push("no");
        transport->push("concept " + std::to_string(i));
        transport->push("caption " + std::to_string(i));
        transport->push("rephrased " + std::to_string(i));
        VlmClient vlm(transport);
        decide_match(vlm, prompt, image);
        retrieval_caption_generation(vlm, prompt, image, {});
        rephrase_prompt(vlm, prompt, image);
        const auto reqs = transport->requests();
        if (reqs.size() != 4) {
            o.check(false, "request count");
            continue;
        }
        o.check(t::last_user_texts(reqs[0]) == std::vector{t::prompt_fixture("decision", prompt)}, "decision");
        o.check(t::last_user_texts(reqs[1]) == std::vector{t::prompt_fixture("missing_concepts")}, "missing concepts");
        o.check(t::last_user_texts(reqs[2]) == std::vector{t::prompt_fixture("caption_generation")}, "captions");
        o.check(t::last_user_texts(reqs[3]) == std::vector{t::prompt_fixture("rephrase", prompt)}, "rephrase");
        checked += 4;
    }
    o.detail << checked << " outgoing requests compared byte for byte";
    return o;
}

Outcome retry_state_machine() {
    Outcome o;
    const ImageRef image{"initial.png"};
    auto run_script = [&](std::vector<std::string> replies) {
        auto transport = std::make_shared<ScriptedChatTransport>();
        for (auto& r : replies) transport->push(std::move(r));
        VlmClient vlm(transport);
        return retrieval_caption_generation(vlm, "a Geococcyx", image, {});
    };
    auto temps = [](const CaptionGenerationResult& r) {
        std::vector<double> out;
        for (const auto& a : r.attempts) out.push_back(a.temperature);
        return out;
    };
    const auto a = run_script({"a bird", "A roadrunner bird"});
    o.check(temps(a) == std::vector<double>{0.0} && !a.fallback_used, "(a) success at attempt 0");
    const auto b = run_script({"unable to respond", "unable to respond", "a bird", "A roadrunner bird"});
    o.check(temps(b) == std::vector<double>{0.0, 0.4, 0.7} && !b.fallback_used, "(b) fail-fail-succeed");
    const auto c = run_script(std::vector<std::string>(4, "I'm unable to respond."));
    o.check(c.attempts.size() == 4 && c.fallback_used && c.captions.size() == 1 &&
                c.captions[0].caption == "a Geococcyx",
            "(c) all-fail fallback");
    o.detail << "(a) " << temps(a).size() << " attempt, (b) temperatures 0.0/0.4/0.7, (c) "
             << c.attempts.size() << " attempts, fallback=" << std::boolalpha << c.fallback_used;
    return o;
}

Outcome template_exactness() {
    Outcome o;
    const ImageRef a{"a.png"}, b{"b.png"}, c{"c.png"}, d{"d.png"};
    o.check(render_template("a Chow", {{"a Chow dog", {a}}}, 3).text ==
                "According to these examples of a Chow dog:<img1>, generate a Chow",
            "single concept golden");
    o.check(render_template("p", {{"c1", {a}}, {"c2", {b}}}, 3).text ==
                "According to these examples of c1:<img1>, c2:<img2>, generate p",
            "two concept golden");
    o.check(render_template("p", {{"c1", {a, b}}, {"c2", {c}}}, 3).text ==
                "According to these examples of c1:<img1>, <img2>, c2:<img3>, generate p",
            "multi image golden");
    int rejected = 0;
    for (const auto& profile : {t::sdxl_profile(), t::omnigen_profile()}) {
        const auto cap = static_cast<std::size_t>(profile.capabilities.max_reference_images);
        std::vector<ImageRef> images{a, b, c, d};
        images.resize(cap + 1);
        try {
            render_template("p", {{"c", images}}, cap);
            o.check(false, "cap " + std::to_string(cap) + " not enforced");
        } catch (const CapabilityError&) {
            ++rejected;
        }
        images.resize(cap);
        try {
            render_template("p", {{"c", images}}, cap);
        } catch (const Error&) {
            o.check(false, "cap " + std::to_string(cap) + " rejected a request at the limit");
        }
    }
    o.check(rejected == 2, "both caps");
    o.detail << "3 golden strings, over-cap rejected for caps {1, 3}";
    return o;
}

Outcome aggregation() {
    Outcome o;
    const std::vector<double> xs{0.2, 0.3, 0.4};
    const auto cell = aggregate(xs);
    o.check(std::abs(cell.mean - 0.3) <= 1e-6 && std::abs(cell.sem - 0.057735) <= 1e-6, "[0.2,0.3,0.4]");
    std::mt19937_64 rng(1000);
    std::uniform_real_distribution<double> u(-1, 1);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> v(2 + rng() % 300);
        for (auto& x : v) x = u(rng);
        double sum = 0;
        for (double x : v) sum += x;
        const double n = static_cast<double>(v.size());
        const double mean = sum / n;
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sem = std::sqrt(ss / (n - 1)) / std::sqrt(n);
        const auto got = aggregate(v);
        worst = std::max({worst, std::abs(got.mean - mean), std::abs(got.sem - sem)});
    }
    o.check(worst <= 1e-12, "two-pass oracle");
    o.detail.precision(6);
    o.detail << std::fixed << "mean " << cell.mean << ", sem " << cell.sem;
    o.detail << std::scientific << ", max oracle diff " << worst << " over 1000 lists";
    return o;
}

Outcome end_to_end() {
    Outcome o;
    t::TempDir dir;
    auto w1 = t::make_two_concept_world(dir / "artifacts");
    const auto t1 = run("a red panda in watercolor", w1.config, w1.clients);
    auto w2 = t::make_two_concept_world(dir / "artifacts");
    const auto t2 = run("a red panda in watercolor", w2.config, w2.clients);

    std::vector<std::string> stages;
    for (auto s : t1.stages) stages.emplace_back(to_string(s));
    o.check(!t1.error, "run error");
    o.check(stages == std::vector<std::string>{"initial-gen", "decision", "vlm-loop", "retrieval", "final-gen"},
            "stage order");
    const auto n = t1.final_prompt ? t1.final_prompt->images.size() : 0;
    o.check(n == 2, "attachment count");
    if (t1.final_prompt && n == 2) {
        o.check(t1.final_prompt->images[0].uri == "img/" + w1.expected_ids[0] + ".png" &&
                    t1.final_prompt->images[1].uri == "img/" + w1.expected_ids[1] + ".png",
                "attachments equal exhaustive-scan top-1 ids");
    }
    const auto j1 = to_json(t1, false).dump(), j2 = to_json(t2, false).dump();
    o.check(j1 == j2, "replay");
    o.detail << "stages " << stages.size() << ", attachments " << n << ", replay "
             << (j1 == j2 ? "byte-identical" : "differs") << " (" << j1.size() << " bytes)";
    return o;
}

Outcome synthetic_improvement() {
    Outcome o;
    t::TempDir dir;
    auto w = t::make_improvement_world(dir.path(), 20);
    const std::vector<ExperimentPlan> plans{make_plan("base", Variant::base), make_plan("full-method", Variant::full_method)};
    const auto report = run_grid(plans, w.classes, w.context);
    std::optional<AggregateCell> base, full;
    for (const auto& s : report.summary) {
        if (s.metric != EvalMetric::clip_t2i) continue;
        if (s.plan == "base") base = s.value;
        if (s.plan == "full-method") full = s.value;
    }
    std::size_t failed = 0;
    for (const auto& c : report.cells) failed += c.error ? 1 : 0;
    o.check(failed == 0, "cell errors");
    o.check(base && full && base->n == 20 && full->n == 20, "20 classes scored");
    o.check(base && full && full->mean > base->mean, "full-method > base");
    if (base && full) {
        o.detail.precision(4);
        o.detail << std::fixed << "clip-t2i base " << base->mean << " +- " << base->sem << ", full-method "
                 << full->mean << " +- " << full->sem;
    }
    return o;
}

Outcome dataset_sweep() {
    Outcome o;
    t::TempDir dir;
    const std::vector<std::size_t> sizes{1000, 10000, 100000};
    const auto subsets = nested_subsets(100000, sizes, 7);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        o.check(subsets[i].size() == sizes[i], "subset size");
        o.check(std::set<std::size_t>(subsets[i].begin(), subsets[i].end()).size() == sizes[i], "distinct");
        if (i > 0) {
            const std::set<std::size_t> bigger(subsets[i].begin(), subsets[i].end());
            bool nested = true;
            for (auto p : subsets[i - 1]) nested = nested && bigger.count(p);
            o.check(nested && sizes[i - 1] < sizes[i], "strict nesting");
        }
    }

    // A 100,000-record world: one class, three subset sizes, full method.
    std::mt19937_64 rng(3);
    constexpr std::size_t dim = 8;
    auto records = t::random_records(rng, 100000, dim);
    auto embedder = std::make_shared<MockEmbedder>("clip", dim);
    GridContext ctx;
    auto transport = std::make_shared<ScriptedChatTransport>();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        transport->push("no");
        transport->push("a rare bird");
        transport->push("A photo of a rare bird");
    }
    ctx.vlm = std::make_shared<VlmClient>(transport);
    ctx.t2i = std::make_shared<MockT2iClient>(dir / "artifacts");
    ctx.backend = t::omnigen_profile();
    ctx.retrieval_sets["laion"] = {RetrievalSource{
        "clip", std::make_shared<const EmbeddingIndex>(dim, std::move(records)), embedder, Metric::cosine_clip}};
    ctx.evaluators.clip = std::make_shared<MockEmbedder>("eval-clip", dim);
    ctx.evaluators.siglip = std::make_shared<MockEmbedder>("eval-siglip", dim);
    ctx.evaluators.dino = std::make_shared<MockEmbedder>("eval-dino", dim);
    ctx.subset_seed = 7;
    const auto plan = make_plan("size", Variant::full_method, "laion");
    const std::vector<EvalClass> classes{{"bird", "a rare bird", {ImageRef{"real/bird.png"}}}};
    const auto report = run_grid(sweep_plans(plan, sizes), classes, ctx);

    std::map<std::pair<std::string, EvalMetric>, int> per_size;
    for (const auto& s : report.summary) {
        if (s.value) ++per_size[{s.plan, s.metric}];
    }
    o.check(per_size.size() == sizes.size() * 3, "summary cells");
    for (const auto& [key, count] : per_size) o.check(count == 1, "one cell per size per metric");
    std::size_t cell_count = 0;
    for (const auto& c : report.cells) cell_count += c.value ? 1 : 0;
    o.check(cell_count == sizes.size() * 3, "report cells");
    o.detail << "sizes 1000 < 10000 < 100000 nested, " << per_size.size() << " size x metric cells";
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"retrieval-oracle", retrieval_oracle},
        {"bm25-oracle", bm25_oracle},
        {"prompt-fidelity", prompt_fidelity},
        {"retry-state-machine", retry_state_machine},
        {"template-bit-exactness", template_exactness},
        {"aggregation", aggregation},
        {"end-to-end-mock-run", end_to_end},
        {"synthetic-improvement", synthetic_improvement},
        {"dataset-size-sweep", dataset_sweep},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
        failed += o.pass ? 0 : 1;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed;
}
