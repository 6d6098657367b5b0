#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "dbsa/error.hpp"
#include "dbsa/pipeline.hpp"
#include "dbsa/synthetic.hpp"
#include "oracle/oracle.hpp"
#include "scenario.hpp"
#include "test_support.hpp"

using namespace dbsa;
using namespace dbsa::testing;
namespace fs = std::filesystem;

TEST_CASE("prompt rendering") {
    const PromptTemplate p;
    CHECK(p.render_demo({"is it?", "yes"}) == "Q: is it?\nA: yes\n\n");
    CHECK(p.render_query("is it?") == "Q: is it?\nA:");
    CHECK(p.render_label("yes") == " yes");
}

TEST_CASE("full selection equals one dense masked forward") {
    const ModelWeights w = init_random(tiny_config(), 21);
    const TaskSpec task = compact_task(40, 21);
    Engine engine(w, task, compact_config(5, 1.0));
    REQUIRE(engine.pool()->cache.n_blocks() == 8);
    const std::string query = "k21 q";
    QueryMetrics m;
    const RotatedKV ctx = engine.context_for(query, &m);
    CHECK(m.selected_units == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7});
    const auto q = query_tokens(task, query);
    const Tensor got = engine_query_logits(w, ctx, q);
    const auto ref = oracle_query_logits(w, block_tokens(*engine.pool(), 8), oracle::PatternKind::SinkPrevSelf, 2, q);
    CHECK(oracle::compare(ref, got).max_abs_deviation < 1e-4);
}

TEST_CASE("prefix selections equal direct sparse encoding of the prefix") {
    const ModelWeights w = init_random(tiny_config(), 22);
    const TaskSpec task = compact_task(40, 22);
    const EncodedPool pool = encode_pool(w, task, compact_config(5, 1.0));
    const auto q = query_tokens(task, "k03 r");
    for (std::size_t m = 1; m <= 4; ++m) {
        const AssembledCache a = assemble(pool.cache, prefix_selection(m), w.config());
        const Tensor got = engine_query_logits(w, a.kv, q);
        const auto ref = oracle_query_logits(w, block_tokens(pool, m), oracle::PatternKind::SinkPrevSelf, 2, q);
        CHECK(oracle::compare(ref, got).max_abs_deviation < 1e-4);
        // The library's own sparse encoder of the prefix agrees as well.
        const EncodedContext direct = encode_context(w, block_tokens(pool, m), AttentionPattern::sink_prev_self(2));
        CHECK(oracle::max_abs_diff(engine_query_logits(w, direct.kv, q), got) < 1e-5);
    }
}

TEST_CASE("anchor-only selection is few-shot over the anchor block") {
    const ModelWeights w = init_random(tiny_config(), 23);
    const TaskSpec task = compact_task(20, 23);
    const EncodedPool pool = encode_pool(w, task, compact_config(5, 1.0));
    const auto q = query_tokens(task, "k12 s");
    const AssembledCache a = assemble(pool.cache, prefix_selection(1), w.config());
    const auto ref = oracle_query_logits(w, block_tokens(pool, 1), oracle::PatternKind::Full, 0, q);
    CHECK(oracle::compare(ref, engine_query_logits(w, a.kv, q)).max_abs_deviation < 1e-4);
}

TEST_CASE("one-block pool behaves like plain ICL") {
    const ModelWeights w = init_random(tiny_config(), 24);
    const TaskSpec task = compact_task(4, 24);
    Engine dbsa(w, task, compact_config(10, 0.3));
    CHECK(dbsa.pool()->cache.n_blocks() == 1);
    MethodConfig fixed_cfg = compact_config(10, 0.3);
    fixed_cfg.method = Method::FixedICL;
    Engine fixed(w, task, fixed_cfg);
    const Prediction a = dbsa.infer("k11 p"), b = fixed.infer("k11 p");
    CHECK(a.label_scores == b.label_scores);
}

TEST_CASE("full-pattern fixed cache equals dense encoding of the concatenated pool") {
    const ModelWeights w = init_random(tiny_config(), 25);
    const TaskSpec task = compact_task(15, 25);
    MethodConfig cfg = compact_config(5, 1.0);
    cfg.method = Method::FixedICL;
    cfg.pattern = AttentionPattern::full();
    Engine fixed(w, task, cfg);
    std::string text;
    for (const auto& b : fixed.pool()->blocks) text += b.text;
    const EncodedContext dense = encode_context(w, {encode_bytes(text)}, AttentionPattern::full());
    const RotatedKV ctx = fixed.context_for("k21 q");
    REQUIRE(ctx.tokens() == dense.kv.tokens());
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(oracle::max_abs_diff(ctx.layers[l].keys, dense.kv.layers[l].keys) < 1e-5);
        CHECK(oracle::max_abs_diff(ctx.layers[l].values, dense.kv.layers[l].values) < 1e-5);
    }
}

TEST_CASE("pool encoding attends exactly the token-mask pairs") {
    const ModelWeights w = init_random(tiny_config(16, 1, 2, 1, 32), 26);
    const TaskSpec task = compact_task(42, 26);
    for (auto p : {AttentionPattern::sink_prev_self(2), AttentionPattern::full(), AttentionPattern::self_only()}) {
        MethodConfig cfg = compact_config(2, 0.3);
        cfg.pattern = p;
        const EncodedPool pool = encode_pool(w, task, cfg);
        REQUIRE(pool.cache.n_blocks() == 21);
        std::vector<std::size_t> lens;
        for (const auto& b : pool.cache.blocks()) lens.push_back(b.token_count);
        CHECK(pool.setup.attended_pairs == TokenMask(build_block_mask(21, p), lens).allowed_pairs());
    }
}

TEST_CASE("single label is always predicted") {
    const ModelWeights w = init_random(tiny_config(), 27);
    TaskSpec task = compact_task(10, 27);
    for (auto& d : task.pool) d.answer = "a";
    task.labels = {"a"};
    Engine e(w, task, compact_config(5, 0.5));
    CHECK(e.infer("k00 p").label == "a");
}

TEST_CASE("DBSA at ratio 1 matches FixedICL exactly") {
    const ModelWeights w = init_random(tiny_config(), 28);
    const SyntheticTask s = make_recall_task(30, 6, 4, 28);
    MethodConfig cfg = compact_config(5, 1.0);
    Engine dbsa(w, s.task, cfg);
    cfg.method = Method::FixedICL;
    Engine fixed(w, s.task, cfg);
    const Evaluation a = evaluate(dbsa, s.tests), b = evaluate(fixed, s.tests);
    for (std::size_t i = 0; i < s.tests.size(); ++i) {
        CHECK(a.predictions[i].label == b.predictions[i].label);
        CHECK(a.predictions[i].label_scores == b.predictions[i].label_scores);
    }
}

TEST_CASE("DBSA attends far fewer pairs than FixedICL at ratio 0.3") {
    const ModelWeights w = init_random(tiny_config(16, 1, 2, 1, 32), 29);
    const SyntheticTask s = make_recall_task(60, 4, 4, 29);
    MethodConfig cfg = compact_config(3, 0.3);
    Engine dbsa(w, s.task, cfg);
    REQUIRE(dbsa.pool()->cache.n_blocks() == 20);
    cfg.method = Method::FixedICL;
    Engine fixed(w, s.task, cfg);
    for (const auto& t : s.tests) {
        const Prediction a = dbsa.infer(t.query), b = fixed.infer(t.query);
        CHECK(a.metrics.selected_units.size() == 6);
        CHECK(static_cast<double>(a.metrics.attention_flops) < 0.5 * static_cast<double>(b.metrics.attention_flops));
    }
}

TEST_CASE("RetICL re-encodes its retrieved demonstrations densely") {
    const ModelWeights w = init_random(tiny_config(), 30);
    const TaskSpec task = compact_task(20, 30);
    MethodConfig cfg = compact_config(5, 0.2);
    cfg.method = Method::RetICL;
    Engine ret(w, task, cfg);
    QueryMetrics m;
    const RotatedKV ctx = ret.context_for("k31 p", &m);
    CHECK(m.selected_units.size() == 4);
    CHECK(std::is_sorted(m.selected_units.begin(), m.selected_units.end()));
    std::string text;
    for (auto id : m.selected_units) text += task.prompt.render_demo(task.pool[id]);
    const EncodedContext dense = encode_context(w, {encode_bytes(text)}, AttentionPattern::full());
    CHECK(ctx.layers[1].keys == dense.kv.layers[1].keys);
    CHECK(m.attended_pairs == dense.attended_pairs);
}

TEST_CASE("zero-shot has an empty context") {
    const ModelWeights w = init_random(tiny_config(), 31);
    const TaskSpec task = compact_task(10, 31);
    MethodConfig cfg = compact_config(5, 0.3);
    cfg.method = Method::ZeroShot;
    Engine z(w, task, cfg);
    const Prediction p = z.infer("k00 p");
    CHECK(p.metrics.context_tokens == 0);
    CHECK(std::find(task.labels.begin(), task.labels.end(), p.label) != task.labels.end());
}

TEST_CASE("engine rejects pools from another config") {
    const ModelWeights w = init_random(tiny_config(), 32);
    const ModelWeights other = init_random(tiny_config(32, 1, 4, 2), 32);
    const TaskSpec task = compact_task(10, 32);
    auto pool = std::make_shared<EncodedPool>(encode_pool(w, task, compact_config(5, 0.3)));
    CHECK_THROWS_AS(Engine(other, task, compact_config(5, 0.3), pool), CompatibilityError);
}

TEST_CASE("best label ties go to the smallest label") {
    CHECK(best_label({-1.0, -1.0, -2.0}, {"zeta", "beta", "alpha"}) == 1);
    CHECK(best_label({-3.0, -1.0}, {"a", "b"}) == 1);
}

TEST_CASE("ablation grids") {
    const ModelWeights w = init_random(tiny_config(16, 1, 2, 1, 32), 33);
    const SyntheticTask s = make_recall_task(24, 3, 4, 33);
    const MethodConfig base = compact_config(4, 0.5);
    for (auto axis : {AblationAxis::Pattern, AblationAxis::Granularity, AblationAxis::Grouping, AblationAxis::Ordering}) {
        const auto grid = full_grid(axis);
        const auto rows = run_ablation(w, s.task, s.tests, axis, grid, base);
        const std::size_t per_value = axis == AblationAxis::Granularity ? 2 : 1;
        CHECK(rows.size() == grid.size() * per_value);
        const auto again = run_ablation(w, s.task, s.tests, axis, grid, base);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].predictions == again[i].predictions);
            CHECK(rows[i].selections == again[i].selections);
            CHECK(rows[i].mean_attended_pairs == again[i].mean_attended_pairs);
        }
        if (axis == AblationAxis::Ordering) {
            for (std::size_t q = 0; q < s.tests.size(); ++q) {
                auto first = rows[0].selections[q];
                std::sort(first.begin(), first.end());
                for (const auto& r : rows) {
                    auto sel = r.selections[q];
                    CHECK(sel.front() == 0);
                    std::sort(sel.begin(), sel.end());
                    CHECK(sel == first);
                }
            }
        }
        if (axis == AblationAxis::Pattern) {
            CHECK(rows[0].token_sparsity == 0.0);
            CHECK(rows[3].token_sparsity > rows[2].token_sparsity);
        }
    }
    CHECK_THROWS_AS(parse_axis("depth"), ValidationError);
}

TEST_CASE("dataset loading reports line numbers") {
    const fs::path dir = fs::temp_directory_path() / "dbsa_test_pipeline";
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "ok.jsonl");
        out << R"({"query": "x", "answer": "a"})" << "\n\n" << R"({"query": "y", "answer": "b"})" << "\n";
    }
    CHECK(load_jsonl(dir / "ok.jsonl").size() == 2);
    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"query": "x", "answer": "a"})" << "\n" << R"({"query": "y", "answer": )" << "\n";
    }
    try {
        load_jsonl(dir / "bad.jsonl");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    {
        std::ofstream out(dir / "labels.txt");
        out << "a\n\nb\n";
    }
    CHECK(load_labels(dir / "labels.txt") == std::vector<std::string>{"a", "b"});
    const std::vector<Demonstration> demos = {{"q1", "a"}, {"q \"2\"", "b"}};
    save_jsonl(demos, dir / "rt.jsonl");
    const auto back = load_jsonl(dir / "rt.jsonl");
    CHECK(back[1].query == "q \"2\"");
    TaskSpec t;
    t.labels = {"a"};
    t.pool = {{"q", "zzz"}};
    CHECK_THROWS_AS(t.validate(), ValidationError);
    fs::remove_all(dir);
}
