#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "seqseg/inference.hpp"

using namespace seqseg;

namespace {

EncodedSentence enc_n(int n_tokens, int id = 5) {
    EncodedSentence s;
    s.token_ids.assign(n_tokens, id);
    s.phone_ids.assign(n_tokens, {});
    return s;
}

InferenceConfig window_config(int budget, int max_sentences, int step = 10) {
    InferenceConfig cfg;
    cfg.window_token_budget = budget;
    cfg.max_window_sentences = max_sentences;
    cfg.step = step;
    return cfg;
}

// ScriptedScorer that also records the start of every scored window.
class RecordingScorer : public WindowScorer {
public:
    RecordingScorer(std::vector<double> probs, int window_sentences)
        : inner_(std::move(probs), window_sentences) {}

    WindowScore score_from(int start) override {
        starts.push_back(start);
        ++calls_;
        return inner_.score_from(start);
    }

    int sentence_count() const override { return inner_.sentence_count(); }

    std::vector<int> starts;

private:
    ScriptedScorer inner_;
};

}  // namespace

TEST_CASE("pack_window keeps whole sentences while they fit") {
    std::vector<EncodedSentence> sentences(4, enc_n(6));
    PackedWindow p = pack_window(sentences, 0, window_config(512, 60));
    CHECK(p.start == 0);
    CHECK(p.end == 4);
    REQUIRE(p.window.sentence_spans.size() == 4);
    CHECK(p.window.token_ids.size() == 25u);  // CLS + 4x6
    CHECK(p.window.token_ids[0] == Vocab::CLS);
    CHECK(p.window.sentence_spans[0] == std::pair<int, int>{1, 7});
}

TEST_CASE("pack_window tail-truncates the sentence that busts the budget") {
    std::vector<EncodedSentence> sentences(8, enc_n(100));
    PackedWindow p = pack_window(sentences, 0, window_config(512, 60));
    CHECK(p.end == 6);  // 5 whole + 1 partial
    REQUIRE(p.window.sentence_spans.size() == 6);
    for (int i = 0; i < 5; ++i) {
        const auto& [a, b] = p.window.sentence_spans[i];
        CHECK(b - a == 100);
    }
    CHECK(p.window.sentence_spans[5].second - p.window.sentence_spans[5].first == 11);
    CHECK(p.window.token_ids.size() == 512u);
}

TEST_CASE("pack_window at the final sentence emits a one-sentence window") {
    std::vector<EncodedSentence> sentences(5, enc_n(4));
    PackedWindow p = pack_window(sentences, 4, window_config(512, 60));
    CHECK(p.start == 4);
    CHECK(p.end == 5);
    CHECK(p.window.sentence_spans.size() == 1u);
}

TEST_CASE("pack_window truncates an over-long first sentence to the whole budget") {
    std::vector<EncodedSentence> sentences = {enc_n(50), enc_n(4)};
    PackedWindow p = pack_window(sentences, 0, window_config(16, 60));
    CHECK(p.end == 1);
    REQUIRE(p.window.sentence_spans.size() == 1);
    CHECK(p.window.sentence_spans[0] == std::pair<int, int>{1, 16});
}

TEST_CASE("pack_window respects the sentence cap and rejects bad starts") {
    std::vector<EncodedSentence> sentences(10, enc_n(2));
    PackedWindow p = pack_window(sentences, 0, window_config(512, 3));
    CHECK(p.end == 3);
    CHECK_THROWS_AS(pack_window(sentences, 10, window_config(512, 3)), DataError);
    CHECK_THROWS_AS(pack_window(sentences, -1, window_config(512, 3)), DataError);
}

TEST_CASE("a document fitting one window is scored in one call") {
    ScriptedScorer scorer({0.9, 0.1, 0.8, 0.2}, 10);
    SegmentationResult r = segment_fixed(scorer, window_config(512, 10, 3));
    CHECK(r.n_windows == 1);
    CHECK(r.n_encoder_calls == 1);
    CHECK(r.probs == std::vector<double>{0.9, 0.1, 0.8, 0.2});
    CHECK(r.decisions == std::vector<bool>{true, false, true, false});
}

TEST_CASE("fixed windows advance to last index minus step plus one") {
    RecordingScorer scorer(std::vector<double>(100, 0.1), 60);
    SegmentationResult r = segment_fixed(scorer, window_config(512, 60, 5));
    CHECK(scorer.starts == std::vector<int>{0, 55});
    CHECK(r.n_windows == 2);
}

TEST_CASE("a 600-sentence document needs 11 fixed windows at step 5") {
    RecordingScorer scorer(std::vector<double>(600, 0.1), 60);
    SegmentationResult r = segment_fixed(scorer, window_config(512, 60, 5));
    REQUIRE(scorer.starts.size() == 11);  // ceil((600-60)/55)+1
    for (std::size_t i = 0; i < scorer.starts.size(); ++i) {
        CHECK(scorer.starts[i] == static_cast<int>(55 * i));
    }
    CHECK(r.n_encoder_calls == 11);
}

TEST_CASE("an oversized step clamps to single-sentence progress and terminates") {
    RecordingScorer scorer(std::vector<double>(6, 0.1), 3);
    SegmentationResult r = segment_fixed(scorer, window_config(512, 3, 10));
    CHECK(scorer.starts == std::vector<int>{0, 1, 2, 3});
    CHECK(r.n_windows == 4);
    CHECK(r.probs.size() == 6u);
}

TEST_CASE("adaptive restarts after the most recent positive in the backward span") {
    std::vector<double> probs(12, 0.1);
    probs[4] = 0.9;
    probs[7] = 0.9;
    RecordingScorer scorer(probs, 10);
    segment_adaptive(scorer, window_config(512, 10, 3));
    // window [0,9]: search {9,8,7} finds 7 -> next start 8
    CHECK(scorer.starts == std::vector<int>{0, 8});
}

TEST_CASE("adaptive restarts at the window end when the backward span is all negative") {
    std::vector<double> probs(12, 0.1);
    probs[5] = 0.9;  // positive, but outside the searched span {7,8,9}
    RecordingScorer scorer(probs, 10);
    segment_adaptive(scorer, window_config(512, 10, 3));
    CHECK(scorer.starts == std::vector<int>{0, 9});
}

TEST_CASE("on all-negative probabilities adaptive equals fixed with overlap one") {
    std::vector<double> probs(47, 0.3);
    for (int step : {1, 3, 7}) {
        RecordingScorer adaptive_scorer(probs, 9);
        RecordingScorer fixed_scorer(probs, 9);
        SegmentationResult a = segment_adaptive(adaptive_scorer, window_config(512, 9, step));
        SegmentationResult f = segment_fixed(fixed_scorer, window_config(512, 9, 1));
        CHECK(a == f);
        CHECK(adaptive_scorer.starts == fixed_scorer.starts);
    }
}

TEST_CASE("scripted random streams hold the sliding-window invariants") {
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Rng rng(seed * 2654435761ull + 17);
        const int n = static_cast<int>(rng.uniform_int(1, 80));
        const int capacity = static_cast<int>(rng.uniform_int(1, 12));
        const int step = static_cast<int>(rng.uniform_int(1, 8));
        std::vector<double> probs(n);
        for (double& p : probs) {
            p = rng.bernoulli(0.25) ? 0.5 + 0.5 * rng.uniform() : 0.49 * rng.uniform();
        }
        InferenceConfig cfg = window_config(512, capacity, step);

        ScriptedScorer fixed_scorer(probs, capacity);
        SegmentationResult f = segment_fixed(fixed_scorer, cfg);
        ScriptedScorer adaptive_scorer(probs, capacity);
        SegmentationResult a = segment_adaptive(adaptive_scorer, cfg);

        for (const SegmentationResult* r : {&f, &a}) {
            REQUIRE(r->probs.size() == static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                REQUIRE(r->probs[i] == probs[i]);  // every sentence finalized once
                REQUIRE(r->decisions[i] == (probs[i] > cfg.threshold));
            }
            REQUIRE(r->n_windows >= 1);
            REQUIRE(r->n_windows == r->n_encoder_calls);
        }
        REQUIRE(a.n_windows <= f.n_windows);

        ScriptedScorer again(probs, capacity);
        REQUIRE(segment_adaptive(again, cfg) == a);
    }
}

TEST_CASE("segmenting an empty document fails") {
    ScriptedScorer scorer(std::vector<double>{}, 4);
    CHECK_THROWS_AS(segment_fixed(scorer, window_config(512, 4)), DataError);
    CHECK_THROWS_AS(segment_adaptive(scorer, window_config(512, 4)), DataError);
}

// ---------------------------------------------------------------------------
// model-backed paths
// ---------------------------------------------------------------------------

namespace {

struct ModelFixture {
    Corpus corpus;
    Vocab vocab;
    SegModel model;

    explicit ModelFixture(ClassifierHead head) {
        SynthSpec spec;
        spec.n_docs = 1;
        spec.sentences_per_doc_min = 10;
        spec.sentences_per_doc_max = 10;
        spec.words_per_sentence_min = 3;
        spec.words_per_sentence_max = 3;
        spec.segment_length_min = 2;
        spec.segment_length_max = 3;
        spec.vocab_size = 30;
        spec.boundary_cue_strength = 1.0;
        spec.seed = 5;
        corpus = generate_synthetic(spec);
        vocab = build_vocab(corpus, 200);
        ModelConfig mc;
        mc.vocab_size = vocab.size();
        mc.d_model = 8;
        mc.n_layers = 1;
        mc.n_heads = 2;
        mc.d_ff = 16;
        mc.max_seq_len = 64;
        mc.dropout_rate = 0.0;
        mc.head = head;
        model = init_model(mc, 9);
    }
};

}  // namespace

TEST_CASE("a ten-sentence document costs nine cross-segment calls") {
    ModelFixture fx(ClassifierHead::cls_token);
    InferenceConfig cfg;
    cfg.strategy = Strategy::cross_segment;
    cfg.left_ctx = 20;
    cfg.right_ctx = 20;
    SegmentationResult r =
        segment(fx.corpus.documents[0], fx.model, fx.vocab, nullptr, nullptr, cfg);
    CHECK(r.n_encoder_calls == 9);
    CHECK(r.probs.size() == 10u);
    CHECK(r.probs[9] == 1.0);
    CHECK(r.decisions[9] == true);
    for (int i = 0; i < 9; ++i) CHECK(r.decisions[i] == (r.probs[i] > cfg.threshold));
}

TEST_CASE("cross windows are CLS, left tail, SEP, right head") {
    std::vector<EncodedSentence> sentences = {enc_n(5, 10), enc_n(4, 20), enc_n(6, 30)};
    for (int t = 0; t < 5; ++t) sentences[0].token_ids[t] = 10 + t;  // distinguishable tail
    WindowInput w = make_cross_window(sentences, 0, 3, 4);
    std::vector<int> expected = {Vocab::CLS, 12, 13, 14, Vocab::SEP, 20, 20, 20, 20};
    CHECK(w.token_ids == expected);
    CHECK(w.phone_ids.size() == w.token_ids.size());

    // left context shorter than the budget: everything from the left survives
    WindowInput wide = make_cross_window(sentences, 0, 128, 2);
    CHECK(wide.token_ids.size() == 5u + 2u + 2u);

    CHECK_THROWS_AS(make_cross_window(sentences, 2, 3, 3), DataError);  // no right side
}

TEST_CASE("head and strategy must agree") {
    ModelFixture seq(ClassifierHead::sentence_mean);
    ModelFixture cross(ClassifierHead::cls_token);
    InferenceConfig cfg;
    CHECK_THROWS_AS(
        segment_fixed(seq.corpus.documents[0], cross.model, cross.vocab, nullptr, nullptr, cfg),
        DataError);
    cfg.strategy = Strategy::cross_segment;
    CHECK_THROWS_AS(segment_cross_segment(cross.corpus.documents[0], seq.model, seq.vocab,
                                          nullptr, nullptr, cfg),
                    DataError);
}

TEST_CASE("cross contexts must fit the model's sequence length") {
    ModelFixture fx(ClassifierHead::cls_token);
    InferenceConfig cfg;
    cfg.strategy = Strategy::cross_segment;
    cfg.left_ctx = 40;
    cfg.right_ctx = 40;  // 40+40+2 > max_seq_len 64
    CHECK_THROWS_AS(segment_cross_segment(fx.corpus.documents[0], fx.model, fx.vocab, nullptr,
                                          nullptr, cfg),
                    UsageError);
}

TEST_CASE("the strategy dispatcher is deterministic per strategy") {
    ModelFixture fx(ClassifierHead::sentence_mean);
    InferenceConfig cfg;
    cfg.window_token_budget = 64;
    cfg.max_window_sentences = 4;
    cfg.step = 2;
    for (Strategy s : {Strategy::fixed, Strategy::adaptive}) {
        cfg.strategy = s;
        SegmentationResult r1 =
            segment(fx.corpus.documents[0], fx.model, fx.vocab, nullptr, nullptr, cfg);
        SegmentationResult r2 =
            segment(fx.corpus.documents[0], fx.model, fx.vocab, nullptr, nullptr, cfg);
        CHECK(r1 == r2);
        CHECK(r1.probs.size() == fx.corpus.documents[0].sentences.size());
        for (std::size_t i = 0; i < r1.probs.size(); ++i) {
            CHECK(r1.decisions[i] == (r1.probs[i] > cfg.threshold));
        }
    }
}

TEST_CASE("strategy names parse both spellings") {
    CHECK(strategy_from_string("fixed") == Strategy::fixed);
    CHECK(strategy_from_string("adaptive") == Strategy::adaptive);
    CHECK(strategy_from_string("cross-segment") == Strategy::cross_segment);
    CHECK(strategy_from_string("cross_segment") == Strategy::cross_segment);
    CHECK_THROWS_AS(strategy_from_string("sliding"), UsageError);
    CHECK(std::string(to_string(Strategy::cross_segment)) == "cross-segment");
}

TEST_CASE("validate_inference_config rejects out-of-range settings") {
    InferenceConfig cfg;
    SECTION("step below 1") {
        cfg.step = 0;
        CHECK_THROWS_AS(validate_inference_config(cfg), UsageError);
    }
    SECTION("threshold at the boundary") {
        cfg.threshold = 1.0;
        CHECK_THROWS_AS(validate_inference_config(cfg), UsageError);
        cfg.threshold = 0.0;
        CHECK_THROWS_AS(validate_inference_config(cfg), UsageError);
    }
    SECTION("token budget too small") {
        cfg.window_token_budget = 1;
        CHECK_THROWS_AS(validate_inference_config(cfg), UsageError);
    }
    SECTION("sentence cap below 1") {
        cfg.max_window_sentences = 0;
        CHECK_THROWS_AS(validate_inference_config(cfg), UsageError);
    }
}

TEST_CASE("result files round-trip") {
    std::vector<DocResult> results;
    results.push_back({"alpha", {{0.25, 0.75}, {false, true}, 1, 1}});
    results.push_back({"beta", {{0.5, 0.5, 0.9}, {false, false, true}, 2, 2}});
    std::string path =
        (std::filesystem::temp_directory_path() / "seqseg_results_roundtrip.jsonl").string();
    save_results(results, path);
    CHECK(load_results(path) == results);
}

TEST_CASE("result files reject malformed lines") {
    std::string path = (std::filesystem::temp_directory_path() / "seqseg_results_bad.jsonl").string();
    SECTION("unparsable json") {
        std::ofstream(path) << "{oops\n";
        CHECK_THROWS_WITH(load_results(path), "malformed record at line 1");
    }
    SECTION("missing field") {
        std::ofstream(path) << R"({"id":"a","probs":[0.5]})" << "\n";
        CHECK_THROWS_WITH(load_results(path), "missing record field at line 1");
    }
    SECTION("length mismatch") {
        std::ofstream(path)
            << R"({"id":"a","probs":[0.5],"decisions":[false],"n_windows":1,"n_encoder_calls":1})"
            << "\n"
            << R"({"id":"b","probs":[0.5,0.6],"decisions":[false],"n_windows":1,"n_encoder_calls":1})"
            << "\n";
        CHECK_THROWS_WITH(load_results(path), "probs/decisions length mismatch at line 2");
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_results("/nonexistent/results.jsonl"), DataError);
    }
}
