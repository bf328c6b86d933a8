#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "seqseg/annotate.hpp"

using namespace seqseg;

namespace {

Corpus reference_corpus(const std::vector<std::vector<bool>>& labels,
                        const std::vector<std::string>& ids) {
    Corpus refs;
    for (std::size_t d = 0; d < labels.size(); ++d) {
        Document doc;
        doc.id = ids[d];
        for (std::size_t s = 0; s < labels[d].size(); ++s) {
            doc.sentences.push_back(Sentence{{"w" + std::to_string(s)}, labels[d][s]});
        }
        refs.documents.push_back(std::move(doc));
    }
    return refs;
}

const ScreenResult& result_for(const std::vector<ScreenResult>& results, const std::string& id) {
    for (const auto& r : results) {
        if (r.annotator_id == id) return r;
    }
    FAIL("no screening result for " + id);
    return results.front();
}

// The contrarian fixture: sentences {true,false,final}, four in agreement and
// one annotator voting the exact opposite.
AnnotationSet contrarian_set() {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 3;
    a.annotator_ids = {"a", "b", "c", "d", "e"};
    std::vector<bool> agreed = {true, false, true};
    a.votes = {agreed, agreed, agreed, agreed, {false, true, false}};
    return a;
}

}  // namespace

TEST_CASE("screening passes clones of the reference and fails all-negative annotators") {
    std::vector<bool> ref_labels = {true, false, true, false, true};
    Corpus refs = reference_corpus({ref_labels}, {"r1"});
    AnnotationSet a;
    a.doc_id = "r1";
    a.n_sentences = 5;
    a.annotator_ids = {"clone", "sleeper"};
    a.votes = {ref_labels, std::vector<bool>(5, false)};

    auto results = screen({a}, refs);
    REQUIRE(results.size() == 2);
    CHECK(result_for(results, "clone").pass);
    CHECK(result_for(results, "clone").f1 == 1.0);
    CHECK_FALSE(result_for(results, "sleeper").pass);
    CHECK(result_for(results, "sleeper").f1 == 0.0);
}

TEST_CASE("an F1 of exactly the screening floor fails the strict cut") {
    // 10 non-final positions: ref positives {0..5}, votes positives {0,1,2,6}
    // -> tp=3 fp=1 fn=3 -> P=0.75 R=0.5 F1=0.6 exactly
    std::vector<bool> ref_labels(11, false);
    for (int i = 0; i < 6; ++i) ref_labels[i] = true;
    ref_labels[10] = true;
    std::vector<bool> votes(11, false);
    votes[0] = votes[1] = votes[2] = votes[6] = true;

    Corpus refs = reference_corpus({ref_labels}, {"r1"});
    AnnotationSet a;
    a.doc_id = "r1";
    a.n_sentences = 11;
    a.annotator_ids = {"edge"};
    a.votes = {votes};

    auto results = screen({a}, refs, 0.60);
    REQUIRE(results.size() == 1);
    CHECK(results[0].f1 == 0.6);
    CHECK_FALSE(results[0].pass);
}

TEST_CASE("an annotator who skipped a screening document fails with a note") {
    Corpus refs = reference_corpus({{true, true}, {false, true}}, {"r1", "r2"});
    AnnotationSet s1;
    s1.doc_id = "r1";
    s1.n_sentences = 2;
    s1.annotator_ids = {"full", "partial"};
    s1.votes = {{true, true}, {true, true}};
    AnnotationSet s2;
    s2.doc_id = "r2";
    s2.n_sentences = 2;
    s2.annotator_ids = {"full"};
    s2.votes = {{false, true}};

    auto results = screen({s1, s2}, refs);
    CHECK(result_for(results, "full").pass);
    const ScreenResult& partial = result_for(results, "partial");
    CHECK_FALSE(partial.pass);
    CHECK(partial.note == "missing screening doc r2");
}

TEST_CASE("screening rejects inconsistent inputs") {
    Corpus refs = reference_corpus({{true, true}}, {"r1"});
    AnnotationSet a;
    a.doc_id = "r1";
    a.n_sentences = 3;  // reference doc has 2 sentences
    a.annotator_ids = {"x"};
    a.votes = {{true, true, true}};
    CHECK_THROWS_WITH(screen({a}, refs), "annotation length mismatch for doc r1");
    CHECK_THROWS_AS(screen({a}, Corpus{}), DataError);
}

TEST_CASE("identical annotators all earn leave-one-out F1 of one") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 5;
    a.annotator_ids = {"a", "b", "c", "d"};
    a.votes.assign(4, {true, false, true, false, true});
    for (double f1 : loo_scores(a)) CHECK(f1 == 1.0);
}

TEST_CASE("the lone contrarian scores zero while the majority scores one") {
    std::vector<double> scores = loo_scores(contrarian_set());
    REQUIRE(scores.size() == 5);
    for (int i = 0; i < 4; ++i) CHECK(scores[i] == 1.0);
    CHECK(scores[4] == 0.0);
}

TEST_CASE("a tied leave-one-out reference is negative") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 4;
    a.annotator_ids = {"a", "b", "c", "d", "e"};
    // position 0 splits 2-2 among the others of annotator "a"
    a.votes = {{true, false, false, true},
               {true, false, false, true},
               {true, false, false, true},
               {false, false, false, true},
               {false, false, false, true}};
    std::vector<double> scores = loo_scores(a);
    // a's reference at position 0 is negative (2 of 4, not a strict majority),
    // so a's positive vote there is a false positive
    CHECK(scores[0] == 0.0);

    // an explicit vote threshold of 2 turns that same position positive
    std::vector<double> lenient = loo_scores(a, 2);
    CHECK(lenient[0] == 1.0);
}

TEST_CASE("leave-one-out needs at least three annotators") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 2;
    a.annotator_ids = {"a", "b"};
    a.votes = {{true, true}, {true, true}};
    CHECK_THROWS_WITH(loo_scores(a), "leave-one-out scoring needs at least 3 annotators");
}

TEST_CASE("leave-one-out ignores the document-final sentence") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 4;
    a.annotator_ids = {"a0", "b", "c", "d", "e"};
    a.votes.assign(5, {true, false, false, true});
    a.votes[0] = {true, false, false, false};  // disagrees only on the final sentence
    for (double f1 : loo_scores(a)) CHECK(f1 == 1.0);

    // ...but aggregation still emits a label for that sentence
    std::vector<bool> labels = aggregate_topk(a, 4, 3);
    REQUIRE(labels.size() == 4);
    CHECK(labels[3] == true);  // b,c,d retained alongside a0; 3 of 4 vote true
}

TEST_CASE("top-k aggregation drops the dissenter and follows the majority") {
    std::vector<bool> labels = aggregate_topk(contrarian_set(), 4, 3);
    CHECK(labels == std::vector<bool>{true, false, true});
}

TEST_CASE("two positives among four retained annotators stay below the vote floor") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 3;
    a.annotator_ids = {"a", "b", "c", "d"};
    a.votes = {{true, true, true},
               {true, true, true},
               {false, true, true},
               {false, false, true}};
    std::vector<bool> labels = aggregate_topk(a, 4, 3);  // k = n: plain thresholded vote
    CHECK(labels == std::vector<bool>{false, true, true});
}

TEST_CASE("k equal to the annotator count works even below the LOO minimum") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 2;
    a.annotator_ids = {"a", "b"};
    a.votes = {{true, true}, {false, true}};
    CHECK(aggregate_topk(a, 2, 2) == std::vector<bool>{false, true});
}

TEST_CASE("aggregate_topk validates k and the vote floor") {
    AnnotationSet a = contrarian_set();
    CHECK_THROWS_AS(aggregate_topk(a, 6, 3), DataError);
    CHECK_THROWS_AS(aggregate_topk(a, 0, 1), UsageError);
    CHECK_THROWS_AS(aggregate_topk(a, 4, 5), UsageError);
    CHECK_THROWS_AS(aggregate_topk(a, 4, 0), UsageError);
}

TEST_CASE("unanimous votes survive every k at or above the vote floor") {
    AnnotationSet a;
    a.doc_id = "doc";
    a.n_sentences = 3;
    a.annotator_ids = {"a", "b", "c", "d", "e"};
    a.votes.assign(5, {true, false, true});
    for (int k : {3, 4, 5}) {
        CHECK(aggregate_topk(a, k, 3) == std::vector<bool>{true, false, true});
    }
}

TEST_CASE("dropping a majority-equal annotator leaves the aggregate unchanged") {
    AnnotationSet five = contrarian_set();  // annotator "d" votes exactly the majority pattern
    std::vector<bool> with_five = aggregate_topk(five, 4, 3);

    AnnotationSet four;
    four.doc_id = "doc";
    four.n_sentences = 3;
    four.annotator_ids = {"a", "b", "c", "e"};
    four.votes = {five.votes[0], five.votes[1], five.votes[2], five.votes[4]};
    CHECK(aggregate_topk(four, 4, 3) == with_five);
}

TEST_CASE("annotator row order does not change the aggregate") {
    AnnotationSet a = contrarian_set();
    AnnotationSet shuffled;
    shuffled.doc_id = a.doc_id;
    shuffled.n_sentences = a.n_sentences;
    for (int i : {4, 2, 0, 3, 1}) {
        shuffled.annotator_ids.push_back(a.annotator_ids[i]);
        shuffled.votes.push_back(a.votes[i]);
    }
    CHECK(aggregate_topk(shuffled, 4, 3) == aggregate_topk(a, 4, 3));
}

TEST_CASE("annotation files round-trip") {
    AnnotationSet a = contrarian_set();
    AnnotationSet b;
    b.doc_id = "other";
    b.n_sentences = 2;
    b.annotator_ids = {"a", "b", "c"};
    b.votes = {{true, true}, {false, true}, {true, true}};

    std::string path =
        (std::filesystem::temp_directory_path() / "seqseg_annotations.jsonl").string();
    save_annotations({a, b}, path);
    auto loaded = load_annotations(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].doc_id == a.doc_id);
    CHECK(loaded[0].annotator_ids == a.annotator_ids);
    CHECK(loaded[0].votes == a.votes);
    CHECK(loaded[1].n_sentences == 2);
    CHECK(loaded[1].votes == b.votes);
}

TEST_CASE("annotation files reject inconsistent records") {
    std::string path =
        (std::filesystem::temp_directory_path() / "seqseg_annotations_bad.jsonl").string();
    SECTION("duplicate annotator in one document") {
        std::ofstream(path) << R"({"doc_id":"d","annotator_id":"a","votes":[true]})" << "\n"
                            << R"({"doc_id":"d","annotator_id":"a","votes":[false]})" << "\n";
        CHECK_THROWS_WITH(load_annotations(path), "duplicate annotator a for doc d");
    }
    SECTION("vote rows of different lengths") {
        std::ofstream(path) << R"({"doc_id":"d","annotator_id":"a","votes":[true,false]})" << "\n"
                            << R"({"doc_id":"d","annotator_id":"b","votes":[true]})" << "\n";
        CHECK_THROWS_WITH(load_annotations(path),
                          "vote row length mismatch for doc d at line 2");
    }
    SECTION("malformed json") {
        std::ofstream(path) << "{nope\n";
        CHECK_THROWS_WITH(load_annotations(path), "malformed record at line 1");
    }
    SECTION("missing field") {
        std::ofstream(path) << R"({"doc_id":"d","votes":[true]})" << "\n";
        CHECK_THROWS_WITH(load_annotations(path), "missing record field at line 1");
    }
}

TEST_CASE("validate_annotation_set catches structural faults") {
    AnnotationSet a = contrarian_set();
    SECTION("row count mismatch") {
        a.votes.pop_back();
        CHECK_THROWS_AS(validate_annotation_set(a), DataError);
    }
    SECTION("duplicate annotator ids") {
        a.annotator_ids[1] = "a";
        CHECK_THROWS_AS(validate_annotation_set(a), DataError);
    }
    SECTION("wrong row length") {
        a.votes[2].push_back(true);
        CHECK_THROWS_AS(validate_annotation_set(a), DataError);
    }
}
