#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqseg/cli.hpp"

using namespace seqseg;

namespace {

struct TmpDir {
    std::filesystem::path path;

    explicit TmpDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("seqseg_cli_" + tag);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CliOutput {
    int code = -1;
    std::string out, err;
};

// Runs the CLI with stdout/stderr captured so assertions can inspect them.
CliOutput run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliOutput r;
    try {
        r.code = run_cli(args);
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string fingerprint_of(const CliOutput& r) {
    const std::string prefix = "config fingerprint: ";
    auto pos = r.out.find(prefix);
    REQUIRE(pos != std::string::npos);
    std::string hex = r.out.substr(pos + prefix.size(), 16);
    REQUIRE(hex.size() == 16);
    for (char c : hex) REQUIRE(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
    return hex;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << content;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
    std::size_t count = 0;
    for (auto pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size()))
        ++count;
    return count;
}

std::size_t count_lines(const std::string& text) {
    std::istringstream in(text);
    std::size_t count = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++count;
    return count;
}

// Sets an environment variable for the current scope, restoring the old state.
struct EnvGuard {
    std::string name, old_value;
    bool had = false;

    EnvGuard(const std::string& n, const std::string& value) : name(n) {
        if (const char* v = std::getenv(n.c_str())) {
            had = true;
            old_value = v;
        }
        ::setenv(n.c_str(), value.c_str(), 1);
    }
    ~EnvGuard() {
        if (had) ::setenv(name.c_str(), old_value.c_str(), 1);
        else ::unsetenv(name.c_str());
    }
};

// Corpus, vocabulary, and an untrained checkpoint: enough to exercise the
// segment/eval/bench commands without paying for a training run.
struct CliFixture {
    TmpDir dir;
    std::string corpus, vocab, model;
    int vocab_size = 0;

    explicit CliFixture(const std::string& tag) : dir(tag) {
        SynthSpec spec;
        spec.n_docs = 6;
        spec.sentences_per_doc_min = 6;
        spec.sentences_per_doc_max = 9;
        spec.words_per_sentence_min = 3;
        spec.words_per_sentence_max = 5;
        spec.segment_length_min = 2;
        spec.segment_length_max = 3;
        spec.vocab_size = 30;
        spec.boundary_cue_strength = 1.0;
        spec.seed = 11;
        Corpus c = generate_synthetic(spec);
        corpus = dir.file("corpus.jsonl");
        save_records(c, corpus);

        Vocab v = build_vocab(c, 200);
        vocab_size = v.size();
        vocab = dir.file("vocab.txt");
        save_vocab(v, vocab);

        model = dir.file("model.ckpt");
        save_model(init_model(model_config(vocab_size), 5), model);
    }

    static ModelConfig model_config(int vocab_size) {
        ModelConfig mc;
        mc.vocab_size = vocab_size;
        mc.d_model = 8;
        mc.n_layers = 1;
        mc.n_heads = 2;
        mc.d_ff = 16;
        mc.max_seq_len = 64;
        mc.dropout_rate = 0.0;
        return mc;
    }

    std::vector<std::string> segment_args(const std::string& out) const {
        return {"segment",          "--model", model, "--in",   corpus,
                "--vocab",          vocab,     "--out", out,    "--window-tokens",
                "64",               "--window-sentences", "8"};
    }
};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("exit codes follow the usage/data contract", "[cli]") {
    SECTION("help exits cleanly") {
        CliOutput r = run({"--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("segment") != std::string::npos);
    }
    SECTION("a subcommand is required") { CHECK(run({}).code == 1); }
    SECTION("missing required flag is a usage error") {
        CliOutput r = run({"segment", "--in", "a", "--vocab", "b", "--out", "c"});
        CHECK(r.code == 1);
        CHECK(r.err.find("--model") != std::string::npos);
    }
    SECTION("worker count must be positive") {
        CliOutput r = run({"segment", "--model", "m", "--in", "a", "--vocab", "b", "--out", "c",
                           "--workers", "0"});
        CHECK(r.code == 1);
        CHECK(r.err.find("--workers must be >= 1") != std::string::npos);
    }
    SECTION("unreadable input is a data error") {
        TmpDir dir("missing_input");
        CliOutput r = run({"vocab", "--in", dir.file("nope.jsonl"), "--out", dir.file("v.txt")});
        CHECK(r.code == 2);
        CHECK(r.err.find("error: ") != std::string::npos);
    }
}

TEST_CASE("eval exits 2 and names the document on a length mismatch", "[cli]") {
    TmpDir dir("eval_mismatch");
    Corpus refs;
    Document doc;
    doc.id = "alpha";
    doc.sentences = {{{"one"}, false}, {{"two"}, true}, {{"three"}, true}};
    refs.documents.push_back(doc);
    std::string ref_path = dir.file("refs.jsonl");
    save_records(refs, ref_path);

    std::vector<DocResult> preds{{"alpha", SegmentationResult{{0.1}, {false}, 1, 1}}};
    std::string pred_path = dir.file("preds.jsonl");
    save_results(preds, pred_path);

    CliOutput r = run({"eval", "--pred", pred_path, "--ref", ref_path});
    CHECK(r.code == 2);
    CHECK(r.err.find("prediction length mismatch for doc alpha") != std::string::npos);
}

TEST_CASE("segment rejects checkpoints inconsistent with its inputs", "[cli]") {
    CliFixture fx("model_inputs");

    SECTION("vocabulary size mismatch") {
        std::string stale = fx.dir.file("stale.ckpt");
        save_model(init_model(CliFixture::model_config(fx.vocab_size + 3), 5), stale);
        auto args = fx.segment_args(fx.dir.file("out.jsonl"));
        args[2] = stale;
        CliOutput r = run(args);
        CHECK(r.code == 2);
        CHECK(r.err.find("different vocabulary size") != std::string::npos);
    }
    SECTION("phone model without a lexicon") {
        ModelConfig mc = CliFixture::model_config(fx.vocab_size);
        mc.use_phone = true;
        mc.phone_vocab_size = 6;
        std::string phone_model = fx.dir.file("phone.ckpt");
        save_model(init_model(mc, 5), phone_model);
        auto args = fx.segment_args(fx.dir.file("out.jsonl"));
        args[2] = phone_model;
        CliOutput r = run(args);
        CHECK(r.code == 2);
        CHECK(r.err.find("--lexicon is required") != std::string::npos);
    }
}

TEST_CASE("config file, flags, and environment share one precedence order", "[cli]") {
    CliFixture fx("config_precedence");
    std::string out = fx.dir.file("seg.jsonl");
    std::string file4 = fx.dir.file("step4.conf");
    std::string file9 = fx.dir.file("step9.conf");
    write_text(file4, "# window stepping\n\nstep = 4\n");
    write_text(file9, "step = 9\n");

    CliOutput base = run(fx.segment_args(out) + std::vector<std::string>{"--step", "4"});
    REQUIRE(base.code == 0);
    std::string fp = fingerprint_of(base);

    SECTION("a config file key matches the equivalent flag") {
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--config", file4});
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) == fp);
    }
    SECTION("a flag overrides the config file") {
        CliOutput r = run(fx.segment_args(out) +
                          std::vector<std::string>{"--config", file9, "--step", "4"});
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) == fp);
    }
    SECTION("SEQSEG_CONFIG fills in when --config is absent") {
        EnvGuard env("SEQSEG_CONFIG", file4);
        CliOutput r = run(fx.segment_args(out));
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) == fp);
    }
    SECTION("--config overrides SEQSEG_CONFIG") {
        EnvGuard env("SEQSEG_CONFIG", file9);
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--config", file4});
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) == fp);
    }
    SECTION("a different effective config fingerprints differently") {
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--step", "9"});
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) != fp);
    }
    SECTION("identical invocations fingerprint identically") {
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--step", "4"});
        REQUIRE(r.code == 0);
        CHECK(fingerprint_of(r) == fp);
    }
}

TEST_CASE("config file errors are usage errors", "[cli]") {
    CliFixture fx("config_errors");
    std::string out = fx.dir.file("seg.jsonl");

    SECTION("unknown key") {
        std::string bad = fx.dir.file("bad.conf");
        write_text(bad, "stride = 4\n");
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--config", bad});
        CHECK(r.code == 1);
        CHECK(r.err.find("unknown config key 'stride'") != std::string::npos);
    }
    SECTION("missing equals sign") {
        std::string bad = fx.dir.file("bad.conf");
        write_text(bad, "step 4\n");
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--config", bad});
        CHECK(r.code == 1);
        CHECK(r.err.find("expected key = value") != std::string::npos);
    }
    SECTION("unparseable value") {
        std::string bad = fx.dir.file("bad.conf");
        write_text(bad, "step = banana\n");
        CliOutput r = run(fx.segment_args(out) + std::vector<std::string>{"--config", bad});
        CHECK(r.code == 1);
        CHECK(r.err.find("bad integer for step") != std::string::npos);
    }
    SECTION("nonexistent config path") {
        CliOutput r = run(fx.segment_args(out) +
                          std::vector<std::string>{"--config", fx.dir.file("nope.conf")});
        CHECK(r.code == 1);
        CHECK(r.err.find("cannot open config file") != std::string::npos);
    }
}

TEST_CASE("synth fingerprint tracks the effective settings", "[cli]") {
    TmpDir dir("synth_fp");
    auto synth_args = [&](const std::string& seed) {
        return std::vector<std::string>{
            "synth",           "--out",  dir.file("c.jsonl"), "--docs",        "2",
            "--sentences-min", "3",      "--sentences-max",   "4",             "--words-min",
            "3",               "--words-max", "4",            "--segment-min", "1",
            "--segment-max",   "2",      "--vocab",           "20",            "--cue-strength",
            "1.0",             "--seed", seed};
    };
    CliOutput a = run(synth_args("7"));
    REQUIRE(a.code == 0);
    CHECK(a.out.find("wrote 2 documents") != std::string::npos);
    CliOutput b = run(synth_args("7"));
    REQUIRE(b.code == 0);
    CHECK(fingerprint_of(a) == fingerprint_of(b));
    CliOutput c = run(synth_args("8"));
    REQUIRE(c.code == 0);
    CHECK(fingerprint_of(c) != fingerprint_of(a));
}

TEST_CASE("segment reruns and worker counts agree byte for byte", "[cli]") {
    CliFixture fx("workers");
    std::string out1 = fx.dir.file("seg1.jsonl");
    std::string out2 = fx.dir.file("seg2.jsonl");
    std::string out3 = fx.dir.file("seg3.jsonl");
    std::vector<std::string> step{"--step", "3"};

    REQUIRE(run(fx.segment_args(out1) + step).code == 0);
    REQUIRE(run(fx.segment_args(out2) + step).code == 0);
    REQUIRE(run(fx.segment_args(out3) + step +
                std::vector<std::string>{"--workers", "4"}).code == 0);

    std::string serial = read_text(out1);
    CHECK(serial == read_text(out2));
    CHECK(serial == read_text(out3));
    CHECK(load_results(out1).size() == 6);
}

TEST_CASE("gradcheck passes at its default tolerance and fails at zero", "[cli]") {
    CliOutput pass = run({"gradcheck", "--coords", "5", "--seed", "3"});
    CHECK(pass.code == 0);
    CHECK(pass.out.find("gradient check passed") != std::string::npos);

    CliOutput fail = run({"gradcheck", "--coords", "5", "--seed", "3", "--tol", "0"});
    CHECK(fail.code == 3);
    CHECK(fail.err.find("gradient check failed") != std::string::npos);
}

TEST_CASE("pipeline smoke run leaves a full set of artifacts", "[cli]") {
    TmpDir dir("smoke");
    std::ostringstream captured;
    auto* old = std::cout.rdbuf(captured.rdbuf());
    SmokePaths p;
    try {
        p = pipeline_smoke(dir.file("run"));
    } catch (...) {
        std::cout.rdbuf(old);
        throw;
    }
    std::cout.rdbuf(old);

    // One fingerprint line per stage: synth, vocab, train, two segments,
    // two evals, bench.
    CHECK(count_occurrences(captured.str(), "config fingerprint: ") == 8);

    for (const std::string& path : {p.corpus, p.vocab, p.model, p.seg_fixed, p.seg_adaptive,
                                    p.eval_fixed, p.eval_adaptive, p.bench}) {
        CAPTURE(path);
        CHECK(std::filesystem::file_size(path) > 0);
    }

    std::string bench = read_text(p.bench);
    CHECK(count_lines(bench) == 4);  // steps {1,3} x {fixed, adaptive}
    CHECK(bench.find("fixed") != std::string::npos);
    CHECK(bench.find("adaptive") != std::string::npos);

    std::ifstream in(p.eval_fixed);
    nlohmann::json j;
    in >> j;
    double f1 = j.at("f1").get<double>();
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);
}
