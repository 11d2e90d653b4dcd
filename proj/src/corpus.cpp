#include "brainattr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "brainattr/common.hpp"
#include "brainattr/io_util.hpp"

namespace brainattr {

using nlohmann::json;

int Corpus::run_of_word(int64_t word_index) const {
    for (size_t r = 0; r < runs.size(); ++r)
        if (word_index >= runs[r].begin && word_index < runs[r].end) return static_cast<int>(r);
    throw invalid_input("corpus: word index " + std::to_string(word_index) + " not in any run");
}

int Corpus::trs_in_run(int run) const {
    const RunSpan& span = runs.at(static_cast<size_t>(run));
    int max_tr = -1;
    for (int64_t w = span.begin; w < span.end; ++w)
        max_tr = std::max(max_tr, words[static_cast<size_t>(w)].tr_index);
    return max_tr + 1;
}

std::pair<int64_t, int64_t> Corpus::words_in_tr(int run, int tr) const {
    const RunSpan& span = runs.at(static_cast<size_t>(run));
    int64_t begin = -1, end = -1;
    for (int64_t w = span.begin; w < span.end; ++w) {
        if (words[static_cast<size_t>(w)].tr_index == tr) {
            if (begin < 0) begin = w;
            end = w + 1;
        }
    }
    if (begin < 0) return {0, 0};
    return {begin, end};
}

int64_t Corpus::last_word_of_tr(int run, int tr) const {
    auto [begin, end] = words_in_tr(run, tr);
    if (begin == end) throw invalid_input("corpus: TR has no words");
    return end - 1;
}

int Corpus::expected_tr(int run, int64_t word_index) const {
    const RunSpan& span = runs.at(static_cast<size_t>(run));
    const int64_t within = word_index - span.begin;
    const double onset = static_cast<double>(within) * word_duration_s;
    return static_cast<int>(std::floor(onset / tr_duration_s));
}

void Corpus::validate() const {
    if (words.empty()) throw invalid_input("corpus: empty");
    if (runs.empty()) throw invalid_input("corpus: no runs declared");
    if (tr_duration_s <= 0 || word_duration_s <= 0) throw invalid_input("corpus: nonpositive durations");

    int64_t expected_begin = 0;
    for (const auto& r : runs) {
        if (r.begin != expected_begin) throw invalid_input("corpus: runs must be ordered, disjoint and covering");
        if (r.end <= r.begin) throw invalid_input("corpus: empty run span");
        expected_begin = r.end;
    }
    if (expected_begin != size()) throw invalid_input("corpus: runs do not cover all words");

    for (int64_t i = 0; i < size(); ++i) {
        const WordRecord& w = words[static_cast<size_t>(i)];
        if (w.word_index != i) throw invalid_input("corpus: word_index out of order at position " + std::to_string(i));
        if (w.surface.empty()) throw invalid_input("corpus: empty surface at word " + std::to_string(i));
        const int run = run_of_word(i);
        if (w.run != run) throw invalid_input("corpus: run field mismatch at word " + std::to_string(i));
        if (i > runs[static_cast<size_t>(run)].begin) {
            const WordRecord& prev = words[static_cast<size_t>(i - 1)];
            if (prev.run == w.run && prev.tr_index > w.tr_index)
                throw invalid_input("corpus: tr_index decreases within run at word " + std::to_string(i));
        }
        for (int id : w.annotations.semantic)
            if (id < 0 || id >= static_cast<int>(semantic_vocab.size()))
                throw invalid_input("corpus: semantic id out of vocabulary at word " + std::to_string(i));
        for (int id : w.annotations.syntactic)
            if (id < 0 || id >= static_cast<int>(syntactic_vocab.size()))
                throw invalid_input("corpus: syntactic id out of vocabulary at word " + std::to_string(i));
        for (int id : w.annotations.discourse)
            if (id < 0 || id >= static_cast<int>(discourse_vocab.size()))
                throw invalid_input("corpus: discourse id out of vocabulary at word " + std::to_string(i));
    }
}

namespace {

void reject_unknown_fields(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw invalid_input("corpus file: unknown field '" + it.key() + "' in " + where);
}

std::vector<int> int_list(const json& j) {
    std::vector<int> out;
    for (const auto& v : j) out.push_back(v.get<int>());
    return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    corpus.validate();
    std::string body;
    {
        json header;
        header["record"] = "header";
        header["version"] = 1;
        header["tr_duration_s"] = corpus.tr_duration_s;
        header["word_duration_s"] = corpus.word_duration_s;
        json jruns = json::array();
        for (const auto& r : corpus.runs) jruns.push_back({{"begin", r.begin}, {"end", r.end}});
        header["runs"] = jruns;
        header["semantic_vocab"] = corpus.semantic_vocab;
        header["syntactic_vocab"] = corpus.syntactic_vocab;
        header["discourse_vocab"] = corpus.discourse_vocab;
        body += header.dump() + "\n";
    }
    for (const auto& w : corpus.words) {
        json rec;
        rec["record"] = "word";
        rec["surface"] = w.surface;
        rec["word_index"] = w.word_index;
        rec["run"] = w.run;
        rec["tr_index"] = w.tr_index;
        rec["semantic"] = w.annotations.semantic;
        rec["syntactic"] = w.annotations.syntactic;
        rec["discourse"] = w.annotations.discourse;
        body += rec.dump() + "\n";
    }
    write_file_atomic(path, body);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("corpus file: cannot open " + path);

    Corpus corpus;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw invalid_input("corpus file: malformed JSON line");
        const std::string kind = j.value("record", "");
        if (kind == "header") {
            if (have_header) throw invalid_input("corpus file: duplicate header record");
            reject_unknown_fields(j, {"record", "version", "tr_duration_s", "word_duration_s", "runs",
                                      "semantic_vocab", "syntactic_vocab", "discourse_vocab"},
                                  "header");
            if (j.at("version").get<int>() != 1) throw invalid_input("corpus file: unsupported version");
            corpus.tr_duration_s = j.at("tr_duration_s").get<double>();
            corpus.word_duration_s = j.at("word_duration_s").get<double>();
            for (const auto& r : j.at("runs")) {
                reject_unknown_fields(r, {"begin", "end"}, "runs entry");
                corpus.runs.push_back({r.at("begin").get<int64_t>(), r.at("end").get<int64_t>()});
            }
            corpus.semantic_vocab = j.at("semantic_vocab").get<std::vector<std::string>>();
            corpus.syntactic_vocab = j.at("syntactic_vocab").get<std::vector<std::string>>();
            corpus.discourse_vocab = j.at("discourse_vocab").get<std::vector<std::string>>();
            have_header = true;
        } else if (kind == "word") {
            if (!have_header) throw invalid_input("corpus file: word record before header");
            reject_unknown_fields(j, {"record", "surface", "word_index", "run", "tr_index",
                                      "semantic", "syntactic", "discourse"},
                                  "word record");
            WordRecord w;
            w.surface = j.at("surface").get<std::string>();
            w.word_index = j.at("word_index").get<int64_t>();
            w.run = j.at("run").get<int>();
            w.tr_index = j.at("tr_index").get<int>();
            w.annotations.semantic = int_list(j.at("semantic"));
            w.annotations.syntactic = int_list(j.at("syntactic"));
            w.annotations.discourse = int_list(j.at("discourse"));
            corpus.words.push_back(std::move(w));
        } else {
            throw invalid_input("corpus file: unknown record kind '" + kind + "'");
        }
    }
    corpus.validate();
    return corpus;
}

}  // namespace brainattr
