// Command-line front end: synth, train, project, index, search, evaluate,
// gradcheck. stdout carries machine-readable JSON only; diagnostics go to
// stderr. Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2s/data_io.hpp"
#include "d2s/fd_suite.hpp"
#include "d2s/io_util.hpp"
#include "d2s/manifest.hpp"
#include "d2s/matrix.hpp"
#include "d2s/metrics.hpp"
#include "d2s/projection.hpp"
#include "d2s/sparse_index.hpp"
#include "d2s/synth.hpp"
#include "d2s/train.hpp"

namespace {

using nlohmann::json;

void require_writable(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path)) {
        throw d2s::Error("refusing to overwrite " + path + " (pass --force)");
    }
}

void emit(const json& report) { std::cout << report.dump() << std::endl; }

// ---------------------------------------------------------------------------

struct SynthFlags {
    std::string out_dir;
    d2s::SynthConfig cfg;
    bool force = false;
};

int cmd_synth(const SynthFlags& flags) {
    std::filesystem::create_directories(flags.out_dir);
    const d2s::SynthPaths paths = d2s::SynthPaths::in_dir(flags.out_dir);
    for (const std::string& p : {paths.vocab, paths.captions, paths.caption_dense,
                                 paths.image_dense, paths.embeddings, paths.splits, paths.qrels}) {
        require_writable(p, flags.force);
    }
    d2s::RunManifest manifest("synth", {{"seed", flags.cfg.seed},
                                        {"images", flags.cfg.n_images},
                                        {"captions_per_image", flags.cfg.captions_per_image},
                                        {"dim", flags.cfg.dim},
                                        {"vocab", flags.cfg.vocab_size},
                                        {"caption_len", flags.cfg.caption_len},
                                        {"noise", flags.cfg.noise},
                                        {"topics", flags.cfg.n_topics},
                                        {"embedding_width", flags.cfg.embedding_width}});
    for (const std::string& p : {paths.vocab, paths.captions, paths.caption_dense,
                                 paths.image_dense, paths.embeddings, paths.splits, paths.qrels}) {
        manifest.record_output(p);
    }
    manifest.write_pending(flags.out_dir + "/manifest.json");

    d2s::SynthData data = d2s::synth_generate(flags.cfg);
    d2s::write_synth(data, paths);
    manifest.finalize();

    json report{{"out_dir", flags.out_dir}, {"files", json::object()}};
    for (const std::string& p : {paths.vocab, paths.captions, paths.caption_dense,
                                 paths.image_dense, paths.embeddings, paths.splits, paths.qrels}) {
        report["files"][std::filesystem::path(p).filename().string()] = d2s::file_digest(p);
    }
    emit(report);
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
    std::string vocab, captions, caption_dense, image_dense, splits, embeddings;
    std::string out, log;
    d2s::TrainConfig cfg;
    std::string expansion_mode = "controlled";
    std::string term_gating = "keep_always";
    bool force = false;
};

int cmd_train(TrainFlags flags) {
    flags.cfg.expansion_mode = d2s::expansion_mode_from_string(flags.expansion_mode);
    if (flags.term_gating == "keep_always") {
        flags.cfg.term_gating = d2s::TermGating::keep_always;
    } else if (flags.term_gating == "word_gated") {
        flags.cfg.term_gating = d2s::TermGating::word_gated;
    } else {
        throw d2s::ConfigError("unknown term gating \"" + flags.term_gating + "\"");
    }
    flags.cfg.validate();
    if (flags.cfg.select_best && flags.splits.empty()) {
        throw d2s::ConfigError("--select-best needs --splits with a valid split");
    }
    if (flags.log.empty()) {
        flags.log = flags.out + ".log.jsonl";
    }
    require_writable(flags.out, flags.force);
    require_writable(flags.log, flags.force);

    d2s::Vocabulary vocab = d2s::read_vocabulary(flags.vocab);
    flags.cfg.vocab_size = vocab.size();
    std::vector<d2s::Caption> captions = d2s::read_captions(flags.captions, vocab.size());
    d2s::DenseStore caption_dense = d2s::read_dense(flags.caption_dense);
    d2s::DenseStore image_dense = d2s::read_dense(flags.image_dense);

    d2s::Matrix embeddings;
    if (!flags.embeddings.empty()) {
        embeddings = d2s::read_embeddings(flags.embeddings).vectors;
        if (embeddings.rows != vocab.size()) {
            throw d2s::DataError("embedding table covers " + std::to_string(embeddings.rows) +
                                 " terms, vocabulary has " + std::to_string(vocab.size()));
        }
        if (embeddings.cols != flags.cfg.hidden_dim && flags.cfg.init_w2_from_embeddings) {
            throw d2s::ShapeError("embedding width " + std::to_string(embeddings.cols) +
                                  " must equal hidden width " +
                                  std::to_string(flags.cfg.hidden_dim) +
                                  " to seed the output layer");
        }
    } else if (flags.cfg.init_w2_from_embeddings) {
        throw d2s::ConfigError("--init-w2-from-embeddings needs --embeddings");
    }

    d2s::SplitManifest splits;
    d2s::Dataset train_ds, valid_ds;
    bool have_valid = false;
    if (!flags.splits.empty()) {
        splits = d2s::read_splits(flags.splits);
        train_ds = d2s::assemble_dataset(captions, caption_dense, image_dense, &splits, "train");
        valid_ds = d2s::assemble_dataset(captions, caption_dense, image_dense, &splits, "valid");
        have_valid = valid_ds.size() > 0;
    } else {
        train_ds = d2s::assemble_dataset(captions, caption_dense, image_dense);
    }

    d2s::RunManifest manifest(
        "train", {{"temperature", flags.cfg.temperature},
                  {"mix", flags.cfg.mix},
                  {"sparsity_weight", flags.cfg.sparsity_weight},
                  {"epochs", flags.cfg.epochs},
                  {"batch_size", flags.cfg.batch_size},
                  {"lr", flags.cfg.adam.lr},
                  {"seed", flags.cfg.seed},
                  {"expansion_mode", flags.expansion_mode},
                  {"term_gating", flags.term_gating},
                  {"hidden_dim", flags.cfg.hidden_dim},
                  {"normalize_dense", flags.cfg.normalize_dense},
                  {"hard_labels", flags.cfg.hard_labels},
                  {"select_best", flags.cfg.select_best},
                  {"train_pairs", train_ds.size()}});
    for (const std::string& p : {flags.vocab, flags.captions, flags.caption_dense,
                                 flags.image_dense}) {
        manifest.record_input(p);
    }
    if (!flags.splits.empty()) {
        manifest.record_input(flags.splits);
    }
    if (!flags.embeddings.empty()) {
        manifest.record_input(flags.embeddings);
    }
    manifest.record_output(flags.out);
    manifest.record_output(flags.log);
    manifest.write_pending(flags.out + ".manifest.json");

    std::ofstream log_stream(flags.log, std::ios::trunc);
    if (!log_stream) {
        throw d2s::Error("cannot open log for writing: " + flags.log);
    }
    d2s::TrainResult result =
        d2s::train(train_ds, flags.cfg, have_valid ? &valid_ds : nullptr, &log_stream,
                   flags.embeddings.empty() ? nullptr : &embeddings);
    d2s::save_checkpoint(result.params, flags.out);
    manifest.finalize();

    emit({{"checkpoint", flags.out},
          {"digest", d2s::file_digest(flags.out)},
          {"log", flags.log},
          {"epochs", result.log.size()},
          {"selected_epoch", result.selected_epoch},
          {"final_loss", result.log.back().loss}});
    return 0;
}

// ---------------------------------------------------------------------------

struct ProjectFlags {
    std::string checkpoint, dense, out;
    bool force = false;
};

int cmd_project(const ProjectFlags& flags) {
    require_writable(flags.out, flags.force);
    d2s::ProjectionParams params = d2s::load_checkpoint(flags.checkpoint);
    d2s::DenseStore store = d2s::read_dense(flags.dense);
    if (store.dim() != params.input_dim) {
        throw d2s::ShapeError("dense dimension " + std::to_string(store.dim()) +
                              " does not match checkpoint input dimension " +
                              std::to_string(params.input_dim));
    }
    d2s::RunManifest manifest("project", {{"checkpoint", flags.checkpoint},
                                          {"dense", flags.dense},
                                          {"count", store.count()}});
    manifest.record_input(flags.checkpoint);
    manifest.record_input(flags.dense);
    manifest.record_output(flags.out);
    manifest.write_pending(flags.out + ".manifest.json");

    d2s::SparseStore sparse;
    sparse.vocab_size = static_cast<std::uint32_t>(params.vocab_size);
    sparse.ids = store.ids;
    sparse.vectors.resize(store.count());
    // rows are independent; chunking only bounds the activation size
    const std::size_t chunk = 256;
    std::size_t total_nnz = 0;
    for (std::size_t start = 0; start < store.count(); start += chunk) {
        const std::size_t rows = std::min(chunk, store.count() - start);
        d2s::Matrix input(rows, store.dim());
        for (std::size_t i = 0; i < rows; ++i) {
            const double* src = store.vectors.row(start + i);
            std::copy(src, src + store.dim(), input.row(i));
        }
        d2s::Matrix output = d2s::project_forward(params, input);
        for (std::size_t i = 0; i < rows; ++i) {
            sparse.vectors[start + i] =
                d2s::sparsify(std::span<const double>(output.row(i), output.cols));
            total_nnz += sparse.vectors[start + i].nnz();
        }
    }
    d2s::write_sparse(sparse, flags.out);
    manifest.finalize();

    emit({{"out", flags.out},
          {"digest", d2s::file_digest(flags.out)},
          {"count", sparse.count()},
          {"mean_nnz", sparse.count() == 0
                           ? 0.0
                           : static_cast<double>(total_nnz) / static_cast<double>(sparse.count())}});
    return 0;
}

// ---------------------------------------------------------------------------

struct IndexFlags {
    std::string sparse, out;
    bool force = false;
};

int cmd_index(const IndexFlags& flags) {
    const std::string ids_path = flags.out + ".ids";
    require_writable(flags.out, flags.force);
    require_writable(ids_path, flags.force);
    d2s::SparseStore store = d2s::read_sparse(flags.sparse);

    d2s::RunManifest manifest("index", {{"sparse", flags.sparse}, {"docs", store.count()}});
    manifest.record_input(flags.sparse);
    manifest.record_output(flags.out);
    manifest.record_output(ids_path);
    manifest.write_pending(flags.out + ".manifest.json");

    d2s::InvertedIndex index = d2s::build_index(store.vectors, store.ids);
    d2s::save_index(index, flags.out);
    std::ostringstream ids_body;
    for (const auto& id : store.ids) {
        ids_body << id << '\n';
    }
    d2s::write_text_atomic(ids_body.str(), ids_path);
    manifest.finalize();

    emit({{"out", flags.out},
          {"digest", d2s::file_digest(flags.out)},
          {"docs", index.doc_count},
          {"postings", index.postings_count()}});
    return 0;
}

// ---------------------------------------------------------------------------

struct SearchFlags {
    std::string index, queries, out, doc_ids, captions;
    std::size_t k = 10;
    bool two_stage = false;
    std::size_t pool = 0;  // 0 = 10 * k
    bool oracle = false;
    bool force = false;
};

std::vector<std::string> read_id_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw d2s::FormatError(path + ": cannot open");
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        ids.push_back(line);
    }
    return ids;
}

int cmd_search(SearchFlags flags) {
    if (flags.k < 1) {
        throw d2s::ConfigError("-k must be >= 1");
    }
    if (flags.pool == 0) {
        flags.pool = 10 * flags.k;
    }
    if (flags.pool < flags.k) {
        throw d2s::ConfigError("--pool must be >= k");
    }
    if (flags.two_stage && flags.captions.empty()) {
        throw d2s::ConfigError("--two-stage needs --captions for the original term sets");
    }
    if (flags.doc_ids.empty()) {
        flags.doc_ids = flags.index + ".ids";
    }
    require_writable(flags.out, flags.force);

    d2s::InvertedIndex index = d2s::load_index(flags.index);
    d2s::SparseStore queries = d2s::read_sparse(flags.queries);
    if (queries.vocab_size != index.vocab_size) {
        throw d2s::ShapeError("query vocabulary " + std::to_string(queries.vocab_size) +
                              " does not match index " + std::to_string(index.vocab_size));
    }
    std::vector<std::string> doc_ids = read_id_lines(flags.doc_ids);
    if (doc_ids.size() < index.doc_count) {
        throw d2s::DataError("doc id list covers " + std::to_string(doc_ids.size()) +
                             " docs, index has " + std::to_string(index.doc_count));
    }

    // resolved before the parallel section so worker threads never throw
    std::vector<const std::vector<std::uint32_t>*> original_terms(queries.count(), nullptr);
    std::vector<d2s::Caption> captions;
    if (flags.two_stage) {
        captions = d2s::read_captions(flags.captions, index.vocab_size);
        std::unordered_map<std::string, const d2s::Caption*> caption_by_id;
        for (const auto& c : captions) {
            caption_by_id[c.id] = &c;
        }
        for (std::size_t q = 0; q < queries.count(); ++q) {
            auto it = caption_by_id.find(queries.ids[q]);
            if (it == caption_by_id.end()) {
                throw d2s::DataError("query \"" + queries.ids[q] +
                                     "\" has no caption entry for original terms");
            }
            original_terms[q] = &it->second->term_ids;
        }
    }

    std::vector<d2s::SparseVector> oracle_docs;
    if (flags.oracle) {
        // reconstruct the documents from the postings lists: iterating terms
        // in ascending order appends each doc's entries in ascending term
        // order, recovering the indexed vectors exactly
        oracle_docs.assign(index.doc_count, {});
        for (auto& d : oracle_docs) {
            d.dim = index.vocab_size;
        }
        for (std::uint32_t term = 0; term < index.vocab_size; ++term) {
            for (const d2s::Posting& p : index.postings[term]) {
                oracle_docs[p.doc_id].entries.push_back({term, p.weight});
            }
        }
    }

    d2s::RunManifest manifest("search", {{"index", flags.index},
                                         {"queries", flags.queries},
                                         {"k", flags.k},
                                         {"two_stage", flags.two_stage},
                                         {"pool", flags.pool},
                                         {"oracle", flags.oracle}});
    manifest.record_input(flags.index);
    manifest.record_input(flags.queries);
    manifest.record_output(flags.out);
    manifest.write_pending(flags.out + ".manifest.json");

    std::vector<d2s::RankedList> results(queries.count());
    std::uint64_t stage1_products = 0, stage2_products = 0;
    std::vector<d2s::TwoStageStats> stats(flags.two_stage ? queries.count() : 0);
    d2s::parallel_for(queries.count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t q = lo; q < hi; ++q) {
            const d2s::SparseVector& query = queries.vectors[q];
            if (flags.oracle) {
                results[q] = d2s::brute_force_search(oracle_docs, query, flags.k);
            } else if (flags.two_stage) {
                results[q] = d2s::search_two_stage(index, query, *original_terms[q], flags.k,
                                                   flags.pool, &stats[q]);
            } else {
                results[q] = d2s::search(index, query, flags.k);
            }
            results[q].query_id = queries.ids[q];
        }
    });
    for (const auto& s : stats) {
        stage1_products += s.stage1_products;
        stage2_products += s.stage2_products;
    }

    std::vector<d2s::RunLine> lines;
    for (std::size_t q = 0; q < results.size(); ++q) {
        for (std::size_t r = 0; r < results[q].entries.size(); ++r) {
            lines.push_back({queries.ids[q], doc_ids[results[q].entries[r].id],
                             static_cast<std::uint32_t>(r + 1), results[q].entries[r].score});
        }
    }
    d2s::write_run(lines, flags.out);
    manifest.finalize();

    json report{{"out", flags.out},
                {"digest", d2s::file_digest(flags.out)},
                {"queries", queries.count()},
                {"k", flags.k}};
    if (flags.two_stage) {
        report["stage1_products"] = stage1_products;
        report["stage2_products"] = stage2_products;
    }
    emit(report);
    return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateFlags {
    std::string run, qrels, dense_run;
    std::string sparse_captions, sparse_images;
    std::string captions, embeddings;
    std::string out;
    bool force = false;
};

int cmd_evaluate(const EvaluateFlags& flags) {
    d2s::Qrels qrels = d2s::read_qrels(flags.qrels);
    d2s::RunByQuery run = d2s::group_run(d2s::read_run(flags.run));

    json report;
    report["r_at_1"] = d2s::recall_at_k(run, qrels, 1);
    report["r_at_5"] = d2s::recall_at_k(run, qrels, 5);
    report["mrr_at_10"] = d2s::mrr_at_10(run, qrels);

    d2s::SparseStore sparse_captions, sparse_images;
    const bool have_sparse = !flags.sparse_captions.empty() && !flags.sparse_images.empty();
    if (have_sparse) {
        sparse_captions = d2s::read_sparse(flags.sparse_captions);
        sparse_images = d2s::read_sparse(flags.sparse_images);
        report["flops"] = d2s::flops(sparse_captions.vectors, sparse_images.vectors);
    }

    if (!flags.captions.empty() && !flags.sparse_captions.empty()) {
        if (!have_sparse) {
            sparse_captions = d2s::read_sparse(flags.sparse_captions);
        }
        std::vector<d2s::Caption> captions =
            d2s::read_captions(flags.captions, sparse_captions.vocab_size);
        std::unordered_map<std::string, const d2s::Caption*> by_id;
        for (const auto& c : captions) {
            by_id[c.id] = &c;
        }
        double exact_sum = 0.0;
        std::vector<const d2s::Caption*> aligned(sparse_captions.count());
        for (std::size_t i = 0; i < sparse_captions.count(); ++i) {
            auto it = by_id.find(sparse_captions.ids[i]);
            if (it == by_id.end()) {
                throw d2s::DataError("sparse caption \"" + sparse_captions.ids[i] +
                                     "\" has no caption entry");
            }
            aligned[i] = it->second;
            exact_sum += d2s::exact_at_k(it->second->term_ids, sparse_captions.vectors[i], 20);
        }
        report["exact_at_20"] = exact_sum / static_cast<double>(sparse_captions.count());

        if (!flags.embeddings.empty()) {
            d2s::StaticEmbeddingTable emb = d2s::read_embeddings(flags.embeddings);
            double semantic_sum = 0.0;
            for (std::size_t i = 0; i < sparse_captions.count(); ++i) {
                semantic_sum += d2s::semantic_at_k(aligned[i]->term_ids,
                                                   sparse_captions.vectors[i], 20, emb);
            }
            report["semantic_at_20"] = semantic_sum / static_cast<double>(sparse_captions.count());
        }
    }

    if (!flags.dense_run.empty()) {
        d2s::RunByQuery dense = d2s::group_run(d2s::read_run(flags.dense_run));
        const std::vector<double> d1 = d2s::per_query_recall_at_k(dense, qrels, 1);
        const std::vector<double> s1 = d2s::per_query_recall_at_k(run, qrels, 1);
        const std::vector<double> d5 = d2s::per_query_recall_at_k(dense, qrels, 5);
        const std::vector<double> s5 = d2s::per_query_recall_at_k(run, qrels, 5);
        const std::vector<double> dm = d2s::per_query_mrr_at_10(dense, qrels);
        const std::vector<double> sm = d2s::per_query_mrr_at_10(run, qrels);
        report["pearson_r1"] = d2s::pearson(d1, s1);
        report["pearson_r5"] = d2s::pearson(d5, s5);
        report["pearson_mrr10"] = d2s::pearson(dm, sm);

        double overlap_sum = 0.0;
        for (const auto& [query, relevant] : qrels.relevant) {
            auto dit = dense.find(query);
            auto sit = run.find(query);
            if (dit == dense.end() || sit == run.end()) {
                throw d2s::DataError("overlap: query \"" + query + "\" missing from a run");
            }
            std::unordered_set<std::string> top_dense;
            for (std::size_t i = 0; i < std::min<std::size_t>(10, dit->second.size()); ++i) {
                top_dense.insert(dit->second[i]);
            }
            std::size_t hits = 0;
            for (std::size_t i = 0; i < std::min<std::size_t>(10, sit->second.size()); ++i) {
                hits += top_dense.contains(sit->second[i]);
            }
            overlap_sum += static_cast<double>(hits) / 10.0;
        }
        report["mean_overlap_at_10"] =
            overlap_sum / static_cast<double>(qrels.relevant.size());
    }

    if (!flags.out.empty()) {
        require_writable(flags.out, flags.force);
        d2s::write_text_atomic(report.dump(2) + "\n", flags.out);
    }
    emit(report);
    return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckFlags {
    d2s::FdSuiteConfig cfg;
    double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckFlags& flags) {
    std::vector<d2s::FdCheckResult> results = d2s::run_fd_suite(flags.cfg);
    bool all_pass = true;
    json checks = json::array();
    for (const auto& r : results) {
        const bool pass = r.max_error <= flags.tolerance;
        all_pass = all_pass && pass;
        checks.push_back({{"name", r.name},
                          {"max_rel_error", r.max_error},
                          {"tolerance", flags.tolerance},
                          {"pass", pass}});
    }
    emit({{"checks", checks},
          {"seeds", flags.cfg.seeds},
          {"all_pass", all_pass}});
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense-to-sparse projection trainer and retrieval toolkit"};
    app.require_subcommand(1);

    SynthFlags synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a seeded synthetic corpus");
    synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
    synth_cmd->add_option("--seed", synth.cfg.seed, "generator seed");
    synth_cmd->add_option("--images", synth.cfg.n_images, "number of images");
    synth_cmd->add_option("--captions-per-image", synth.cfg.captions_per_image, "captions per image");
    synth_cmd->add_option("--dim", synth.cfg.dim, "dense vector dimension");
    synth_cmd->add_option("--vocab", synth.cfg.vocab_size, "vocabulary size");
    synth_cmd->add_option("--caption-len", synth.cfg.caption_len, "tokens per caption");
    synth_cmd->add_option("--noise", synth.cfg.noise, "caption vector perturbation");
    synth_cmd->add_option("--topics", synth.cfg.n_topics, "latent topic count");
    synth_cmd->add_option("--embedding-width", synth.cfg.embedding_width, "term embedding width");
    synth_cmd->add_flag("--force", synth.force, "overwrite existing outputs");

    TrainFlags train;
    CLI::App* train_cmd = app.add_subcommand("train", "train the projection head");
    train_cmd->add_option("--vocab", train.vocab, "vocabulary file")->required();
    train_cmd->add_option("--captions", train.captions, "tokenized captions (JSON lines)")->required();
    train_cmd->add_option("--caption-dense", train.caption_dense, "caption dense vectors")->required();
    train_cmd->add_option("--image-dense", train.image_dense, "image dense vectors")->required();
    train_cmd->add_option("--splits", train.splits, "split manifest (train on the train split)");
    train_cmd->add_option("--embeddings", train.embeddings, "term embedding table");
    train_cmd->add_option("--out", train.out, "checkpoint path")->required();
    train_cmd->add_option("--log", train.log, "epoch log path (default: <out>.log.jsonl)");
    train_cmd->add_option("--temperature", train.cfg.temperature, "dense softmax temperature");
    train_cmd->add_option("--mix", train.cfg.mix, "similarity/regularizer blend in [0,1]");
    train_cmd->add_option("--sparsity-weight", train.cfg.sparsity_weight, "L1 pressure");
    train_cmd->add_option("--epochs", train.cfg.epochs, "training epochs");
    train_cmd->add_option("--batch", train.cfg.batch_size, "batch size");
    train_cmd->add_option("--lr", train.cfg.adam.lr, "learning rate");
    train_cmd->add_option("--seed", train.cfg.seed, "training seed");
    train_cmd->add_option("--expansion-mode", train.expansion_mode,
                          "controlled | always_off | always_on | caption_only");
    train_cmd->add_option("--term-gating", train.term_gating, "keep_always | word_gated");
    train_cmd->add_option("--hidden", train.cfg.hidden_dim, "hidden width of the head");
    train_cmd->add_flag("--normalize-dense", train.cfg.normalize_dense,
                        "L2-normalize dense vectors before targets");
    train_cmd->add_flag("--hard-labels", train.cfg.hard_labels,
                        "diagonal targets instead of dense softmax");
    train_cmd->add_flag("--select-best", train.cfg.select_best,
                        "keep the epoch with best validation MRR@10");
    train_cmd->add_flag("--init-w2-from-embeddings", train.cfg.init_w2_from_embeddings,
                        "seed the output layer from the embedding table");
    train_cmd->add_flag("--force", train.force, "overwrite existing outputs");

    ProjectFlags project;
    CLI::App* project_cmd = app.add_subcommand("project", "encode dense vectors to sparse");
    project_cmd->add_option("--checkpoint", project.checkpoint, "trained head")->required();
    project_cmd->add_option("--dense", project.dense, "dense vectors to encode")->required();
    project_cmd->add_option("--out", project.out, "sparse vector output")->required();
    project_cmd->add_flag("--force", project.force, "overwrite existing outputs");

    IndexFlags index;
    CLI::App* index_cmd = app.add_subcommand("index", "build an inverted index");
    index_cmd->add_option("--sparse", index.sparse, "sparse vectors to index")->required();
    index_cmd->add_option("--out", index.out, "index output path")->required();
    index_cmd->add_flag("--force", index.force, "overwrite existing outputs");

    SearchFlags search;
    CLI::App* search_cmd = app.add_subcommand("search", "run top-k retrieval");
    search_cmd->add_option("--index", search.index, "inverted index")->required();
    search_cmd->add_option("--queries", search.queries, "sparse query vectors")->required();
    search_cmd->add_option("--out", search.out, "run file output")->required();
    search_cmd->add_option("-k,--k", search.k, "results per query");
    search_cmd->add_flag("--two-stage", search.two_stage,
                         "retrieve with original terms, rescore with the full query");
    search_cmd->add_option("--captions", search.captions,
                           "tokenized captions giving each query's original terms");
    search_cmd->add_option("--pool", search.pool, "two-stage candidate pool (default 10*k)");
    search_cmd->add_flag("--oracle", search.oracle, "full-scan scoring instead of the index");
    search_cmd->add_option("--doc-ids", search.doc_ids,
                           "doc id list (default: <index>.ids)");
    search_cmd->add_flag("--force", search.force, "overwrite existing outputs");

    EvaluateFlags evaluate;
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "score a run against judgments");
    evaluate_cmd->add_option("--run", evaluate.run, "run file to score")->required();
    evaluate_cmd->add_option("--qrels", evaluate.qrels, "relevance judgments")->required();
    evaluate_cmd->add_option("--dense-run", evaluate.dense_run,
                             "reference dense run for correlation and overlap");
    evaluate_cmd->add_option("--sparse-captions", evaluate.sparse_captions,
                             "encoded captions (for flops and term metrics)");
    evaluate_cmd->add_option("--sparse-images", evaluate.sparse_images,
                             "encoded images (for flops)");
    evaluate_cmd->add_option("--captions", evaluate.captions,
                             "tokenized captions (for term metrics)");
    evaluate_cmd->add_option("--embeddings", evaluate.embeddings,
                             "term embeddings (for semantic similarity)");
    evaluate_cmd->add_option("--out", evaluate.out, "also write the report here");
    evaluate_cmd->add_flag("--force", evaluate.force, "overwrite existing outputs");

    GradcheckFlags gradcheck;
    CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck_cmd->add_option("--dim", gradcheck.cfg.input_dim, "input dimension");
    gradcheck_cmd->add_option("--hidden", gradcheck.cfg.hidden_dim, "hidden width");
    gradcheck_cmd->add_option("--vocab", gradcheck.cfg.vocab_size, "vocabulary size");
    gradcheck_cmd->add_option("--batch", gradcheck.cfg.batch, "batch size");
    gradcheck_cmd->add_option("--seeds", gradcheck.cfg.seeds, "seeds per check");
    gradcheck_cmd->add_option("--tolerance", gradcheck.tolerance, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit 0; any parse failure is usage error
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth);
        if (train_cmd->parsed()) return cmd_train(train);
        if (project_cmd->parsed()) return cmd_project(project);
        if (index_cmd->parsed()) return cmd_index(index);
        if (search_cmd->parsed()) return cmd_search(search);
        if (evaluate_cmd->parsed()) return cmd_evaluate(evaluate);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck);
    } catch (const d2s::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
