#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "d2s/errors.hpp"
#include "d2s/io_util.hpp"
#include "d2s/matrix.hpp"
#include "d2s/metrics.hpp"
#include "d2s/sparse_vector.hpp"

namespace d2s {

// ---------------------------------------------------------------------------
// Vocabulary: plain text, one term per line, line number = term id.

struct Vocabulary {
    std::vector<std::string> terms;

    std::size_t size() const { return terms.size(); }
};

inline void write_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ostringstream body;
    for (const auto& t : vocab.terms) {
        body << t << '\n';
    }
    write_text_atomic(body.str(), path);
}

inline Vocabulary read_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    Vocabulary vocab;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!seen.insert(line).second) {
            throw FormatError(path + ": line " + std::to_string(line_no) + ": duplicate term \"" +
                              line + "\"");
        }
        vocab.terms.push_back(line);
    }
    return vocab;
}

// ---------------------------------------------------------------------------
// Dense vectors: f32 matrix with aligned string ids.

struct DenseStore {
    std::vector<std::string> ids;
    Matrix vectors;  // count x dim, f64 in memory, f32 on disk

    std::size_t count() const { return ids.size(); }
    std::size_t dim() const { return vectors.cols; }
};

inline void write_dense(const DenseStore& store, const std::string& path) {
    if (store.ids.size() != store.vectors.rows) {
        throw ShapeError("write_dense: " + std::to_string(store.ids.size()) + " ids for " +
                         std::to_string(store.vectors.rows) + " rows");
    }
    BinaryWriter w(path);
    w.write_magic("D2SD");
    w.write_u32(1);
    w.write_u32(static_cast<std::uint32_t>(store.count()));
    w.write_u32(static_cast<std::uint32_t>(store.dim()));
    for (const auto& id : store.ids) {
        w.write_id(id);
    }
    std::vector<float> row(store.dim());
    for (std::size_t i = 0; i < store.vectors.rows; ++i) {
        const double* src = store.vectors.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<float>(src[j]);
        }
        w.write_f32s(row.data(), row.size());
    }
    w.commit();
}

inline DenseStore read_dense(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("D2SD");
    r.expect_version(1);
    const std::uint32_t count = r.read_u32("count");
    const std::uint32_t dim = r.read_u32("dim");
    if (dim == 0) {
        throw FormatError(path + ": zero dimension");
    }
    DenseStore store;
    store.ids.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string id = r.read_id();
        if (!seen.insert(id).second) {
            throw FormatError(path + ": duplicate id \"" + id + "\"");
        }
        store.ids.push_back(std::move(id));
    }
    store.vectors = Matrix(count, dim);
    std::vector<float> row(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        r.read_f32s(row.data(), dim, "vector payload");
        double* dst = store.vectors.row(i);
        for (std::uint32_t j = 0; j < dim; ++j) {
            dst[j] = static_cast<double>(row[j]);
        }
    }
    if (!r.at_eof()) {
        throw FormatError(path + ": trailing bytes after payload");
    }
    return store;
}

// ---------------------------------------------------------------------------
// Tokenized captions: JSON lines {id, image_id, term_ids}.

struct Caption {
    std::string id;
    std::string image_id;
    std::vector<std::uint32_t> term_ids;  // order kept; duplicates permitted
};

// `known_images`, when non-null, makes unknown image references an error.
inline std::vector<Caption> read_captions(const std::string& path, std::size_t vocab_size,
                                          const std::unordered_set<std::string>* known_images =
                                              nullptr) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    std::vector<Caption> captions;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("image_id") ||
            !j.contains("term_ids") || !j["term_ids"].is_array()) {
            throw DataError(path + ": line " + std::to_string(line_no) +
                            ": expected {id, image_id, term_ids}");
        }
        Caption c;
        c.id = j["id"].get<std::string>();
        c.image_id = j["image_id"].get<std::string>();
        for (const auto& t : j["term_ids"]) {
            if (!t.is_number_unsigned()) {
                throw DataError(path + ": line " + std::to_string(line_no) +
                                ": term ids must be unsigned integers");
            }
            const std::uint64_t id = t.get<std::uint64_t>();
            if (id >= vocab_size) {
                throw DataError(path + ": line " + std::to_string(line_no) + ": term id " +
                                std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(vocab_size));
            }
            c.term_ids.push_back(static_cast<std::uint32_t>(id));
        }
        if (!seen.insert(c.id).second) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": duplicate caption id \"" +
                            c.id + "\"");
        }
        if (known_images != nullptr && !known_images->contains(c.image_id)) {
            throw DataError(path + ": line " + std::to_string(line_no) +
                            ": image id \"" + c.image_id + "\" not in the image collection");
        }
        captions.push_back(std::move(c));
    }
    return captions;
}

inline void write_captions(const std::vector<Caption>& captions, const std::string& path) {
    std::ostringstream body;
    for (const auto& c : captions) {
        nlohmann::json j;
        j["id"] = c.id;
        j["image_id"] = c.image_id;
        j["term_ids"] = c.term_ids;
        body << j.dump() << '\n';
    }
    write_text_atomic(body.str(), path);
}

// ---------------------------------------------------------------------------
// Sparse vectors with ids.

struct SparseStore {
    std::uint32_t vocab_size = 0;
    std::vector<std::string> ids;
    std::vector<SparseVector> vectors;

    std::size_t count() const { return ids.size(); }
};

inline void write_sparse(const SparseStore& store, const std::string& path) {
    if (store.ids.size() != store.vectors.size()) {
        throw ShapeError("write_sparse: " + std::to_string(store.ids.size()) + " ids for " +
                         std::to_string(store.vectors.size()) + " vectors");
    }
    BinaryWriter w(path);
    w.write_magic("D2SV");
    w.write_u32(1);
    w.write_u32(store.vocab_size);
    w.write_u32(static_cast<std::uint32_t>(store.count()));
    for (std::size_t i = 0; i < store.count(); ++i) {
        w.write_id(store.ids[i]);
        const auto& v = store.vectors[i];
        w.write_u32(static_cast<std::uint32_t>(v.nnz()));
        for (const auto& e : v.entries) {
            w.write_u32(e.term);
            w.write_f32(e.weight);
        }
    }
    w.commit();
}

inline SparseStore read_sparse(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("D2SV");
    r.expect_version(1);
    SparseStore store;
    store.vocab_size = r.read_u32("vocab size");
    const std::uint32_t count = r.read_u32("count");
    store.ids.reserve(count);
    store.vectors.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string id = r.read_id();
        if (!seen.insert(id).second) {
            throw FormatError(path + ": duplicate id \"" + id + "\"");
        }
        SparseVector v;
        v.dim = store.vocab_size;
        const std::uint32_t nnz = r.read_u32("nnz");
        v.entries.resize(nnz);
        std::int64_t prev = -1;
        for (std::uint32_t e = 0; e < nnz; ++e) {
            v.entries[e].term = r.read_u32("term id");
            v.entries[e].weight = r.read_f32("weight");
            if (v.entries[e].term >= store.vocab_size) {
                throw FormatError(path + ": vector \"" + id + "\": term id " +
                                  std::to_string(v.entries[e].term) +
                                  " outside vocabulary of size " +
                                  std::to_string(store.vocab_size));
            }
            if (static_cast<std::int64_t>(v.entries[e].term) <= prev) {
                throw FormatError(path + ": vector \"" + id +
                                  "\": term ids not strictly ascending");
            }
            prev = v.entries[e].term;
        }
        store.ids.push_back(std::move(id));
        store.vectors.push_back(std::move(v));
    }
    if (!r.at_eof()) {
        throw FormatError(path + ": trailing bytes after payload");
    }
    return store;
}

// ---------------------------------------------------------------------------
// Static term embeddings.

inline void write_embeddings(const Matrix& table, const std::string& path) {
    BinaryWriter w(path);
    w.write_magic("D2SE");
    w.write_u32(1);
    w.write_u32(static_cast<std::uint32_t>(table.rows));
    w.write_u32(static_cast<std::uint32_t>(table.cols));
    std::vector<float> row(table.cols);
    for (std::size_t i = 0; i < table.rows; ++i) {
        const double* src = table.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<float>(src[j]);
        }
        w.write_f32s(row.data(), row.size());
    }
    w.commit();
}

// Stored payload exactly as written, no normalization.
inline Matrix read_embeddings_raw(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("D2SE");
    r.expect_version(1);
    const std::uint32_t vocab = r.read_u32("vocab size");
    const std::uint32_t width = r.read_u32("width");
    if (width == 0) {
        throw FormatError(path + ": zero width");
    }
    Matrix raw(vocab, width);
    std::vector<float> row(width);
    for (std::uint32_t i = 0; i < vocab; ++i) {
        r.read_f32s(row.data(), width, "embedding payload");
        double* dst = raw.row(i);
        for (std::uint32_t j = 0; j < width; ++j) {
            dst[j] = static_cast<double>(row[j]);
        }
    }
    if (!r.at_eof()) {
        throw FormatError(path + ": trailing bytes after payload");
    }
    return raw;
}

// Rows are L2-normalized on load; a zero row is a data error.
inline StaticEmbeddingTable read_embeddings(const std::string& path) {
    return StaticEmbeddingTable::from_raw(read_embeddings_raw(path));
}

// ---------------------------------------------------------------------------
// Split manifest: {"images": {id: "train"|"valid"|"test"}, "captions": {...}}.

struct SplitManifest {
    std::map<std::string, std::string> images;
    std::map<std::string, std::string> captions;
};

inline void write_splits(const SplitManifest& splits, const std::string& path) {
    nlohmann::json j;
    j["images"] = splits.images;
    j["captions"] = splits.captions;
    write_text_atomic(j.dump(2) + "\n", path);
}

inline SplitManifest read_splits(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("images") || !j.contains("captions")) {
        throw FormatError(path + ": expected {images: {...}, captions: {...}}");
    }
    SplitManifest splits;
    for (const auto& [id, split] : j["images"].items()) {
        splits.images[id] = split.get<std::string>();
    }
    for (const auto& [id, split] : j["captions"].items()) {
        splits.captions[id] = split.get<std::string>();
    }
    for (const auto& m : {splits.images, splits.captions}) {
        for (const auto& [id, split] : m) {
            if (split != "train" && split != "valid" && split != "test") {
                throw FormatError(path + ": unknown split \"" + split + "\" for id \"" + id +
                                  "\"");
            }
        }
    }
    return splits;
}

// ---------------------------------------------------------------------------
// Relevance judgments, TREC style: "query_id 0 doc_id 1".

inline void write_qrels(const Qrels& qrels, const std::string& path) {
    std::ostringstream body;
    for (const auto& [query, docs] : qrels.relevant) {
        for (const auto& doc : docs) {
            body << query << " 0 " << doc << " 1\n";
        }
    }
    write_text_atomic(body.str(), path);
}

inline Qrels read_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string query, zero, doc, grade;
        if (!(fields >> query >> zero >> doc >> grade)) {
            throw FormatError(path + ": line " + std::to_string(line_no) +
                              ": expected \"query_id 0 doc_id grade\"");
        }
        if (grade != "0") {
            qrels.add(query, doc);
        }
    }
    return qrels;
}

// ---------------------------------------------------------------------------
// Dataset assembly: captions joined with both dense stores and a split tag.

struct Dataset {
    // parallel over captions
    std::vector<Caption> captions;
    std::vector<std::size_t> caption_row;  // row in caption dense store
    std::vector<std::size_t> image_row;    // row of the paired image in image dense store

    const DenseStore* caption_dense = nullptr;
    const DenseStore* image_dense = nullptr;

    std::size_t size() const { return captions.size(); }
};

// Joins captions with their dense rows, keeping only captions whose id is
// tagged with `split` (empty split keeps everything).
inline Dataset assemble_dataset(const std::vector<Caption>& captions,
                                const DenseStore& caption_dense, const DenseStore& image_dense,
                                const SplitManifest* splits = nullptr,
                                const std::string& split = "") {
    std::unordered_map<std::string, std::size_t> caption_rows, image_rows;
    for (std::size_t i = 0; i < caption_dense.ids.size(); ++i) {
        caption_rows[caption_dense.ids[i]] = i;
    }
    for (std::size_t i = 0; i < image_dense.ids.size(); ++i) {
        image_rows[image_dense.ids[i]] = i;
    }
    Dataset ds;
    ds.caption_dense = &caption_dense;
    ds.image_dense = &image_dense;
    for (const auto& c : captions) {
        if (splits != nullptr && !split.empty()) {
            auto it = splits->captions.find(c.id);
            if (it == splits->captions.end()) {
                throw DataError("assemble_dataset: caption \"" + c.id +
                                "\" missing from split manifest");
            }
            if (it->second != split) {
                continue;
            }
        }
        auto cit = caption_rows.find(c.id);
        if (cit == caption_rows.end()) {
            throw DataError("assemble_dataset: caption \"" + c.id + "\" has no dense vector");
        }
        auto iit = image_rows.find(c.image_id);
        if (iit == image_rows.end()) {
            throw DataError("assemble_dataset: image \"" + c.image_id + "\" has no dense vector");
        }
        ds.captions.push_back(c);
        ds.caption_row.push_back(cit->second);
        ds.image_row.push_back(iit->second);
    }
    return ds;
}

}  // namespace d2s
