#include "d2s/data_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "d2s/rng.hpp"
#include "d2s/sparse_index.hpp"
#include "d2s/synth.hpp"

using namespace d2s;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path);
    f << body;
}

// f32-representable values so disk narrowing is lossless
Matrix random_f32_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data) {
        v = static_cast<double>(static_cast<float>(rng.uniform(-2.0, 2.0)));
    }
    return m;
}

}  // namespace

TEST(VocabularyFile, RoundTrip) {
    Vocabulary vocab;
    vocab.terms = {"alpha", "beta", "gamma with spaces", ""};
    const std::string path = temp_path("d2s_vocab_rt.txt");
    write_vocabulary(vocab, path);
    Vocabulary back = read_vocabulary(path);
    EXPECT_EQ(back.terms, vocab.terms);
    std::filesystem::remove(path);
}

TEST(VocabularyFile, DuplicateTermNamesLine) {
    const std::string path = temp_path("d2s_vocab_dup.txt");
    write_text(path, "alpha\nbeta\nalpha\n");
    try {
        read_vocabulary(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
    EXPECT_THROW(read_vocabulary(temp_path("d2s_vocab_missing.txt")), FormatError);
}

TEST(DenseFile, RoundTripIsExact) {
    Rng rng(601);
    DenseStore store;
    store.ids = {"a", "b", "long-id-with-dashes"};
    store.vectors = random_f32_matrix(rng, 3, 7);
    const std::string path = temp_path("d2s_dense_rt.d2sd");
    write_dense(store, path);
    DenseStore back = read_dense(path);
    EXPECT_EQ(back.ids, store.ids);
    ASSERT_TRUE(back.vectors.same_shape(store.vectors));
    EXPECT_EQ(back.vectors.data, store.vectors.data);

    const std::string path2 = temp_path("d2s_dense_rt2.d2sd");
    write_dense(back, path2);
    EXPECT_EQ(slurp(path), slurp(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST(DenseFile, WideValuesNarrowToF32OnDisk) {
    DenseStore store;
    store.ids = {"a"};
    store.vectors = Matrix(1, 1);
    store.vectors.at(0, 0) = 0.1;  // not representable in f32
    const std::string path = temp_path("d2s_dense_narrow.d2sd");
    write_dense(store, path);
    DenseStore back = read_dense(path);
    EXPECT_EQ(back.vectors.at(0, 0), static_cast<double>(static_cast<float>(0.1)));
    std::filesystem::remove(path);
}

TEST(DenseFile, CorruptionsAreRejected) {
    Rng rng(602);
    DenseStore store;
    store.ids = {"a", "b"};
    store.vectors = random_f32_matrix(rng, 2, 3);
    const std::string path = temp_path("d2s_dense_bad.d2sd");

    write_dense(store, path);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.write("NOPE", 4);
    }
    EXPECT_THROW(read_dense(path), FormatError);

    write_dense(store, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    try {
        read_dense(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("vector payload"), std::string::npos) << e.what();
    }

    write_dense(store, path);
    {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.put('x');
    }
    try {
        read_dense(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos) << e.what();
    }

    store.ids = {"same", "same"};
    write_dense(store, path);
    EXPECT_THROW(read_dense(path), FormatError);
    std::filesystem::remove(path);

    DenseStore mismatched;
    mismatched.ids = {"a"};
    mismatched.vectors = Matrix(2, 3);
    EXPECT_THROW(write_dense(mismatched, path), ShapeError);
}

TEST(CaptionsFile, RoundTrip) {
    std::vector<Caption> captions = {
        {"c1", "img1", {0, 5, 5, 2}},  // duplicates and order preserved
        {"c2", "img1", {}},
        {"c3", "img2", {7}},
    };
    const std::string path = temp_path("d2s_captions_rt.jsonl");
    write_captions(captions, path);
    std::vector<Caption> back = read_captions(path, 8);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].id, captions[i].id);
        EXPECT_EQ(back[i].image_id, captions[i].image_id);
        EXPECT_EQ(back[i].term_ids, captions[i].term_ids);
    }
    std::filesystem::remove(path);
}

TEST(CaptionsFile, ErrorsNameTheLine) {
    const std::string path = temp_path("d2s_captions_bad.jsonl");

    write_text(path, R"({"id":"c1","image_id":"i1","term_ids":[0]})" "\n" "not json\n");
    try {
        read_captions(path, 5);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }

    write_text(path, R"({"id":"c1","term_ids":[0]})" "\n");
    EXPECT_THROW(read_captions(path, 5), DataError);  // image_id missing

    write_text(path, R"({"id":"c1","image_id":"i1","term_ids":[-3]})" "\n");
    EXPECT_THROW(read_captions(path, 5), DataError);

    write_text(path, R"({"id":"c1","image_id":"i1","term_ids":[5]})" "\n");
    try {
        read_captions(path, 5);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("term id 5"), std::string::npos) << e.what();
    }

    write_text(path,
               R"({"id":"c1","image_id":"i1","term_ids":[0]})" "\n"
               R"({"id":"c1","image_id":"i2","term_ids":[1]})" "\n");
    try {
        read_captions(path, 5);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate caption id"), std::string::npos)
            << e.what();
    }
    std::filesystem::remove(path);
}

TEST(CaptionsFile, UnknownImageRejectedWhenCollectionGiven) {
    const std::string path = temp_path("d2s_captions_img.jsonl");
    write_text(path, R"({"id":"c1","image_id":"ghost","term_ids":[0]})" "\n");
    std::unordered_set<std::string> known = {"i1", "i2"};
    EXPECT_THROW(read_captions(path, 5, &known), DataError);
    known.insert("ghost");
    EXPECT_EQ(read_captions(path, 5, &known).size(), 1u);
    std::filesystem::remove(path);
}

TEST(CaptionsFile, BlankLinesAreSkipped) {
    const std::string path = temp_path("d2s_captions_blank.jsonl");
    write_text(path, "\n" R"({"id":"c1","image_id":"i1","term_ids":[]})" "\n\n");
    EXPECT_EQ(read_captions(path, 5).size(), 1u);
    std::filesystem::remove(path);
}

TEST(SparseFile, RoundTripIsExact) {
    SparseStore store;
    store.vocab_size = 10;
    store.ids = {"a", "b", "empty"};
    store.vectors.resize(3);
    for (auto& v : store.vectors) {
        v.dim = 10;
    }
    store.vectors[0].entries = {{0, 0.5f}, {3, 1.25f}, {9, 2.0f}};
    store.vectors[1].entries = {{7, 0.125f}};
    const std::string path = temp_path("d2s_sparse_rt.d2sv");
    write_sparse(store, path);
    SparseStore back = read_sparse(path);
    EXPECT_EQ(back.vocab_size, store.vocab_size);
    EXPECT_EQ(back.ids, store.ids);
    ASSERT_EQ(back.vectors.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.vectors[i], store.vectors[i]);
    }
    const std::string path2 = temp_path("d2s_sparse_rt2.d2sv");
    write_sparse(back, path2);
    EXPECT_EQ(slurp(path), slurp(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST(SparseFile, OrderingAndRangeAreEnforced) {
    SparseStore store;
    store.vocab_size = 10;
    store.ids = {"bad"};
    store.vectors.resize(1);
    store.vectors[0].dim = 10;
    store.vectors[0].entries = {{5, 1.0f}, {2, 1.0f}};  // descending
    const std::string path = temp_path("d2s_sparse_order.d2sv");
    write_sparse(store, path);
    try {
        read_sparse(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("ascending"), std::string::npos) << e.what();
    }

    store.vectors[0].entries = {{12, 1.0f}};  // out of vocabulary
    write_sparse(store, path);
    try {
        read_sparse(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("outside vocabulary"), std::string::npos)
            << e.what();
    }

    store.vectors[0].entries = {{2, 1.0f}, {2, 2.0f}};  // duplicate term
    write_sparse(store, path);
    EXPECT_THROW(read_sparse(path), FormatError);
    std::filesystem::remove(path);
}

TEST(SparseFile, TruncationAndTrailingBytesRejected) {
    SparseStore store;
    store.vocab_size = 4;
    store.ids = {"a"};
    store.vectors.resize(1);
    store.vectors[0].dim = 4;
    store.vectors[0].entries = {{1, 1.0f}};
    const std::string path = temp_path("d2s_sparse_trunc.d2sv");
    write_sparse(store, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 2);
    EXPECT_THROW(read_sparse(path), FormatError);

    write_sparse(store, path);
    {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.put('x');
    }
    try {
        read_sparse(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
}

TEST(EmbeddingsFile, RowsComeBackUnitNorm) {
    Rng rng(603);
    Matrix raw = random_f32_matrix(rng, 5, 6);
    const std::string path = temp_path("d2s_emb_rt.d2se");
    write_embeddings(raw, path);
    StaticEmbeddingTable table = read_embeddings(path);
    ASSERT_EQ(table.vectors.rows, 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            norm_sq += table.vectors.at(i, j) * table.vectors.at(i, j);
        }
        EXPECT_NEAR(norm_sq, 1.0, 1e-12);
        EXPECT_NEAR(table.cosine(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i)),
                    1.0, 1e-12);
    }
    std::filesystem::remove(path);
}

TEST(EmbeddingsFile, ZeroRowIsRejectedOnLoad) {
    Matrix raw(2, 3);
    raw.at(0, 0) = 1.0;  // row 1 stays zero
    const std::string path = temp_path("d2s_emb_zero.d2se");
    write_embeddings(raw, path);
    EXPECT_THROW(read_embeddings(path), DataError);
    std::filesystem::remove(path);
}

TEST(SplitsFile, RoundTrip) {
    SplitManifest splits;
    splits.images = {{"i1", "train"}, {"i2", "valid"}, {"i3", "test"}};
    splits.captions = {{"c1", "train"}, {"c2", "valid"}};
    const std::string path = temp_path("d2s_splits_rt.json");
    write_splits(splits, path);
    SplitManifest back = read_splits(path);
    EXPECT_EQ(back.images, splits.images);
    EXPECT_EQ(back.captions, splits.captions);
    std::filesystem::remove(path);
}

TEST(SplitsFile, BadContentRejected) {
    const std::string path = temp_path("d2s_splits_bad.json");
    write_text(path, "{\"images\": {\"i1\": \"holdout\"}, \"captions\": {}}");
    try {
        read_splits(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("holdout"), std::string::npos) << e.what();
    }
    write_text(path, "{\"images\": {}}");
    EXPECT_THROW(read_splits(path), FormatError);
    write_text(path, "not json at all");
    EXPECT_THROW(read_splits(path), FormatError);
    std::filesystem::remove(path);
}

TEST(QrelsFile, RoundTripAndGradeFiltering) {
    Qrels qrels;
    qrels.add("q1", "d1");
    qrels.add("q1", "d2");
    qrels.add("q2", "d9");
    const std::string path = temp_path("d2s_qrels_rt.txt");
    write_qrels(qrels, path);
    Qrels back = read_qrels(path);
    EXPECT_EQ(back.relevant, qrels.relevant);

    write_text(path, "q1 0 d1 1\nq1 0 d2 0\n");  // grade 0 means not relevant
    back = read_qrels(path);
    ASSERT_EQ(back.relevant.size(), 1u);
    EXPECT_EQ(back.relevant["q1"], (std::set<std::string>{"d1"}));

    write_text(path, "q1 0 d1\n");
    try {
        read_qrels(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
}

TEST(AssembleDataset, JoinsRowsAndFiltersBySplit) {
    std::vector<Caption> captions = {
        {"c1", "i1", {0}}, {"c2", "i2", {1}}, {"c3", "i1", {2}},
    };
    DenseStore cd;
    cd.ids = {"c3", "c1", "c2"};  // scrambled on purpose
    cd.vectors = Matrix(3, 2, 1.0);
    DenseStore id_store;
    id_store.ids = {"i2", "i1"};
    id_store.vectors = Matrix(2, 2, 1.0);

    Dataset all = assemble_dataset(captions, cd, id_store);
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all.caption_row[0], 1u);  // c1 lives at dense row 1
    EXPECT_EQ(all.image_row[0], 1u);    // i1 lives at dense row 1
    EXPECT_EQ(all.caption_row[1], 2u);
    EXPECT_EQ(all.image_row[1], 0u);

    SplitManifest splits;
    splits.captions = {{"c1", "train"}, {"c2", "test"}, {"c3", "train"}};
    Dataset train = assemble_dataset(captions, cd, id_store, &splits, "train");
    ASSERT_EQ(train.size(), 2u);
    EXPECT_EQ(train.captions[0].id, "c1");
    EXPECT_EQ(train.captions[1].id, "c3");

    splits.captions.erase("c2");
    EXPECT_THROW(assemble_dataset(captions, cd, id_store, &splits, "test"), DataError);

    std::vector<Caption> orphan = {{"cX", "i1", {0}}};
    EXPECT_THROW(assemble_dataset(orphan, cd, id_store), DataError);
    std::vector<Caption> ghost_image = {{"c1", "iX", {0}}};
    EXPECT_THROW(assemble_dataset(ghost_image, cd, id_store), DataError);
}

TEST(Synth, SameSeedWritesIdenticalBytes) {
    SynthConfig cfg;
    cfg.seed = 42;
    cfg.n_images = 40;
    cfg.captions_per_image = 2;
    cfg.dim = 24;
    cfg.vocab_size = 120;
    cfg.n_topics = 8;
    const auto base = std::filesystem::temp_directory_path() / "d2s_synth_det";
    std::filesystem::create_directories(base / "a");
    std::filesystem::create_directories(base / "b");
    write_synth(synth_generate(cfg), SynthPaths::in_dir((base / "a").string()));
    write_synth(synth_generate(cfg), SynthPaths::in_dir((base / "b").string()));
    for (const char* name : {"vocab.txt", "captions.jsonl", "captions_dense.d2sd",
                             "images_dense.d2sd", "embeddings.d2se", "splits.json", "qrels.txt"}) {
        EXPECT_EQ(slurp((base / "a" / name).string()), slurp((base / "b" / name).string()))
            << name;
    }
    // a different seed must actually change the data
    cfg.seed = 43;
    write_synth(synth_generate(cfg), SynthPaths::in_dir((base / "b").string()));
    EXPECT_NE(slurp((base / "a" / "captions.jsonl").string()),
              slurp((base / "b" / "captions.jsonl").string()));
    std::filesystem::remove_all(base);
}

TEST(Synth, StructureIsConsistent) {
    SynthConfig cfg;
    cfg.seed = 9;
    cfg.n_images = 50;
    cfg.captions_per_image = 3;
    cfg.dim = 20;
    cfg.vocab_size = 90;
    cfg.n_topics = 5;
    SynthData data = synth_generate(cfg);

    EXPECT_EQ(data.vocab.size(), 90u);
    EXPECT_EQ(data.image_dense.count(), 50u);
    EXPECT_EQ(data.caption_dense.count(), 150u);
    EXPECT_EQ(data.captions.size(), 150u);

    // splits: floor(0.8*50)=40 train, floor(0.1*50)=5 valid, rest test
    std::map<std::string, int> image_counts;
    for (const auto& [id, tag] : data.splits.images) {
        ++image_counts[tag];
    }
    EXPECT_EQ(image_counts["train"], 40);
    EXPECT_EQ(image_counts["valid"], 5);
    EXPECT_EQ(image_counts["test"], 5);

    for (const auto& cap : data.captions) {
        // captions inherit their image's split and judge exactly that image
        EXPECT_EQ(data.splits.captions.at(cap.id), data.splits.images.at(cap.image_id));
        EXPECT_EQ(data.qrels.relevant.at(cap.id), (std::set<std::string>{cap.image_id}));
        EXPECT_EQ(cap.term_ids.size(), cfg.caption_len);
        for (std::uint32_t t : cap.term_ids) {
            EXPECT_LT(t, cfg.vocab_size);
        }
    }

    // dense rows are unit vectors
    for (std::size_t i = 0; i < data.image_dense.vectors.rows; ++i) {
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            norm_sq += data.image_dense.vectors.at(i, j) * data.image_dense.vectors.at(i, j);
        }
        EXPECT_NEAR(norm_sq, 1.0, 1e-12);
    }
}

TEST(Synth, ZeroNoiseMakesCaptionVectorsMatchTheirImage) {
    SynthConfig cfg;
    cfg.seed = 21;
    cfg.n_images = 60;
    cfg.captions_per_image = 3;
    cfg.dim = 20;
    cfg.vocab_size = 80;
    cfg.n_topics = 8;
    cfg.noise = 0.0;
    SynthData data = synth_generate(cfg);

    std::unordered_map<std::string, std::size_t> image_row;
    for (std::size_t i = 0; i < data.image_dense.ids.size(); ++i) {
        image_row[data.image_dense.ids[i]] = i;
    }
    for (std::size_t c = 0; c < data.captions.size(); ++c) {
        const double* zc = data.caption_dense.vectors.row(c);
        const double* zi = data.image_dense.vectors.row(image_row[data.captions[c].image_id]);
        double dot = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            dot += zc[j] * zi[j];
        }
        // perfect copy up to normalization round-off
        EXPECT_NEAR(dot, 1.0, 1e-12);

        // the paired image scores a perfect cosine, so whatever wins top-1
        // must score 1 as well (distinct images can share an identical
        // single-topic mixture and win the tie on a lower ordinal)
        std::vector<double> q(zc, zc + cfg.dim);
        RankedList top = dense_search(data.image_dense.vectors, q, 1);
        EXPECT_NEAR(top.entries[0].score, 1.0, 1e-12);
    }
}

TEST(Synth, InvalidConfigsThrow) {
    SynthConfig cfg;
    cfg.dim = 8;
    cfg.n_topics = 16;
    EXPECT_THROW(synth_generate(cfg), ConfigError);
    cfg = {};
    cfg.n_images = 0;
    EXPECT_THROW(synth_generate(cfg), ConfigError);
    cfg = {};
    cfg.noise = -0.1;
    EXPECT_THROW(synth_generate(cfg), ConfigError);
    cfg = {};
    cfg.train_fraction = 0.9;
    cfg.valid_fraction = 0.2;
    EXPECT_THROW(synth_generate(cfg), ConfigError);
    cfg = {};
    cfg.vocab_size = 10;
    cfg.n_topics = 16;
    EXPECT_THROW(synth_generate(cfg), ConfigError);
}
