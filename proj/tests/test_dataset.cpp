#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "asl/dataset.hpp"
#include "asl/image_io.hpp"

using namespace asl;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_config(std::uint64_t seed = 1) {
    SyntheticConfig c;
    c.num_classes = 12;
    c.samples_per_class = 6;
    c.attr_count = 9;
    c.image_size = 12;
    c.seed = seed;
    return c;
}

double cell_mean(const Tensor& img, int attr, int attr_count, int size) {
    int grid = 1;
    while (grid * grid < attr_count) ++grid;
    const int row = attr / grid, col = attr % grid;
    const int y0 = row * size / grid, y1 = (row + 1) * size / grid;
    const int x0 = col * size / grid, x1 = (col + 1) * size / grid;
    double total = 0.0;
    int n = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                total += img.data()[(static_cast<std::size_t>(y) * size + x) * 3 + ch];
                ++n;
            }
    return total / n;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("synthetic corpus has the declared dimensions") {
    Corpus corpus = generate_synthetic(small_config());
    CHECK(corpus.num_classes == 12);
    CHECK(corpus.samples.size() == 12u * 6u);
    CHECK(corpus.attr_count == 9);
    for (const auto& s : corpus.samples) {
        CHECK(s.image.shape() == std::vector<int>{12, 12, 3});
        CHECK(s.attributes.size() == 9u);
        for (double v : s.attributes) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : s.image.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    for (int c = 0; c < corpus.num_classes; ++c)
        CHECK(corpus.by_class[static_cast<std::size_t>(c)].size() == 6u);
}

TEST_CASE("per-image attributes stay within the jitter bound of the prototype") {
    SyntheticConfig cfg = small_config(3);
    cfg.attribute_jitter = 0.3;
    Corpus corpus = generate_synthetic(cfg);
    for (const auto& s : corpus.samples) {
        const auto& proto = corpus.class_prototypes[static_cast<std::size_t>(s.label)];
        for (int a = 0; a < cfg.attr_count; ++a)
            CHECK(std::abs(s.attributes[static_cast<std::size_t>(a)] -
                           proto[static_cast<std::size_t>(a)]) <= cfg.attribute_jitter);
    }
}

TEST_CASE("active attribute cells are brighter than inactive ones on average") {
    SyntheticConfig cfg = small_config(7);
    cfg.samples_per_class = 12;
    Corpus corpus = generate_synthetic(cfg);
    // average cell intensity over all samples, conditioned on the class
    // prototype bit for that cell
    double on_sum = 0.0, off_sum = 0.0;
    long on_n = 0, off_n = 0;
    for (const auto& s : corpus.samples) {
        const auto& proto = corpus.class_prototypes[static_cast<std::size_t>(s.label)];
        for (int a = 0; a < cfg.attr_count; ++a) {
            const double m = cell_mean(s.image, a, cfg.attr_count, cfg.image_size);
            if (proto[static_cast<std::size_t>(a)] > 0.5) {
                on_sum += m;
                ++on_n;
            } else {
                off_sum += m;
                ++off_n;
            }
        }
    }
    REQUIRE(on_n > 0);
    REQUIRE(off_n > 0);
    CHECK(on_sum / on_n > off_sum / off_n + 0.05);
}

TEST_CASE("generation is byte-identical for a fixed seed") {
    Corpus a = generate_synthetic(small_config(31));
    Corpus b = generate_synthetic(small_config(31));
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].image.data() == b.samples[i].image.data());
        CHECK(a.samples[i].attributes == b.samples[i].attributes);
        CHECK(a.samples[i].label == b.samples[i].label);
    }
    Corpus c = generate_synthetic(small_config(32));
    CHECK(a.samples[0].image.data() != c.samples[0].image.data());
}

TEST_CASE("default-size corpus has pairwise-distinct class prototypes") {
    SyntheticConfig cfg;  // 20 classes, 16 attributes
    cfg.samples_per_class = 1;
    Corpus corpus = generate_synthetic(cfg);
    std::set<std::vector<double>> distinct(corpus.class_prototypes.begin(),
                                           corpus.class_prototypes.end());
    CHECK(distinct.size() == 20u);
    for (const auto& proto : corpus.class_prototypes)
        for (double v : proto) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("generator rejects invalid configurations") {
    SyntheticConfig cfg = small_config();
    cfg.attr_count = 3;
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.num_classes = 5;
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.num_classes = 12;
    cfg.attr_count = 4;  // wants 12 distinct prototypes out of 16, fine
    CHECK_NOTHROW(generate_synthetic(cfg));
    cfg.num_classes = 20;
    cfg.attr_count = 4;  // 2^4 < 20
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.image_size = 13;
    CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("write_corpus then load_manifest round trips the corpus") {
    TempDir dir("asl_dataset_roundtrip");
    SyntheticConfig cfg = small_config(5);
    Corpus corpus = generate_synthetic(cfg);
    write_corpus(corpus, dir.path.string());
    Corpus loaded = load_manifest((dir.path / "manifest.csv").string(),
                                  (dir.path / "attributes.txt").string());
    CHECK(loaded.num_classes == corpus.num_classes);
    CHECK(loaded.attr_count == corpus.attr_count);
    CHECK(loaded.image_size == corpus.image_size);
    REQUIRE(loaded.samples.size() == corpus.samples.size());
    // images went through 8-bit quantization, so compare at half a bin
    for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
        CHECK(loaded.samples[i].label == corpus.samples[i].label);
        for (std::size_t p = 0; p < loaded.samples[i].image.data().size(); ++p)
            CHECK(loaded.samples[i].image.data()[p] ==
                  doctest::Approx(corpus.samples[i].image.data()[p]).epsilon(0.5 / 255.0 + 1e-9));
        // loaded attributes are the class prototype, exact under MAX 1
        CHECK(loaded.samples[i].attributes ==
              corpus.class_prototypes[static_cast<std::size_t>(corpus.samples[i].label)]);
    }
}

TEST_CASE("attribute loader rescales raw values by the declared maximum") {
    TempDir dir("asl_dataset_rescale");
    // one 4x4 gray image, two classes
    Tensor img = Tensor::full({4, 4, 3}, 0.5);
    write_ppm((dir.path / "a.ppm").string(), img);
    write_ppm((dir.path / "b.ppm").string(), img);
    {
        std::ofstream m(dir.path / "manifest.csv");
        m << "path,class_id\na.ppm,3\nb.ppm,7\n";
        std::ofstream a(dir.path / "attrs.txt");
        a << "A 3 MAX 4\n3 0 2 4\n7 1 3 4\n";
    }
    Corpus corpus = load_manifest((dir.path / "manifest.csv").string(),
                                  (dir.path / "attrs.txt").string());
    CHECK(corpus.num_classes == 2);
    // class ids 3 and 7 remap to labels 0 and 1 in sorted order
    CHECK(corpus.samples[0].label == 0);
    CHECK(corpus.samples[1].label == 1);
    CHECK(corpus.samples[0].attributes == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(corpus.samples[1].attributes == std::vector<double>{0.25, 0.75, 1.0});
}

TEST_CASE("manifest and attribute loader reject malformed input") {
    TempDir dir("asl_dataset_malformed");
    Tensor img = Tensor::full({4, 4, 3}, 0.5);
    write_ppm((dir.path / "a.ppm").string(), img);

    auto write_files = [&](const std::string& manifest, const std::string& attrs) {
        std::ofstream m(dir.path / "manifest.csv");
        m << manifest;
        std::ofstream a(dir.path / "attrs.txt");
        a << attrs;
    };
    auto load = [&]() {
        return load_manifest((dir.path / "manifest.csv").string(),
                             (dir.path / "attrs.txt").string());
    };

    write_files("path,class_id\na.ppm,0\n", "A 2 MAX 1\n0 0 1\n");
    CHECK_NOTHROW(load());

    // bad attribute header
    write_files("path,class_id\na.ppm,0\n", "B 2 MAX 1\n0 0 1\n");
    CHECK_THROWS(load());
    // wrong row length
    write_files("path,class_id\na.ppm,0\n", "A 2 MAX 1\n0 0 1 1\n");
    CHECK_THROWS(load());
    // value above MAX
    write_files("path,class_id\na.ppm,0\n", "A 2 MAX 1\n0 0 2\n");
    CHECK_THROWS(load());
    // bad manifest header
    write_files("file,label\na.ppm,0\n", "A 2 MAX 1\n0 0 1\n");
    CHECK_THROWS(load());
    // missing image file
    write_files("path,class_id\nmissing.ppm,0\n", "A 2 MAX 1\n0 0 1\n");
    CHECK_THROWS(load());
    // class with no attribute row
    write_files("path,class_id\na.ppm,5\n", "A 2 MAX 1\n0 0 1\n");
    CHECK_THROWS(load());
}

TEST_CASE("episode invariants hold across many samples") {
    Corpus corpus = generate_synthetic(small_config(9));
    CorpusSplit split = make_split(corpus, 8);
    CHECK(split.train_classes.size() == 8u);
    CHECK(split.test_classes.size() == 4u);

    Rng rng(77);
    for (int t = 0; t < 200; ++t) {
        Episode ep = sample_episode(corpus, split.train_classes, 5, 1, 3, rng);
        CHECK(ep.class_map.size() == 5u);
        std::set<int> classes(ep.class_map.begin(), ep.class_map.end());
        CHECK(classes.size() == 5u);  // no repeated category
        for (int c : ep.class_map)
            CHECK(std::count(split.train_classes.begin(), split.train_classes.end(), c) == 1);

        CHECK(ep.support_indices.size() == 5u);
        CHECK(ep.query_indices.size() == 15u);
        std::set<int> used(ep.support_indices.begin(), ep.support_indices.end());
        for (int qi : ep.query_indices) {
            CHECK(used.count(qi) == 0);  // support and query are disjoint
            used.insert(qi);
        }
        CHECK(used.size() == 20u);  // no sample appears twice
        for (std::size_t i = 0; i < ep.support_indices.size(); ++i)
            CHECK(corpus.samples[static_cast<std::size_t>(ep.support_indices[i])].label ==
                  ep.class_map[static_cast<std::size_t>(ep.support_labels[i])]);
        for (std::size_t i = 0; i < ep.query_indices.size(); ++i)
            CHECK(corpus.samples[static_cast<std::size_t>(ep.query_indices[i])].label ==
                  ep.class_map[static_cast<std::size_t>(ep.query_labels[i])]);
    }
}

TEST_CASE("episode sampling covers every category over many draws") {
    Corpus corpus = generate_synthetic(small_config(10));
    std::vector<int> all_classes;
    for (int c = 0; c < corpus.num_classes; ++c) all_classes.push_back(c);
    Rng rng(123);
    std::set<int> seen;
    for (int t = 0; t < 500; ++t) {
        Episode ep = sample_episode(corpus, all_classes, 5, 1, 1, rng);
        seen.insert(ep.class_map.begin(), ep.class_map.end());
    }
    CHECK(static_cast<int>(seen.size()) == corpus.num_classes);
}

TEST_CASE("episode sampling with a fixed rng state is reproducible") {
    Corpus corpus = generate_synthetic(small_config(11));
    std::vector<int> classes = {0, 1, 2, 3, 4, 5, 6, 7};
    Rng r1(55), r2(55);
    for (int t = 0; t < 20; ++t) {
        Episode a = sample_episode(corpus, classes, 5, 2, 3, r1);
        Episode b = sample_episode(corpus, classes, 5, 2, 3, r2);
        CHECK(a.class_map == b.class_map);
        CHECK(a.support_indices == b.support_indices);
        CHECK(a.query_indices == b.query_indices);
    }
}

TEST_CASE("N equal to the category count yields a pure permutation") {
    Corpus corpus = generate_synthetic(small_config(12));
    std::vector<int> classes = {2, 4, 6, 8, 10};
    Rng rng(9);
    Episode ep = sample_episode(corpus, classes, 5, 1, 1, rng);
    std::set<int> chosen(ep.class_map.begin(), ep.class_map.end());
    CHECK(chosen == std::set<int>(classes.begin(), classes.end()));
}

TEST_CASE("episode sampling rejects impossible requests") {
    Corpus corpus = generate_synthetic(small_config(13));
    std::vector<int> classes = {0, 1, 2};
    Rng rng(1);
    CHECK_THROWS(sample_episode(corpus, classes, 5, 1, 1, rng));           // too few categories
    CHECK_THROWS(sample_episode(corpus, classes, 3, 4, 3, rng));           // M + q > per-class
    CHECK_THROWS_AS(sample_episode(corpus, classes, 1, 1, 1, rng),
                    std::invalid_argument);                                 // N < 2
    CHECK_THROWS_AS(make_split(corpus, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_split(corpus, 99), std::invalid_argument);
}

}  // TEST_SUITE
