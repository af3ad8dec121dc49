#include "asl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "asl/image_io.hpp"

namespace asl {

namespace {

namespace fs = std::filesystem;

void index_by_class(Corpus& corpus) {
    corpus.by_class.assign(static_cast<std::size_t>(corpus.num_classes), {});
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
        corpus.by_class[static_cast<std::size_t>(corpus.samples[i].label)]
            .push_back(static_cast<int>(i));
}

}  // namespace

Corpus generate_synthetic(const SyntheticConfig& config) {
    if (config.attr_count < 4)
        throw std::invalid_argument("synthetic corpus needs at least 4 attributes");
    if (config.num_classes < 10)
        throw std::invalid_argument("synthetic corpus needs at least 10 classes");
    if (config.attr_count < 63 &&
        (1LL << config.attr_count) < static_cast<long long>(config.num_classes))
        throw std::invalid_argument(
            "attribute budget too small for distinct class prototypes");
    if (config.image_size < 4 || config.image_size % 4 != 0)
        throw std::invalid_argument("synthetic image size must be a positive multiple of 4");

    Corpus corpus;
    corpus.attr_count = config.attr_count;
    corpus.image_size = config.image_size;
    corpus.num_classes = config.num_classes;

    // distinct binary prototype per class
    Rng proto_rng(mix_seed(config.seed, 1));
    std::set<std::vector<double>> seen;
    for (int c = 0; c < config.num_classes; ++c) {
        std::vector<double> proto(static_cast<std::size_t>(config.attr_count));
        int attempts = 0;
        do {
            if (++attempts > 100000)
                throw std::invalid_argument(
                    "attribute budget too small for distinct class prototypes");
            for (double& v : proto) v = proto_rng.bernoulli(0.5) ? 1.0 : 0.0;
        } while (seen.count(proto) > 0);
        seen.insert(proto);
        corpus.class_prototypes.push_back(std::move(proto));
    }

    // fixed per-attribute color, corpus-wide
    Rng color_rng(mix_seed(config.seed, 2));
    std::vector<std::vector<double>> colors(static_cast<std::size_t>(config.attr_count));
    for (auto& col : colors) {
        col = {color_rng.uniform(0.2, 1.0), color_rng.uniform(0.2, 1.0),
               color_rng.uniform(0.2, 1.0)};
    }

    int grid = 1;
    while (grid * grid < config.attr_count) ++grid;
    const int s = config.image_size;
    const double amp = config.patch_amplitude;

    // one fixed background texture shared by every image in the corpus:
    // attribute patches are then small perturbations of a common scene, so
    // encoder responses stay in one locally linear regime across samples
    Rng base_rng(mix_seed(config.seed, 4));
    std::vector<double> base_tex(static_cast<std::size_t>(s) * s * 3);
    // base range leaves headroom so active patches rarely clip at 1.0
    for (double& b : base_tex) b = base_rng.uniform(0.05, 0.45);

    Rng sample_rng(mix_seed(config.seed, 3));
    int next_id = 0;
    for (int c = 0; c < config.num_classes; ++c) {
        const auto& proto = corpus.class_prototypes[static_cast<std::size_t>(c)];
        for (int i = 0; i < config.samples_per_class; ++i) {
            LabeledSample sample;
            sample.label = c;
            sample.id = next_id++;
            sample.attributes.resize(static_cast<std::size_t>(config.attr_count));
            // one-sided jitter pointing into [0,1] keeps the per-image values
            // uniformly spread without piling mass on the exact endpoints
            for (int a = 0; a < config.attr_count; ++a) {
                const double j = sample_rng.uniform(0.0, config.attribute_jitter);
                sample.attributes[static_cast<std::size_t>(a)] =
                    proto[static_cast<std::size_t>(a)] > 0.5 ? 1.0 - j : j;
            }

            const double shift = sample_rng.uniform(-config.brightness_jitter,
                                                    config.brightness_jitter);
            std::vector<double> pixels(static_cast<std::size_t>(s) * s * 3);
            for (int y = 0; y < s; ++y) {
                const int row = std::min(y * grid / s, grid - 1);
                for (int x = 0; x < s; ++x) {
                    const int col = std::min(x * grid / s, grid - 1);
                    const int attr = row * grid + col;
                    for (int ch = 0; ch < 3; ++ch) {
                        double v = base_tex[(static_cast<std::size_t>(y) * s + x) * 3 + ch] +
                                   shift;
                        if (attr < config.attr_count)
                            v += amp * sample.attributes[static_cast<std::size_t>(attr)] *
                                 colors[static_cast<std::size_t>(attr)][static_cast<std::size_t>(ch)];
                        v += sample_rng.uniform(-config.pixel_noise, config.pixel_noise);
                        pixels[(static_cast<std::size_t>(y) * s + x) * 3 + ch] =
                            std::clamp(v, 0.0, 1.0);
                    }
                }
            }
            sample.image = Tensor::from_data({s, s, 3}, std::move(pixels));
            corpus.samples.push_back(std::move(sample));
        }
    }
    index_by_class(corpus);
    return corpus;
}

Corpus load_manifest(const std::string& manifest_path, const std::string& attributes_path) {
    std::ifstream attrs(attributes_path);
    if (!attrs) throw std::runtime_error("cannot open attribute file: " + attributes_path);

    std::string line;
    if (!std::getline(attrs, line))
        throw std::runtime_error("attribute file is empty: " + attributes_path);
    std::istringstream header(line);
    std::string tok_a, tok_max;
    int attr_count = 0;
    double max_raw = 0.0;
    header >> tok_a >> attr_count >> tok_max >> max_raw;
    if (tok_a != "A" || tok_max != "MAX" || attr_count <= 0 || max_raw <= 0.0)
        throw std::runtime_error("attribute file must start with 'A <count> MAX <max>'");

    std::map<int, std::vector<double>> class_attrs;
    while (std::getline(attrs, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        int class_id = 0;
        if (!(row >> class_id))
            throw std::runtime_error("malformed attribute row: " + line);
        std::vector<double> values;
        double v = 0.0;
        while (row >> v) {
            if (v < 0.0 || v > max_raw)
                throw std::runtime_error("attribute value outside [0, MAX]: " + line);
            values.push_back(v / max_raw);
        }
        if (static_cast<int>(values.size()) != attr_count)
            throw std::runtime_error("attribute row length does not equal declared A: " + line);
        class_attrs[class_id] = std::move(values);
    }

    std::ifstream manifest(manifest_path);
    if (!manifest) throw std::runtime_error("cannot open manifest: " + manifest_path);
    if (!std::getline(manifest, line) || line != "path,class_id")
        throw std::runtime_error("manifest must start with header 'path,class_id'");

    // class ids are remapped to contiguous labels in sorted order
    std::map<int, int> label_of;
    for (const auto& [class_id, _] : class_attrs)
        label_of[class_id] = static_cast<int>(label_of.size());

    const fs::path base = fs::path(manifest_path).parent_path();
    Corpus corpus;
    corpus.attr_count = attr_count;
    corpus.num_classes = static_cast<int>(label_of.size());
    int next_id = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw std::runtime_error("malformed manifest row: " + line);
        const std::string rel = line.substr(0, comma);
        const int class_id = std::stoi(line.substr(comma + 1));
        const auto it = class_attrs.find(class_id);
        if (it == class_attrs.end())
            throw std::runtime_error("manifest class id has no attribute row: " + line);
        LabeledSample sample;
        const fs::path img_path = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
        if (!fs::exists(img_path))
            throw std::runtime_error("image referenced but missing: " + img_path.string());
        sample.image = read_image(img_path.string());
        sample.attributes = it->second;
        sample.label = label_of[class_id];
        sample.id = next_id++;
        if (corpus.samples.empty()) {
            corpus.image_size = sample.image.dim(0);
            corpus.image_channels = sample.image.dim(2);
        } else if (sample.image.shape() != corpus.samples.front().image.shape()) {
            throw std::runtime_error("image extents differ across corpus: " + img_path.string());
        }
        corpus.samples.push_back(std::move(sample));
    }
    if (corpus.samples.empty())
        throw std::runtime_error("manifest lists no images: " + manifest_path);
    index_by_class(corpus);
    return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    manifest << "path,class_id\n";
    for (const LabeledSample& s : corpus.samples) {
        char name[64];
        std::snprintf(name, sizeof(name), "images/class%03d_sample%04d.ppm", s.label, s.id);
        write_ppm((fs::path(dir) / name).string(), s.image);
        manifest << name << "," << s.label << "\n";
    }
    std::ofstream attrs(fs::path(dir) / "attributes.txt");
    attrs << "A " << corpus.attr_count << " MAX 1\n";
    attrs.precision(17);
    if (!corpus.class_prototypes.empty()) {
        for (int c = 0; c < corpus.num_classes; ++c) {
            attrs << c;
            for (double v : corpus.class_prototypes[static_cast<std::size_t>(c)])
                attrs << " " << v;
            attrs << "\n";
        }
    } else {
        // fall back to the first sample of each class
        for (int c = 0; c < corpus.num_classes; ++c) {
            attrs << c;
            const auto& idx = corpus.by_class[static_cast<std::size_t>(c)];
            for (double v : corpus.samples[static_cast<std::size_t>(idx.front())].attributes)
                attrs << " " << v;
            attrs << "\n";
        }
    }
}

CorpusSplit make_split(const Corpus& corpus, int num_train_classes) {
    if (num_train_classes <= 0 || num_train_classes > corpus.num_classes)
        throw std::invalid_argument("train class count out of range");
    CorpusSplit split;
    for (int c = 0; c < corpus.num_classes; ++c)
        (c < num_train_classes ? split.train_classes : split.test_classes).push_back(c);
    return split;
}

Episode sample_episode(const Corpus& corpus, const std::vector<int>& categories,
                       int n_way, int m_shot, int q_per_class, Rng& rng) {
    if (n_way < 2 || m_shot < 1 || q_per_class < 1)
        throw std::invalid_argument("episode requires N >= 2, M >= 1, q >= 1");
    if (static_cast<int>(categories.size()) < n_way)
        throw std::runtime_error("not enough categories to sample an episode");

    std::vector<int> pool = categories;
    rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(n_way));

    Episode ep;
    ep.n_way = n_way;
    ep.m_shot = m_shot;
    ep.q_per_class = q_per_class;
    ep.class_map = pool;
    for (int n = 0; n < n_way; ++n) {
        const int cls = pool[static_cast<std::size_t>(n)];
        std::vector<int> idx = corpus.by_class[static_cast<std::size_t>(cls)];
        if (static_cast<int>(idx.size()) < m_shot + q_per_class)
            throw std::runtime_error("category has too few samples for the episode");
        rng.shuffle(idx);
        for (int i = 0; i < m_shot; ++i) {
            ep.support_indices.push_back(idx[static_cast<std::size_t>(i)]);
            ep.support_labels.push_back(n);
        }
        for (int i = 0; i < q_per_class; ++i) {
            ep.query_indices.push_back(idx[static_cast<std::size_t>(m_shot + i)]);
            ep.query_labels.push_back(n);
        }
    }
    return ep;
}

}  // namespace asl
