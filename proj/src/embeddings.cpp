#include "fewshot/embeddings.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

constexpr std::uint64_t kTagClassMean = 0x636d65616eULL;
constexpr std::uint64_t kTagNoiseScale = 0x7363616c65ULL;
constexpr std::uint64_t kTagSamples = 0x73616d70ULL;

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

EmbeddingDataset::EmbeddingDataset(int dim, Split split, std::vector<EmbeddingRecord> records)
    : dim_(dim), split_(split), records_(std::move(records)) {
    if (dim_ <= 0) throw DataError("embedding dimension must be positive");
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const EmbeddingRecord& r = records_[i];
        if (static_cast<int>(r.vec.size()) != dim_) {
            throw DataError("record '" + r.id + "' has dimension " + std::to_string(r.vec.size()) +
                            ", dataset declares " + std::to_string(dim_));
        }
        for (double v : r.vec) {
            if (!std::isfinite(v)) throw DataError("record '" + r.id + "' has a non-finite entry");
        }
        if (r.label < 0) throw DataError("record '" + r.id + "' has negative label");
        by_label_[r.label].push_back(static_cast<int>(i));
    }
    for (const auto& [label, idx] : by_label_) labels_.push_back(label);
}

const std::vector<int>& EmbeddingDataset::records_of(int label) const {
    auto it = by_label_.find(label);
    if (it == by_label_.end()) {
        throw DataError("no records for label " + std::to_string(label));
    }
    return it->second;
}

Matrix EmbeddingDataset::record_row(int index) const {
    const EmbeddingRecord& r = records_.at(index);
    Matrix m(1, dim_);
    for (int j = 0; j < dim_; ++j) m(0, j) = r.vec[j];
    return m;
}

EmbeddingDataset load_embeddings(const std::string& path, Split split) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);

    std::string line;
    long line_no = 0;

    // Header: EMB v1 dim=<D>
    if (!std::getline(in, line)) throw ParseError("empty embedding file: " + path, 1);
    ++line_no;
    int dim = 0;
    {
        std::istringstream hs(line);
        std::string magic, version, dim_field;
        hs >> magic >> version >> dim_field;
        if (magic != "EMB" || version != "v1" || dim_field.rfind("dim=", 0) != 0) {
            throw ParseError("malformed header, expected 'EMB v1 dim=<D>': " + line, line_no);
        }
        try {
            dim = std::stoi(dim_field.substr(4));
        } catch (const std::exception&) {
            throw ParseError("malformed dimension in header: " + dim_field, line_no);
        }
        if (dim <= 0) throw ParseError("dimension must be positive, got " + dim_field, line_no);
    }

    std::vector<EmbeddingRecord> records;
    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;

        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (static_cast<int>(fields.size()) != dim + 2) {
            throw ParseError("row has " + std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(dim + 2) + " (id,label," + std::to_string(dim) +
                                 " values)",
                             line_no);
        }
        EmbeddingRecord rec;
        rec.id = fields[0];
        if (rec.id.empty()) throw ParseError("empty record id", line_no);
        if (!seen_ids.insert(rec.id).second) {
            throw ParseError("duplicate record id '" + rec.id + "'", line_no);
        }
        try {
            std::size_t pos = 0;
            rec.label = std::stoi(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument(fields[1]);
        } catch (const std::exception&) {
            throw ParseError("malformed label '" + fields[1] + "'", line_no);
        }
        if (rec.label < 0) throw ParseError("negative label '" + fields[1] + "'", line_no);
        rec.vec.reserve(dim);
        for (int j = 0; j < dim; ++j) {
            try {
                std::size_t pos = 0;
                rec.vec.push_back(std::stod(fields[2 + j], &pos));
                if (pos != fields[2 + j].size()) throw std::invalid_argument(fields[2 + j]);
            } catch (const std::exception&) {
                throw ParseError("malformed value '" + fields[2 + j] + "' in column " +
                                     std::to_string(j),
                                 line_no);
            }
            if (!std::isfinite(rec.vec.back())) {
                throw ParseError("non-finite value in column " + std::to_string(j), line_no);
            }
        }
        records.push_back(std::move(rec));
    }
    return EmbeddingDataset(dim, split, std::move(records));
}

void save_embeddings(const EmbeddingDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write embedding file: " + path);
    out << "EMB v1 dim=" << ds.dim() << "\n";
    for (const EmbeddingRecord& r : ds.records()) {
        out << r.id << ',' << r.label;
        for (double v : r.vec) out << ',' << format_g17(v);
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

void ensure_disjoint_labels(const EmbeddingDataset& base, const EmbeddingDataset& novel) {
    std::set<int> base_labels(base.labels().begin(), base.labels().end());
    for (int label : novel.labels()) {
        if (base_labels.count(label)) {
            throw DataError("base and novel splits share label " + std::to_string(label));
        }
    }
}

void SynthSpec::validate() const {
    if (num_classes <= 0) throw ConfigError("synthetic num_classes must be positive");
    if (dim <= 0) throw ConfigError("synthetic dim must be positive");
    if (samples_per_class <= 0) throw ConfigError("synthetic samples_per_class must be positive");
    if (mean_scale < 0.0) throw ConfigError("synthetic mean_scale must be non-negative");
    if (noise_lo < 0.0 || noise_hi < 0.0) throw ConfigError("synthetic noise scales must be non-negative");
    if (noise_lo > noise_hi) throw ConfigError("synthetic noise_lo must be <= noise_hi");
}

// Per-dimension scale profile of the class means. Pooled backbone features
// carry a decaying variance spectrum, so the synthetic stand-in puts the
// class signal mostly in the leading channels while the isotropic noise
// covers all of them; a feature transform then has real structure to learn.
static double mean_profile(int d, int dim) {
    return std::exp(-static_cast<double>(d) / (dim / 4.0));
}

EmbeddingDataset generate_synthetic(const SynthSpec& spec, Split split, int label_offset,
                                    std::uint64_t draw_tag) {
    spec.validate();
    const Rng root(spec.seed);
    std::vector<EmbeddingRecord> records;
    records.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
    for (int k = 0; k < spec.num_classes; ++k) {
        const int label = label_offset + k;
        Rng mean_rng = root.fork(kTagClassMean, static_cast<std::uint64_t>(label));
        Matrix mean = mean_rng.normal_matrix(1, spec.dim);
        for (int d = 0; d < spec.dim; ++d) {
            mean(0, d) *= spec.mean_scale * mean_profile(d, spec.dim);
        }

        Rng scale_rng = root.fork(kTagNoiseScale, static_cast<std::uint64_t>(label));
        const double noise = scale_rng.uniform_range(spec.noise_lo, spec.noise_hi);

        Rng sample_rng =
            root.fork(kTagSamples, static_cast<std::uint64_t>(label)).fork(draw_tag);
        for (int i = 0; i < spec.samples_per_class; ++i) {
            EmbeddingRecord rec;
            rec.id = "c" + std::to_string(label) + "_s" + std::to_string(i);
            rec.label = label;
            rec.vec.resize(spec.dim);
            for (int j = 0; j < spec.dim; ++j) {
                rec.vec[j] = mean(0, j) + noise * sample_rng.normal();
            }
            records.push_back(std::move(rec));
        }
    }
    return EmbeddingDataset(spec.dim, split, std::move(records));
}

std::vector<double> synthetic_noise_scales(const SynthSpec& spec, int label_offset) {
    spec.validate();
    const Rng root(spec.seed);
    std::vector<double> scales(spec.num_classes);
    for (int k = 0; k < spec.num_classes; ++k) {
        Rng scale_rng = root.fork(kTagNoiseScale, static_cast<std::uint64_t>(label_offset + k));
        scales[k] = scale_rng.uniform_range(spec.noise_lo, spec.noise_hi);
    }
    return scales;
}

}  // namespace fewshot
