#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fewshot/matrix.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

enum class Split { Base, Novel };

// One labeled feature vector in embedding space.
struct EmbeddingRecord {
    std::string id;
    int label = 0;
    std::vector<double> vec;
};

// Immutable after construction; safe for concurrent reads.
class EmbeddingDataset {
public:
    EmbeddingDataset(int dim, Split split, std::vector<EmbeddingRecord> records);

    int dim() const { return dim_; }
    Split split() const { return split_; }
    const std::vector<EmbeddingRecord>& records() const { return records_; }
    const std::vector<int>& labels() const { return labels_; }  // sorted, unique
    const std::vector<int>& records_of(int label) const;
    int num_classes() const { return static_cast<int>(labels_.size()); }

    // Record's vector as a 1xD matrix row copy.
    Matrix record_row(int index) const;

private:
    int dim_;
    Split split_;
    std::vector<EmbeddingRecord> records_;
    std::vector<int> labels_;
    std::map<int, std::vector<int>> by_label_;
};

// Text embedding file: header `EMB v1 dim=<D>`, then `id,label,v1,...,vD`
// rows; `#` starts a comment line. Malformed header, per-row dimension
// mismatches and duplicate ids raise ParseError with the line number.
EmbeddingDataset load_embeddings(const std::string& path, Split split);
// Writer emits 17 significant digits, which round-trips doubles exactly.
void save_embeddings(const EmbeddingDataset& ds, const std::string& path);

// Base and novel label sets must not overlap when co-loaded for a run.
void ensure_disjoint_labels(const EmbeddingDataset& base, const EmbeddingDataset& novel);

// Synthetic class-conditional generator: per class, a deterministic mean
// vector and an isotropic noise scale drawn from [noise_lo, noise_hi], so
// similarities involving some classes are genuinely noisier than others.
// Class means carry a decaying per-dimension scale profile (like the
// variance spectrum of pooled backbone features) while the noise stays
// isotropic, so the leading channels are signal-rich and the trailing ones
// are noise-dominated.
struct SynthSpec {
    int num_classes = 0;
    int dim = 0;
    int samples_per_class = 0;
    double mean_scale = 1.0;
    double noise_lo = 0.0;
    double noise_hi = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Labels are label_offset..label_offset+num_classes-1; class means and noise
// scales are keyed by the final label, so disjoint label ranges give
// distinct classes. draw_tag selects an independent sample stream over the
// same class distributions (0 = the canonical dataset; other values give
// held-out draws).
EmbeddingDataset generate_synthetic(const SynthSpec& spec, Split split, int label_offset = 0,
                                    std::uint64_t draw_tag = 0);

// The per-class noise scales the generator used, indexed by class position.
std::vector<double> synthetic_noise_scales(const SynthSpec& spec, int label_offset = 0);

}  // namespace fewshot
