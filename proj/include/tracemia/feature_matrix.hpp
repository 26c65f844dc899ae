#pragma once

#include "tracemia/features.hpp"
#include "tracemia/trace.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tracemia {

// Row-major feature table with one row per trace.
struct FeatureMatrix {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<Label> labels;
    std::vector<std::string> ids;

    std::size_t rows() const { return labels.size(); }
    std::size_t cols() const { return names.size(); }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    void append(std::span<const double> row, Label label, std::string id);
    // Rows whose label is in `keep`, in original order.
    FeatureMatrix select_labels(std::initializer_list<Label> keep) const;
    FeatureMatrix select_rows(std::span<const std::size_t> rows) const;
    FeatureMatrix select_columns(std::span<const std::size_t> cols) const;
};

// Keeps only columns whose layer tag equals `layer`.
FeatureMatrix filter_layer(const FeatureMatrix& matrix, std::size_t layer);

struct ExtractOptions {
    std::optional<std::size_t> layer_filter;
    unsigned workers = 1; // 0 = hardware concurrency
};

// One row per manifest entry, in manifest order. All traces must share
// n_layers, n_heads, hidden_dim and vocab_size; sequence lengths may differ.
FeatureMatrix extract_matrix(const DatasetManifest& manifest, const ModelHead& head,
                             const ExtractOptions& options = {});

// "id,label,<names...>" header, values with 17 significant digits.
void write_csv(const FeatureMatrix& matrix, std::ostream& out);
void write_csv(const FeatureMatrix& matrix, const std::string& path);
FeatureMatrix read_csv(std::istream& in);
FeatureMatrix read_csv(const std::string& path);

std::string format_real(double value);

} // namespace tracemia
