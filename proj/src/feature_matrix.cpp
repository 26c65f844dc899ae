#include "tracemia/feature_matrix.hpp"

#include "tracemia/parallel.hpp"
#include "tracemia/trace_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tracemia {

void FeatureMatrix::append(std::span<const double> row, Label label, std::string id) {
    if (row.size() != cols()) throw std::invalid_argument("row width differs from matrix width");
    values.insert(values.end(), row.begin(), row.end());
    labels.push_back(label);
    ids.push_back(std::move(id));
}

FeatureMatrix FeatureMatrix::select_labels(std::initializer_list<Label> keep) const {
    std::vector<std::size_t> picked;
    for (std::size_t r = 0; r < rows(); ++r) {
        for (Label l : keep) {
            if (labels[r] == l) {
                picked.push_back(r);
                break;
            }
        }
    }
    return select_rows(picked);
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> picked) const {
    FeatureMatrix out;
    out.names = names;
    out.values.reserve(picked.size() * cols());
    for (std::size_t r : picked) out.append(row(r), labels[r], ids[r]);
    return out;
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::size_t> picked) const {
    FeatureMatrix out;
    for (std::size_t c : picked) out.names.push_back(names.at(c));
    out.labels = labels;
    out.ids = ids;
    out.values.reserve(rows() * picked.size());
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t c : picked) out.values.push_back(at(r, c));
    }
    return out;
}

FeatureMatrix filter_layer(const FeatureMatrix& matrix, std::size_t layer) {
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
        if (feature_layer_tag(matrix.names[c]) == layer) keep.push_back(c);
    }
    if (keep.empty()) throw std::invalid_argument("no features tagged with layer " + std::to_string(layer));
    return matrix.select_columns(keep);
}

FeatureMatrix extract_matrix(const DatasetManifest& manifest, const ModelHead& head, const ExtractOptions& options) {
    if (manifest.entries.empty()) throw std::invalid_argument("empty dataset");
    const LensHead lens(head);
    const std::size_t count = manifest.entries.size();
    std::vector<FeatureVector> vectors(count);
    std::vector<TraceDims> dims(count);
    parallel_for(count, options.workers, [&](std::size_t i) {
        const auto& entry = manifest.entries[i];
        const auto trace = read_trace(manifest.resolve(entry));
        dims[i] = trace.dims;
        vectors[i] = extract_features(trace, lens, entry.id);
    });
    for (std::size_t i = 1; i < count; ++i) {
        const TraceDims& a = dims[0];
        const TraceDims& b = dims[i];
        if (a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.hidden_dim != b.hidden_dim ||
            a.vocab_size != b.vocab_size) {
            throw std::invalid_argument("heterogeneous dims: trace " + manifest.entries[i].id + " differs from " +
                                        manifest.entries[0].id);
        }
    }
    FeatureMatrix matrix;
    matrix.names = vectors[0].names;
    matrix.values.reserve(count * matrix.cols());
    for (std::size_t i = 0; i < count; ++i) {
        matrix.append(vectors[i].values, manifest.entries[i].label, manifest.entries[i].id);
    }
    if (options.layer_filter) return filter_layer(matrix, *options.layer_filter);
    return matrix;
}

std::string format_real(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void write_csv(const FeatureMatrix& matrix, std::ostream& out) {
    out << "id,label";
    for (const auto& n : matrix.names) out << ',' << n;
    out << '\n';
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
        out << matrix.ids[r] << ',' << to_string(matrix.labels[r]);
        for (double v : matrix.row(r)) out << ',' << format_real(v);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failure");
}

void write_csv(const FeatureMatrix& matrix, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_csv(matrix, out);
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        fields.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') fields.back().pop_back();
    return fields;
}

} // namespace

FeatureMatrix read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("feature CSV is empty");
    auto header = split_commas(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
        throw std::runtime_error("feature CSV header must start with id,label");
    }
    FeatureMatrix matrix;
    matrix.names.assign(header.begin() + 2, header.end());
    std::vector<double> row(matrix.cols());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_commas(line);
        if (fields.size() != header.size()) {
            throw std::runtime_error("feature CSV line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields");
        }
        for (std::size_t c = 0; c < matrix.cols(); ++c) {
            const std::string& f = fields[c + 2];
            char* end = nullptr;
            row[c] = std::strtod(f.c_str(), &end);
            if (f.empty() || end != f.c_str() + f.size()) {
                throw std::runtime_error("feature CSV line " + std::to_string(line_no) + ": bad number \"" + f + "\"");
            }
        }
        matrix.append(row, parse_label(fields[1]), fields[0]);
    }
    return matrix;
}

FeatureMatrix read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_csv(in);
}

} // namespace tracemia
