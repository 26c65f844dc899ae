#include "tracemia/trace_io.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace tracemia {

namespace {

constexpr char kTraceMagic[4] = {'M', 'T', 'R', 'C'};
constexpr char kHeadMagic[4] = {'M', 'T', 'H', 'D'};

static_assert(sizeof(float) == 4);

class ByteWriter {
public:
    explicit ByteWriter(std::size_t reserve) { bytes_.reserve(reserve); }

    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    void u32(std::uint32_t v) {
        if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
        raw(&v, 4);
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void u32s(std::span<const std::uint32_t> values) {
        for (auto v : values) u32(v);
    }
    void f32s(std::span<const float> values) {
        if constexpr (std::endian::native == std::endian::little) {
            raw(values.data(), values.size() * 4);
        } else {
            for (auto v : values) f32(v);
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw TraceError("truncated payload");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void u32s(std::vector<std::uint32_t>& out, std::size_t n) {
        need(n * 4);
        out.resize(n);
        for (auto& v : out) v = u32();
    }
    void u8s(std::vector<std::uint8_t>& out, std::size_t n) {
        need(n);
        out.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                   bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
    }
    void f32s(std::vector<float>& out, std::size_t n) {
        need(n * 4);
        out.resize(n);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out.data(), bytes_.data() + pos_, n * 4);
            pos_ += n * 4;
        } else {
            for (auto& v : out) v = f32();
        }
    }
    bool magic(const char (&expected)[4]) {
        need(4);
        const bool ok = std::memcmp(bytes_.data() + pos_, expected, 4) == 0;
        pos_ += 4;
        return ok;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::size_t checked_mul(std::size_t a, std::size_t b) {
    std::size_t out;
    if (__builtin_mul_overflow(a, b, &out)) throw TraceError("dim overflow");
    return out;
}

std::size_t checked_add(std::size_t a, std::size_t b) {
    std::size_t out;
    if (__builtin_add_overflow(a, b, &out)) throw TraceError("dim overflow");
    return out;
}

std::vector<std::uint8_t> slurp(std::istream& in) {
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw TraceError("read failure");
    return bytes;
}

std::size_t emit(const std::vector<std::uint8_t>& bytes, std::ostream& out) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TraceError("write failure");
    return bytes.size();
}

std::size_t emit_file(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TraceError("cannot open " + path + " for writing");
    const auto n = emit(bytes, out);
    out.close();
    if (!out) throw TraceError("write failure on " + path);
    return n;
}

} // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TraceError("cannot open " + path);
    return slurp(in);
}

std::size_t trace_file_size(const TraceDims& d, bool with_logits) {
    const std::size_t n = d.seq_len;
    std::size_t total = kTraceHeaderBytes;
    total = checked_add(total, checked_mul(n, 5)); // ids + mask
    const std::size_t hidden = checked_mul(checked_mul(std::size_t{d.n_layers} + 1, n), d.hidden_dim);
    total = checked_add(total, checked_mul(hidden, 4));
    const std::size_t attn = checked_mul(checked_mul(checked_mul(d.n_layers, d.n_heads), n), n);
    total = checked_add(total, checked_mul(attn, 4));
    if (with_logits) total = checked_add(total, checked_mul(checked_mul(n, d.vocab_size), 4));
    return total;
}

std::vector<std::uint8_t> encode_trace(const SequenceTrace& trace) {
    const auto report = validate_trace(trace);
    if (!report.ok()) throw TraceError("invalid trace: " + report.summary());
    const TraceDims& d = trace.dims;
    ByteWriter w(trace_file_size(d, trace.final_logits.has_value()));
    w.raw(kTraceMagic, 4);
    w.u32(kFormatVersion);
    w.u32(d.n_layers);
    w.u32(d.n_heads);
    w.u32(d.seq_len);
    w.u32(d.hidden_dim);
    w.u32(d.vocab_size);
    w.u32(trace.final_logits ? 1u : 0u);
    w.u32s(trace.token_ids);
    w.raw(trace.mask.data(), trace.mask.size());
    w.f32s(trace.hidden_states);
    w.f32s(trace.attentions);
    if (trace.final_logits) w.f32s(*trace.final_logits);
    return w.take();
}

SequenceTrace decode_trace(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (bytes.size() < kTraceHeaderBytes) {
        if (bytes.size() >= 4 && std::memcmp(bytes.data(), kTraceMagic, 4) != 0) throw TraceError("bad magic");
        throw TraceError("truncated header");
    }
    if (!r.magic(kTraceMagic)) throw TraceError("bad magic");
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) throw TraceError("unsupported version " + std::to_string(version));
    SequenceTrace trace;
    TraceDims& d = trace.dims;
    d.n_layers = r.u32();
    d.n_heads = r.u32();
    d.seq_len = r.u32();
    d.hidden_dim = r.u32();
    d.vocab_size = r.u32();
    const std::uint32_t flags = r.u32();
    if (!d.valid()) throw TraceError("invalid dims in header");
    if (flags & ~1u) throw TraceError("unknown flags");
    const bool with_logits = flags & 1u;
    const std::size_t expected = trace_file_size(d, with_logits);
    if (bytes.size() < expected) throw TraceError("truncated payload");
    if (bytes.size() > expected) throw TraceError("trailing bytes after payload");
    r.u32s(trace.token_ids, d.seq_len);
    r.u8s(trace.mask, d.seq_len);
    r.f32s(trace.hidden_states, d.hidden_count());
    r.f32s(trace.attentions, d.attention_count());
    if (with_logits) {
        trace.final_logits.emplace();
        r.f32s(*trace.final_logits, d.logits_count());
    }
    return trace;
}

std::vector<std::uint8_t> encode_head(const ModelHead& head) {
    try {
        head.check();
    } catch (const std::invalid_argument& e) {
        throw TraceError(std::string("invalid head: ") + e.what());
    }
    ByteWriter w(kHeadHeaderBytes + 4 * (2 * head.hidden_dim + head.unembed.size() + head.vocab_size));
    w.raw(kHeadMagic, 4);
    w.u32(kFormatVersion);
    w.u32(head.hidden_dim);
    w.u32(head.vocab_size);
    w.u32(static_cast<std::uint32_t>(head.norm_kind));
    w.f32(head.norm_epsilon);
    w.u32(head.unembed_bias ? 1u : 0u);
    w.f32s(head.gain);
    w.f32s(head.bias);
    w.f32s(head.unembed);
    if (head.unembed_bias) w.f32s(*head.unembed_bias);
    return w.take();
}

ModelHead decode_head(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (bytes.size() < kHeadHeaderBytes) {
        if (bytes.size() >= 4 && std::memcmp(bytes.data(), kHeadMagic, 4) != 0) throw TraceError("bad magic");
        throw TraceError("truncated header");
    }
    if (!r.magic(kHeadMagic)) throw TraceError("bad magic");
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) throw TraceError("unsupported version " + std::to_string(version));
    ModelHead head;
    head.hidden_dim = r.u32();
    head.vocab_size = r.u32();
    const std::uint32_t kind = r.u32();
    if (kind > 2) throw TraceError("unknown norm kind");
    head.norm_kind = static_cast<NormKind>(kind);
    head.norm_epsilon = r.f32();
    const std::uint32_t flags = r.u32();
    if (flags & ~1u) throw TraceError("unknown flags");
    if (head.hidden_dim == 0 || head.vocab_size == 0) throw TraceError("invalid dims in header");
    const std::size_t d = head.hidden_dim;
    const std::size_t v = head.vocab_size;
    std::size_t expected = checked_add(kHeadHeaderBytes, checked_mul(checked_mul(d, 2), 4));
    expected = checked_add(expected, checked_mul(checked_mul(d, v), 4));
    if (flags & 1u) expected = checked_add(expected, checked_mul(v, 4));
    if (bytes.size() < expected) throw TraceError("truncated payload");
    if (bytes.size() > expected) throw TraceError("trailing bytes after payload");
    r.f32s(head.gain, d);
    r.f32s(head.bias, d);
    r.f32s(head.unembed, d * v);
    if (flags & 1u) {
        head.unembed_bias.emplace();
        r.f32s(*head.unembed_bias, v);
    }
    if (!(head.norm_epsilon > 0.0f)) throw TraceError("norm epsilon must be positive");
    return head;
}

std::size_t write_trace(const SequenceTrace& trace, std::ostream& out) { return emit(encode_trace(trace), out); }
std::size_t write_trace(const SequenceTrace& trace, const std::string& path) {
    return emit_file(encode_trace(trace), path);
}
SequenceTrace read_trace(std::istream& in) { return decode_trace(slurp(in)); }
SequenceTrace read_trace(const std::string& path) {
    try {
        return decode_trace(read_file_bytes(path));
    } catch (const TraceError& e) {
        throw TraceError(path + ": " + e.what());
    }
}

std::size_t write_head(const ModelHead& head, std::ostream& out) { return emit(encode_head(head), out); }
std::size_t write_head(const ModelHead& head, const std::string& path) { return emit_file(encode_head(head), path); }
ModelHead read_head(std::istream& in) { return decode_head(slurp(in)); }
ModelHead read_head(const std::string& path) {
    try {
        return decode_head(read_file_bytes(path));
    } catch (const TraceError& e) {
        throw TraceError(path + ": " + e.what());
    }
}

DatasetManifest read_manifest(std::istream& in, const std::string& base_dir) {
    DatasetManifest manifest;
    manifest.base_dir = base_dir;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = "manifest line " + std::to_string(line_no) + ": ";
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw TraceError(where + "invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object()) throw TraceError(where + "expected a JSON object");
        ManifestEntry entry;
        for (const char* key : {"trace", "label", "group", "id"}) {
            if (!obj.contains(key) || !obj[key].is_string()) {
                throw TraceError(where + "missing key \"" + key + "\"");
            }
        }
        entry.trace_path = obj["trace"].get<std::string>();
        try {
            entry.label = parse_label(obj["label"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw TraceError(where + e.what());
        }
        entry.group = obj["group"].get<std::string>();
        entry.id = obj["id"].get<std::string>();
        if (obj.contains("text") && obj["text"].is_string()) entry.text = obj["text"].get<std::string>();
        if (!seen.insert(entry.id).second) throw TraceError(where + "duplicate id " + entry.id);
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TraceError("cannot open " + path);
    const auto parent = std::filesystem::path(path).parent_path().string();
    return read_manifest(in, parent);
}

void write_manifest(const DatasetManifest& manifest, std::ostream& out) {
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json obj;
        obj["trace"] = e.trace_path;
        obj["label"] = to_string(e.label);
        obj["group"] = e.group;
        obj["id"] = e.id;
        if (e.text) obj["text"] = *e.text;
        out << obj.dump() << '\n';
    }
    if (!out) throw TraceError("write failure");
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw TraceError("cannot open " + path + " for writing");
    write_manifest(manifest, out);
}

} // namespace tracemia
