#pragma once

// On-disk formats shared with external exporters. All integers are u32 and
// all reals f32, little-endian, no padding.
//
// .mtrc  "MTRC" u32 version=1, L, H, n, d, V, flags (bit0: final logits)
//        token_ids n*u32 | mask n*u8 | hidden (L+1)*n*d*f32 layer/pos/dim
//        | attentions L*H*n*n*f32 layer/head/query/key | [logits n*V*f32]
// .mthd  "MTHD" u32 version=1, d, V, norm_kind, f32 epsilon, u32 flags
//        (bit0: unembed bias) | gain d | bias d | unembed d*V row-major
//        | [unembed_bias V]
// .jsonl one {"trace","label","group","id"[,"text"]} object per line

#include "tracemia/trace.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tracemia {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 32;
inline constexpr std::size_t kHeadHeaderBytes = 28;

// Exact byte size of a trace file with these dims; throws on overflow.
std::size_t trace_file_size(const TraceDims& dims, bool with_logits);

std::vector<std::uint8_t> encode_trace(const SequenceTrace& trace);
SequenceTrace decode_trace(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_head(const ModelHead& head);
ModelHead decode_head(std::span<const std::uint8_t> bytes);

// Returns bytes written. Throws TraceError on invalid input or I/O failure.
std::size_t write_trace(const SequenceTrace& trace, std::ostream& out);
std::size_t write_trace(const SequenceTrace& trace, const std::string& path);
SequenceTrace read_trace(std::istream& in);
SequenceTrace read_trace(const std::string& path);

std::size_t write_head(const ModelHead& head, std::ostream& out);
std::size_t write_head(const ModelHead& head, const std::string& path);
ModelHead read_head(std::istream& in);
ModelHead read_head(const std::string& path);

DatasetManifest read_manifest(std::istream& in, const std::string& base_dir = "");
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, std::ostream& out);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

} // namespace tracemia
