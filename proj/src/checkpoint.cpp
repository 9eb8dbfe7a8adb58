#include "bitforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bitforge {
namespace io {

namespace {

constexpr char kMagic[4] = {'B', 'D', 'C', 'K'};

void put_u32_le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double v) {
    const auto bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

double get_f64_le(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

struct Blob {
    std::string name;
    std::vector<int64_t> shape;
    std::string dtype;  // "f64" | "u8"
    std::string payload;
};

nlohmann::json shape_json(const std::vector<int64_t>& shape) {
    nlohmann::json j = nlohmann::json::array();
    for (int64_t e : shape) j.push_back(e);
    return j;
}

std::vector<int64_t> shape_from_json(const nlohmann::json& j) {
    std::vector<int64_t> shape;
    for (const auto& e : j) shape.push_back(e.get<int64_t>());
    return shape;
}

Blob f64_blob(std::string name, const std::vector<int64_t>& shape, std::span<const double> data) {
    Blob b;
    b.name = std::move(name);
    b.shape = shape;
    b.dtype = "f64";
    b.payload.reserve(data.size() * 8);
    for (double v : data) put_f64_le(b.payload, v);
    return b;
}

Blob u8_blob(std::string name, const std::vector<int64_t>& shape,
             std::span<const uint8_t> data) {
    Blob b;
    b.name = std::move(name);
    b.shape = shape;
    b.dtype = "u8";
    b.payload.assign(reinterpret_cast<const char*>(data.data()), data.size());
    return b;
}

void write_file(const std::string& path, const nlohmann::json& metadata,
                const std::vector<Blob>& blobs) {
    nlohmann::json meta = metadata;
    nlohmann::json table = nlohmann::json::array();
    for (const Blob& b : blobs) {
        table.push_back({{"name", b.name},
                         {"shape", shape_json(b.shape)},
                         {"dtype", b.dtype},
                         {"bytes", b.payload.size()}});
    }
    meta["tensors"] = table;
    const std::string meta_str = meta.dump();

    std::string out;
    out.append(kMagic, 4);
    put_u32_le(out, kCheckpointVersion);
    put_u32_le(out, static_cast<uint32_t>(meta_str.size()));
    out += meta_str;
    for (const Blob& b : blobs) out += b.payload;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorKind::io, "write failed for '", path, "'");
}

nlohmann::json clip_bounds_json(const std::vector<ClipBoundsEntry>& bounds) {
    nlohmann::json j = nlohmann::json::array();
    for (const ClipBoundsEntry& b : bounds)
        j.push_back({{"layer", b.layer}, {"alpha", b.alpha}, {"beta", b.beta}});
    return j;
}

}  // namespace

nlohmann::json model_config_to_json(const model::ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"max_seq_len", c.max_seq_len},
            {"ff_mult", c.ff_mult},       {"seed", c.seed}};
}

model::ModelConfig model_config_from_json(const nlohmann::json& j) {
    model::ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.d_model = j.at("d_model").get<int64_t>();
    c.n_layers = j.at("n_layers").get<int64_t>();
    c.n_heads = j.at("n_heads").get<int64_t>();
    c.max_seq_len = j.at("max_seq_len").get<int64_t>();
    c.ff_mult = j.at("ff_mult").get<int64_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

nlohmann::json quant_config_to_json(const quant::QuantConfig& c) {
    return {{"bits", c.bits},
            {"format", quant::format_name(c.format)},
            {"group_size", c.group_size},
            {"quantize_output_head", c.quantize_output_head},
            {"packed", false}};
}

quant::QuantConfig quant_config_from_json(const nlohmann::json& j) {
    quant::QuantConfig c;
    c.bits = j.at("bits").get<int>();
    c.format = quant::format_from_name(j.at("format").get<std::string>());
    c.group_size = j.at("group_size").get<int64_t>();
    c.quantize_output_head = j.value("quantize_output_head", false);
    if (j.value("packed", false)) fail(ErrorKind::format, "packed code payloads not supported");
    c.validate();
    return c;
}

void save_model_checkpoint(const std::string& path, const model::Model& m,
                           const nlohmann::json& extra) {
    nlohmann::json meta;
    meta["kind"] = "model";
    meta["model_config"] = model_config_to_json(m.config());
    meta["extra"] = extra;
    std::vector<Blob> blobs;
    for (const auto& [name, t] : m.named_params())
        blobs.push_back(f64_blob(name, t->shape(), t->values()));
    write_file(path, meta, blobs);
}

void save_quantized_checkpoint(
    const std::string& path, const model::Model& student,
    const std::vector<std::pair<std::string, quant::QuantizedTensor>>& quantized,
    const quant::QuantConfig& config, const std::vector<ClipBoundsEntry>& clip_bounds,
    const nlohmann::json& extra) {
    nlohmann::json meta;
    meta["kind"] = "quantized_model";
    meta["model_config"] = model_config_to_json(student.config());
    meta["quant_config"] = quant_config_to_json(config);
    meta["clip_bounds"] = clip_bounds_json(clip_bounds);
    meta["extra"] = extra;

    auto find_quantized = [&](const std::string& name) -> const quant::QuantizedTensor* {
        for (const auto& [n, q] : quantized)
            if (n == name) return &q;
        return nullptr;
    };

    std::vector<Blob> blobs;
    for (const auto& [name, t] : student.named_params()) {
        if (const quant::QuantizedTensor* q = find_quantized(name)) {
            blobs.push_back(u8_blob(name + ".codes", q->shape, q->codes));
            std::vector<double> params;
            params.reserve(q->group_params.size() * 2);
            for (const quant::GroupParams& p : q->group_params) {
                params.push_back(p.s_pos);
                params.push_back(p.s_neg);
            }
            blobs.push_back(f64_blob(name + ".group_params",
                                     {static_cast<int64_t>(q->group_params.size()), 2}, params));
        } else {
            blobs.push_back(f64_blob(name, t->shape(), t->values()));
        }
    }
    write_file(path, meta, blobs);
}

void save_raw_checkpoint(const std::string& path, const nlohmann::json& extra) {
    nlohmann::json meta;
    meta["kind"] = "raw";
    meta["extra"] = extra;
    write_file(path, meta, {});
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "'");
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, 4) != 0)
        fail(ErrorKind::format, "'", path, "' is not a checkpoint (bad magic)");
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
    const uint32_t version = get_u32_le(bytes + 4);
    if (version != kCheckpointVersion)
        fail(ErrorKind::format, "'", path, "': unsupported checkpoint version ", version,
             " (expected ", kCheckpointVersion, ")");
    const uint32_t meta_len = get_u32_le(bytes + 8);
    if (raw.size() < 12 + static_cast<size_t>(meta_len))
        fail(ErrorKind::format, "'", path, "': truncated metadata");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(raw.substr(12, meta_len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, "'", path, "': metadata is not valid JSON (", e.what(), ")");
    }

    // validate the declared payload sizes against the file before decoding
    size_t declared = 0;
    for (const auto& entry : meta.at("tensors")) {
        const auto shape = shape_from_json(entry.at("shape"));
        const std::string dtype = entry.at("dtype").get<std::string>();
        const size_t bytes_decl = entry.at("bytes").get<size_t>();
        const size_t unit = dtype == "f64" ? 8 : dtype == "u8" ? 1 : 0;
        if (unit == 0)
            fail(ErrorKind::format, "'", path, "': unknown dtype '", dtype, "' for tensor '",
                 entry.at("name").get<std::string>(), "'");
        if (bytes_decl != static_cast<size_t>(shape_numel(shape)) * unit)
            fail(ErrorKind::format, "'", path, "': tensor '",
                 entry.at("name").get<std::string>(), "' declares ", bytes_decl,
                 " bytes, inconsistent with its shape");
        declared += bytes_decl;
    }
    if (raw.size() != 12 + static_cast<size_t>(meta_len) + declared) {
        // name the first tensor whose payload the file cannot hold
        size_t have = raw.size() - 12 - meta_len, used = 0;
        std::string missing = "<payload>";
        for (const auto& entry : meta.at("tensors")) {
            used += entry.at("bytes").get<size_t>();
            if (used > have) {
                missing = entry.at("name").get<std::string>();
                break;
            }
        }
        fail(ErrorKind::format, "'", path, "': payload size mismatch, tensor '", missing,
             "' is truncated or trailing bytes exist");
    }

    Checkpoint ck;
    ck.kind = meta.at("kind").get<std::string>();
    if (meta.contains("model_config")) ck.model_config = model_config_from_json(meta["model_config"]);
    if (meta.contains("quant_config")) ck.quant_config = quant_config_from_json(meta["quant_config"]);
    if (meta.contains("clip_bounds"))
        for (const auto& b : meta["clip_bounds"])
            ck.clip_bounds.push_back({b.at("layer").get<std::string>(),
                                      b.at("alpha").get<double>(), b.at("beta").get<double>()});
    if (meta.contains("extra")) ck.extra = meta["extra"];

    const unsigned char* cursor = bytes + 12 + meta_len;
    std::vector<std::pair<std::string, Tensor>> raw_tensors;
    for (const auto& entry : meta.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = shape_from_json(entry.at("shape"));
        const std::string dtype = entry.at("dtype").get<std::string>();
        const int64_t n = shape_numel(shape);
        if (dtype == "f64") {
            std::vector<double> data(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = get_f64_le(cursor + i * 8);
            cursor += n * 8;
            raw_tensors.emplace_back(name, Tensor(shape, std::move(data)));
        } else {
            // u8 codes round-trip through a double tensor placeholder below
            std::vector<double> data(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = static_cast<double>(cursor[i]);
            cursor += n;
            raw_tensors.emplace_back(name, Tensor(shape, std::move(data)));
        }
    }

    // reassemble quantized layers: <name>.codes + <name>.group_params
    auto ends_with = [](const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    for (auto& [name, t] : raw_tensors) {
        if (ends_with(name, ".codes")) {
            const std::string base = name.substr(0, name.size() - 6);
            quant::QuantizedTensor q;
            if (!ck.quant_config)
                fail(ErrorKind::format, "'", path, "': codes present without quant_config");
            q.config = *ck.quant_config;
            q.shape = t.shape();
            q.codes.resize(static_cast<size_t>(t.numel()));
            const int64_t limit = int64_t{1} << q.config.bits;
            for (int64_t i = 0; i < t.numel(); ++i) {
                const double v = t[i];
                if (v < 0 || v >= static_cast<double>(limit))
                    fail(ErrorKind::data, "'", path, "': corrupt code in '", name, "'");
                q.codes[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
            }
            const std::string param_name = base + ".group_params";
            bool found = false;
            for (const auto& [pname, pt] : raw_tensors) {
                if (pname != param_name) continue;
                found = true;
                const int64_t groups = pt.dim(0);
                if (groups != quant::group_count(q.shape, q.config.group_size))
                    fail(ErrorKind::format, "'", path, "': group count mismatch for '", base, "'");
                q.group_params.resize(static_cast<size_t>(groups));
                for (int64_t gi = 0; gi < groups; ++gi) {
                    q.group_params[static_cast<size_t>(gi)].s_pos = pt[gi * 2];
                    q.group_params[static_cast<size_t>(gi)].s_neg = pt[gi * 2 + 1];
                }
            }
            if (!found)
                fail(ErrorKind::format, "'", path, "': missing group params for '", base, "'");
            if (q.config.format == quant::Format::nf_asym ||
                q.config.format == quant::Format::nf_sym)
                q.codebook = quant::build_nf_codebook(q.config.bits);
            ck.quantized.emplace_back(base, std::move(q));
        } else if (!ends_with(name, ".group_params")) {
            ck.tensors.emplace_back(name, std::move(t));
        }
    }
    return ck;
}

model::Model Checkpoint::to_model() const {
    if (!model_config) fail(ErrorKind::format, "checkpoint has no model config");
    // canonical parameter order comes from a freshly initialized model
    model::Model reference(*model_config);
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& [name, ref_t] : reference.named_params()) {
        bool placed = false;
        for (const auto& [tn, t] : tensors) {
            if (tn == name) {
                params.emplace_back(name, t);
                placed = true;
                break;
            }
        }
        if (!placed) {
            for (const auto& [qn, q] : quantized) {
                if (qn == name) {
                    params.emplace_back(name, quant::dequantize(q));
                    placed = true;
                    break;
                }
            }
        }
        if (!placed) fail(ErrorKind::format, "checkpoint is missing parameter '", name, "'");
    }
    return model::Model::from_params(*model_config, std::move(params));
}

void save_dataset(const std::string& path, const data::Dataset& ds) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "' for writing");
    for (const data::Record& rec : ds.records) {
        nlohmann::json j;
        j["prompt"] = rec.prompt;
        j["response"] = rec.response;
        j["source"] = data::source_name(rec.source);
        f << j.dump() << "\n";
    }
    if (!f) fail(ErrorKind::io, "write failed for '", path, "'");
}

data::Dataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot open '", path, "'");
    data::Dataset ds;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            data::Record rec;
            rec.prompt = j.at("prompt").get<std::vector<int32_t>>();
            rec.response = j.at("response").get<std::vector<int32_t>>();
            rec.source = data::source_from_name(j.at("source").get<std::string>());
            if (rec.response.empty())
                fail(ErrorKind::data, "empty response");
            ds.records.push_back(std::move(rec));
        } catch (const Error&) {
            throw Error(ErrorKind::format,
                        "'" + path + "' line " + std::to_string(line_no) + ": malformed record");
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, "'" + path + "' line " + std::to_string(line_no) +
                                               ": " + e.what());
        }
    }
    return ds;
}

}  // namespace io
}  // namespace bitforge
