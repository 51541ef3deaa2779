#include "icodec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr const char* kFormat = "icodec-checkpoint";

json block_to_json(const nn::BlockConfig& c) {
    return json{{"layers", c.layers},
                {"model_dim", c.model_dim},
                {"ffn_dim", c.ffn_dim},
                {"heads", c.heads},
                {"rope_base", c.rope_base}};
}

nn::BlockConfig block_from_json(const json& j) {
    nn::BlockConfig c;
    c.layers = j.at("layers").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.rope_base = j.at("rope_base").get<double>();
    return c;
}

std::uint32_t crc_of(const void* data, std::size_t bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    const auto* p = static_cast<const Bytef*>(data);
    // zlib takes uInt lengths; feed in chunks.
    while (bytes > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        bytes -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

struct Payload {
    std::string name;
    nn::Shape shape;
    std::span<const Real> values;
};

void add_optimizer(std::vector<Payload>& out, std::vector<std::vector<Real>>& scratch, const nn::ParamList& params,
                   const AdamState& state, const std::string& prefix) {
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& shape = params[p].tensor.shape();
        auto moment = [&](const std::vector<std::vector<Real>>& src, const char* tag) {
            if (p < src.size() && src[p].size() == params[p].tensor.size()) {
                out.push_back({prefix + tag + params[p].name, shape, src[p]});
            } else {
                scratch.emplace_back(params[p].tensor.size(), Real(0));
                out.push_back({prefix + tag + params[p].name, shape, scratch.back()});
            }
        };
        moment(state.m, ".m:");
        moment(state.v, ".v:");
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ModelBundle& bundle, const CheckpointInfo& info,
                     const AdamState* ar_optimizer, const AdamState* nar_optimizer) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("checkpoint: cannot create " + dir.string() + ": " + ec.message());
    }

    const nn::ParamList ar = bundle.ar_params();
    const nn::ParamList nar = bundle.nar_params();
    std::vector<Payload> payloads;
    std::vector<std::vector<Real>> scratch;
    scratch.reserve(2 * (ar.size() + nar.size()));
    for (const auto* list : {&ar, &nar}) {
        for (const auto& p : *list) payloads.push_back({p.name, p.tensor.shape(), p.tensor.values()});
    }
    if (ar_optimizer) add_optimizer(payloads, scratch, ar, *ar_optimizer, "opt.ar");
    if (nar_optimizer) add_optimizer(payloads, scratch, nar, *nar_optimizer, "opt.nar");

    const auto& o = bundle.options;
    json header;
    header["format"] = kFormat;
    header["version"] = kCheckpointVersion;
    header["dtype"] = kRealName;
    header["model"] = {{"encoder", block_to_json(o.encoder)},
                       {"ar", block_to_json(o.ar)},
                       {"nar", block_to_json(o.nar)},
                       {"lora_rank", o.lora_rank},
                       {"codec_layers", o.codec_layers},
                       {"use_semantic", o.use_semantic},
                       {"seed", o.seed}};
    json vocab = json::object();
    for (const auto& [k, v] : seqlayout::VocabMap::table()) vocab[k] = v;
    header["vocab"] = vocab;
    header["training"] = {{"phase", info.phase},
                          {"ar_step", info.ar_step},
                          {"nar_step", info.nar_step},
                          {"seed", info.train_seed}};
    header["training"]["ar_optimizer"] = ar_optimizer != nullptr;
    header["training"]["nar_optimizer"] = nar_optimizer != nullptr;
    if (ar_optimizer) header["training"]["ar_optimizer_step"] = ar_optimizer->step;
    if (nar_optimizer) header["training"]["nar_optimizer_step"] = nar_optimizer->step;
    header["metrics"] = info.metrics;

    json table = json::array();
    std::size_t offset = 0;
    for (const auto& p : payloads) {
        const std::size_t bytes = p.values.size() * sizeof(Real);
        table.push_back({{"name", p.name},
                         {"shape", p.shape},
                         {"offset", offset},
                         {"bytes", bytes},
                         {"crc32", crc_of(p.values.data(), bytes)}});
        offset += bytes;
    }
    header["tensors"] = table;
    header["payload_bytes"] = offset;

    {
        std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
        if (!bin) throw Error("checkpoint: cannot write " + (dir / "tensors.bin").string());
        for (const auto& p : payloads) {
            bin.write(reinterpret_cast<const char*>(p.values.data()),
                      static_cast<std::streamsize>(p.values.size() * sizeof(Real)));
        }
        if (!bin) throw Error("checkpoint: write failed for " + (dir / "tensors.bin").string());
    }
    std::ofstream head(dir / "header.json", std::ios::trunc);
    if (!head) throw Error("checkpoint: cannot write " + (dir / "header.json").string());
    head << header.dump(2) << '\n';
    if (!head) throw Error("checkpoint: write failed for " + (dir / "header.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path head_path = dir / "header.json";
    const fs::path bin_path = dir / "tensors.bin";
    std::ifstream head(head_path);
    if (!head) throw Error("checkpoint: cannot open " + head_path.string());
    json header;
    try {
        header = json::parse(head);
    } catch (const json::exception& e) {
        throw Error("checkpoint: malformed header " + head_path.string() + ": " + e.what());
    }

    Checkpoint ck;
    std::vector<std::pair<std::string, json>> entries;
    try {
        if (header.value("format", "") != kFormat) {
            throw Error("checkpoint: " + head_path.string() + " is not a checkpoint header");
        }
        const int version = header.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw Error("checkpoint: version mismatch (file " + std::to_string(version) + ", supported " +
                        std::to_string(kCheckpointVersion) + ")");
        }
        const std::string dtype = header.at("dtype").get<std::string>();
        if (dtype != kRealName) {
            throw Error("checkpoint: dtype " + dtype + " does not match this build (" + kRealName + ")");
        }
        for (const auto& [k, v] : seqlayout::VocabMap::table()) {
            if (header.at("vocab").at(k).get<int>() != v) {
                throw Error("checkpoint: vocabulary mismatch at " + k);
            }
        }
        const json& m = header.at("model");
        ModelOptions o;
        o.encoder = block_from_json(m.at("encoder"));
        o.ar = block_from_json(m.at("ar"));
        o.nar = block_from_json(m.at("nar"));
        o.lora_rank = m.at("lora_rank").get<std::size_t>();
        o.codec_layers = m.at("codec_layers").get<std::size_t>();
        o.use_semantic = m.at("use_semantic").get<bool>();
        o.seed = m.at("seed").get<std::uint64_t>();
        ck.bundle = ModelBundle(o);

        const json& t = header.at("training");
        ck.info.phase = t.at("phase").get<std::string>();
        ck.info.ar_step = t.at("ar_step").get<std::size_t>();
        ck.info.nar_step = t.at("nar_step").get<std::size_t>();
        ck.info.train_seed = t.at("seed").get<std::uint64_t>();
        ck.info.metrics = header.at("metrics").get<std::map<std::string, double>>();
        if (t.at("ar_optimizer").get<bool>()) {
            ck.ar_optimizer = AdamState{};
            ck.ar_optimizer->step = t.at("ar_optimizer_step").get<std::size_t>();
        }
        if (t.at("nar_optimizer").get<bool>()) {
            ck.nar_optimizer = AdamState{};
            ck.nar_optimizer->step = t.at("nar_optimizer_step").get<std::size_t>();
        }
        for (const auto& e : header.at("tensors")) entries.emplace_back(e.at("name").get<std::string>(), e);
    } catch (const json::exception& e) {
        throw Error("checkpoint: bad header field: " + std::string(e.what()));
    }

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw Error("checkpoint: cannot open " + bin_path.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const std::size_t expected = header.value("payload_bytes", std::size_t{0});
    if (blob.size() < expected) {
        throw Error("checkpoint: tensors.bin truncated (" + std::to_string(blob.size()) + " of " +
                    std::to_string(expected) + " bytes)");
    }
    if (blob.size() > expected) {
        throw Error("checkpoint: tensors.bin has " + std::to_string(blob.size() - expected) + " trailing bytes");
    }

    std::map<std::string, const json*> by_name;
    for (const auto& [n, e] : entries) by_name[n] = &e;

    auto fetch = [&](const std::string& name, const nn::Shape& shape, std::span<Real> dst) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint: missing tensor " + name);
        const json& e = *it->second;
        if (e.at("shape").get<nn::Shape>() != shape) {
            throw Error("checkpoint: tensor " + name + " has shape " +
                        nn::shape_string(e.at("shape").get<nn::Shape>()) + ", model expects " +
                        nn::shape_string(shape));
        }
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t bytes = e.at("bytes").get<std::size_t>();
        if (bytes != dst.size() * sizeof(Real) || offset + bytes > blob.size()) {
            throw Error("checkpoint: tensor " + name + " payload out of range");
        }
        if (crc_of(blob.data() + offset, bytes) != e.at("crc32").get<std::uint32_t>()) {
            throw Error("checkpoint: checksum mismatch in tensor " + name);
        }
        std::memcpy(dst.data(), blob.data() + offset, bytes);
    };

    std::size_t used = 0;
    auto load_network = [&](const nn::ParamList& params, std::optional<AdamState>& opt, const std::string& prefix) {
        for (const auto& p : params) {
            fetch(p.name, p.tensor.shape(), p.tensor.mutable_values());
            ++used;
        }
        if (!opt) return;
        opt->m.resize(params.size());
        opt->v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            opt->m[i].assign(params[i].tensor.size(), Real(0));
            opt->v[i].assign(params[i].tensor.size(), Real(0));
            fetch(prefix + ".m:" + params[i].name, params[i].tensor.shape(), opt->m[i]);
            fetch(prefix + ".v:" + params[i].name, params[i].tensor.shape(), opt->v[i]);
            used += 2;
        }
    };
    load_network(ck.bundle.ar_params(), ck.ar_optimizer, "opt.ar");
    load_network(ck.bundle.nar_params(), ck.nar_optimizer, "opt.nar");
    if (used != entries.size()) {
        throw Error("checkpoint: tensor table has " + std::to_string(entries.size() - used) +
                    " entries the model does not use");
    }
    return ck;
}

ICODEC_CORE_END
