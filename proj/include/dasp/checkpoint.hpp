#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dasp/errors.hpp"
#include "dasp/model.hpp"

namespace dasp {

// Checkpoint wire format (all integers little-endian):
//   8-byte magic "DASPCKPT"
//   u32 format version (currently 1)
//   u64 RNG seed
//   u32 config-echo length, UTF-8 config echo
//   u32 tensor count
//   per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//               row-major f64 payload
constexpr char kCheckpointMagic[8] = {'D', 'A', 'S', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    ModelParams params;
    AdapterSet adapters;
    std::uint64_t seed = 0;
    std::string config_echo;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(const std::string& buf) : buf_(buf) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw CheckpointTruncatedError("checkpoint truncated at byte " +
                                           std::to_string(pos_));
        }
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
};

inline void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.flat()) put_f64(out, v);
}

}  // namespace detail

inline std::string config_echo_string(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "modalities=";
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
        if (m) os << ',';
        os << cfg.modalities[m];
    }
    os << "\ninput_dims=";
    for (std::size_t m = 0; m < cfg.input_dims.size(); ++m) {
        if (m) os << ',';
        os << cfg.input_dims[m];
    }
    os << "\nhidden=" << cfg.hidden << "\nfeature_dim=" << cfg.feature_dim
       << "\nclasses=" << cfg.num_classes << "\nstable_rank=" << cfg.stable_rank << "\n";
    return os.str();
}

// Fixed enumeration order shared by save and load.
inline std::vector<std::pair<std::string, const Tensor*>> checkpoint_manifest(
    const ModelConfig& cfg, const ModelParams& p, const AdapterSet& adapters) {
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
        entries.emplace_back(encoder_param_name(cfg, m, "w1"), &p.encoders[m].w1);
        entries.emplace_back(encoder_param_name(cfg, m, "b1"), &p.encoders[m].b1);
        entries.emplace_back(encoder_param_name(cfg, m, "w2"), &p.encoders[m].w2);
        entries.emplace_back(encoder_param_name(cfg, m, "b2"), &p.encoders[m].b2);
    }
    entries.emplace_back("fusion.w", &p.fusion_w);
    entries.emplace_back("fusion.b", &p.fusion_b);
    entries.emplace_back("head.w", &p.head_w);
    entries.emplace_back("head.b", &p.head_b);
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
        entries.emplace_back(adapter_param_name(cfg, m, "stable.down"), &adapters[m].stable_down);
        entries.emplace_back(adapter_param_name(cfg, m, "stable.up"), &adapters[m].stable_up);
        entries.emplace_back(adapter_param_name(cfg, m, "plastic.w"), &adapters[m].plastic);
        entries.emplace_back(adapter_param_name(cfg, m, "stable.down_init"),
                             &adapters[m].stable_down_init);
    }
    return entries;
}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params, const AdapterSet& adapters,
                            std::uint64_t seed) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, seed);
    const std::string echo = config_echo_string(cfg);
    detail::put_u32(out, static_cast<std::uint32_t>(echo.size()));
    out.append(echo);
    const auto entries = checkpoint_manifest(cfg, params, adapters);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) detail::append_tensor(out, name, *tensor);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path, const ModelConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();

    detail::Reader r(buf);
    const std::string magic = r.bytes(sizeof(kCheckpointMagic));
    if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw CheckpointFormatError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                     ", expected " + std::to_string(kCheckpointVersion));
    }

    CheckpointData data;
    data.seed = r.u64();
    data.config_echo = r.bytes(r.u32());

    // Expected manifest: build a fresh skeleton with the right shapes, then
    // overwrite it from the file.
    Rng rng(0);
    data.params = init_model(cfg, rng);
    data.adapters = init_adapters(cfg, rng);
    auto expected = checkpoint_manifest(cfg, data.params, data.adapters);

    const std::uint32_t count = r.u32();
    if (count != expected.size()) {
        throw CheckpointManifestError("checkpoint holds " + std::to_string(count) +
                                      " tensors, expected " + std::to_string(expected.size()));
    }
    for (auto& [name, tensor] : expected) {
        const std::string got_name = r.bytes(r.u32());
        if (got_name != name) {
            throw CheckpointManifestError("tensor '" + got_name + "' where '" + name +
                                          "' was expected");
        }
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = static_cast<std::size_t>(r.u64());
        if (dims != tensor->shape()) {
            throw CheckpointManifestError("tensor '" + name + "' has shape " +
                                          Tensor::shape_string(dims) + ", expected " +
                                          tensor->shape_str());
        }
        Tensor* dst = const_cast<Tensor*>(tensor);
        for (double& v : dst->flat()) v = r.f64();
    }
    if (!r.exhausted()) {
        throw CheckpointFormatError("trailing bytes after checkpoint payload in " + path);
    }
    return data;
}

}  // namespace dasp
