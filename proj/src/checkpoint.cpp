// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint reader/writer. All multi-byte fields are little-endian; the
// loader validates magic, version, and the tensor table against the model
// implied by config.json before touching any payload.

#include "shrinkpipe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "shrinkpipe/errors.hpp"

namespace shrinkpipe {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

class Reader {
public:
    Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    void require(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError(name_ + ": truncated file");
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        require(8);
        std::uint64_t v;
        std::memcpy(&v, bytes_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    std::string str(std::size_t n) {
        require(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void read_floats_at(std::uint64_t offset, float* dst, std::int64_t count) const {
        const std::uint64_t bytes = static_cast<std::uint64_t>(count) * sizeof(float);
        if (offset + bytes > bytes_.size()) throw IoError(name_ + ": truncated file");
        std::memcpy(dst, bytes_.data() + offset, bytes);
    }

private:
    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(EncoderModel& model, const Tokenizer& tokenizer, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json cfg;
    cfg["format_version"] = kCheckpointVersion;
    cfg["num_layers"] = model.config.num_layers;
    cfg["hidden_size"] = model.config.hidden_size;
    cfg["num_heads"] = model.config.num_heads;
    cfg["ffn_size"] = model.config.ffn_size;
    cfg["vocab_size"] = model.config.vocab_size;
    cfg["max_positions"] = model.config.max_positions;
    cfg["tie_output_projection"] = model.config.tie_output_projection;
    {
        std::ofstream out(dir / "config.json");
        if (!out) throw IoError("cannot write " + (dir / "config.json").string());
        out << cfg.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "tokenizer.json");
        if (!out) throw IoError("cannot write " + (dir / "tokenizer.json").string());
        out << tokenizer.to_json_string() << "\n";
    }

    std::vector<NamedTensor> tensors = model.named_tensors();
    // Header size: magic + version + count + per-tensor table entry.
    std::uint64_t offset = 4 + 4 + 4;
    for (const NamedTensor& nt : tensors)
        offset += 4 + nt.name.size() + 4 + 4ull * nt.tensor->rank() + 8;

    std::ofstream out(dir / "weights.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "weights.bin").string());
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& nt : tensors) {
        write_u32(out, static_cast<std::uint32_t>(nt.name.size()));
        out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        write_u32(out, static_cast<std::uint32_t>(nt.tensor->rank()));
        for (int d = 0; d < nt.tensor->rank(); ++d) write_u32(out, static_cast<std::uint32_t>(nt.tensor->dim(d)));
        write_u64(out, offset);
        offset += static_cast<std::uint64_t>(nt.tensor->numel()) * sizeof(float);
    }
    for (const NamedTensor& nt : tensors)
        out.write(reinterpret_cast<const char*>(nt.tensor->ptr()),
                  static_cast<std::streamsize>(nt.tensor->numel() * sizeof(float)));
    if (!out) throw IoError("failed writing " + (dir / "weights.bin").string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(read_file(dir / "config.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("config.json: " + std::string(e.what()));
    }
    if (!cfg.contains("format_version") || cfg["format_version"].get<std::uint32_t>() != kCheckpointVersion)
        throw IoError("config.json: format version mismatch (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    ModelConfig config;
    try {
        config.num_layers = cfg.at("num_layers").get<int>();
        config.hidden_size = cfg.at("hidden_size").get<int>();
        config.num_heads = cfg.at("num_heads").get<int>();
        config.ffn_size = cfg.at("ffn_size").get<int>();
        config.vocab_size = cfg.at("vocab_size").get<int>();
        config.max_positions = cfg.at("max_positions").get<int>();
        config.tie_output_projection = cfg.at("tie_output_projection").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("config.json: " + std::string(e.what()));
    }

    Tokenizer tokenizer = Tokenizer::from_json_string(read_file(dir / "tokenizer.json"));

    const std::filesystem::path wpath = dir / "weights.bin";
    Reader r(read_file(wpath), wpath.string());
    if (r.str(4) != std::string(kMagic, 4)) throw IoError(wpath.string() + ": bad magic bytes");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError(wpath.string() + ": version mismatch (file " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t count = r.u32();

    struct Entry {
        std::vector<int> dims;
        std::uint64_t offset;
    };
    std::unordered_map<std::string, Entry> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        Entry e;
        for (std::uint32_t d = 0; d < rank; ++d) e.dims.push_back(static_cast<int>(r.u32()));
        e.offset = r.u64();
        table.emplace(std::move(name), std::move(e));
    }

    EncoderModel model = EncoderModel::create(config);
    std::size_t used = 0;
    for (NamedTensor& nt : model.named_tensors()) {
        const auto it = table.find(nt.name);
        if (it == table.end()) throw DataError(wpath.string() + ": missing tensor '" + nt.name + "'");
        if (it->second.dims != nt.tensor->shape)
            throw ShapeError(wpath.string() + ": tensor '" + nt.name + "' has stored shape that does not match config");
        r.read_floats_at(it->second.offset, nt.tensor->ptr(), nt.tensor->numel());
        ++used;
    }
    if (used != table.size()) {
        for (const auto& [name, entry] : table) {
            bool known = false;
            for (NamedTensor& nt : model.named_tensors())
                if (nt.name == name) { known = true; break; }
            if (!known) throw DataError(wpath.string() + ": unknown tensor name '" + name + "'");
        }
    }
    if (tokenizer.vocab_size() != config.vocab_size)
        throw DataError(dir.string() + ": tokenizer has " + std::to_string(tokenizer.vocab_size()) +
                        " tokens but config expects " + std::to_string(config.vocab_size));
    return LoadedCheckpoint{std::move(model), std::move(tokenizer)};
}

}  // namespace shrinkpipe
