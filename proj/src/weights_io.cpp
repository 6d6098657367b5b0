// Weight file layout (little-endian):
//   "DBSAMODL" | u32 version | u32 json_len | json | u32 tensor_count |
//   tensor_count x (u32 name_len | name | u32 rank | u64 dims[rank] | f32 data)
// The JSON block holds the model config plus a SHA-256 of the tensor section.

#include <fstream>
#include <sstream>

#include "dbsa/binary_io.hpp"
#include "dbsa/error.hpp"
#include "dbsa/model.hpp"

namespace dbsa {

namespace {

constexpr char kMagic[9] = "DBSAMODL";
constexpr std::uint32_t kVersion = 1;

void write_tensor_section(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        io::put_u32(out, static_cast<std::uint32_t>(name.size()));
        io::put_bytes(out, name.data(), name.size());
        io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.dims()) io::put_u64(out, d);
        io::put_f32s(out, t.data());
    }
}

}  // namespace

Digest ModelWeights::checksum() const {
    std::ostringstream buf(std::ios::binary);
    write_tensor_section(buf, tensors_);
    return sha256(buf.view());
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    std::ostringstream section(std::ios::binary);
    write_tensor_section(section, weights.tensors());
    const nlohmann::json header = {{"config", weights.config().to_json()},
                                   {"tensor_count", weights.tensors().size()},
                                   {"tensor_sha256", to_hex(sha256(section.view()))}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    io::put_bytes(out, kMagic, 8);
    io::put_u32(out, kVersion);
    io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    io::put_bytes(out, text.data(), text.size());
    const std::string body = section.str();
    io::put_bytes(out, body.data(), body.size());
    if (!out) throw Error("failed writing " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open weight file " + path.string());
    io::expect_magic(in, kMagic);
    const auto version = io::get_u32(in, "version");
    if (version != kVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
    const auto json_len = io::get_u32(in, "config length");
    std::string text(json_len, '\0');
    io::get_exact(in, text.data(), json_len, "config block");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weight file config block: ") + e.what());
    }
    const ModelConfig config = ModelConfig::from_json(header.at("config"));
    config.validate();

    const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (to_hex(sha256(body)) != header.value("tensor_sha256", std::string()))
        throw FormatError("weight file checksum mismatch");

    std::istringstream sec(body, std::ios::binary);
    const auto count = io::get_u32(sec, "tensor count");
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = io::get_u32(sec, "tensor name length");
        std::string name(name_len, '\0');
        io::get_exact(sec, name.data(), name_len, "tensor name");
        const auto rank = io::get_u32(sec, "tensor rank");
        if (rank == 0 || rank > 8) throw FormatError("tensor " + name + " has invalid rank");
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = io::get_u64(sec, "tensor dims");
        Tensor t(dims);
        io::get_f32s(sec, t.data(), "tensor data");
        tensors.emplace(std::move(name), std::move(t));
    }
    return ModelWeights(config, std::move(tensors));
}

}  // namespace dbsa
