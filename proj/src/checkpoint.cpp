#include "vdt/adapters.hpp"
#include "vdt/bytes.hpp"
#include "vdt/error.hpp"
#include "vdt/io.hpp"

#include <json.hpp>

namespace vdt {

namespace {

constexpr std::string_view kCheckpointMagic = "VDTC";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

} // namespace

void save_checkpoint(const std::filesystem::path& path, const SelfAttentionParams& p, const CheckpointInfo& info) {
    p.validate();
    nlohmann::ordered_json header;
    header["dim"] = p.dim();
    header["heads"] = p.heads;
    header["seed"] = info.seed;
    header["beta"] = info.beta;
    header["tau"] = info.tau;
    header["dtype"] = "real32";
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& t : p.tensors()) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    }
    header["tensors"] = tensors;
    const std::string header_text = header.dump();

    std::string out;
    out.append(kCheckpointMagic);
    bytes::put_le<std::uint32_t>(out, kCheckpointVersion);
    bytes::put_le<std::uint64_t>(out, header_text.size());
    out.append(header_text);
    for (const auto& t : p.tensors()) {
        for (double v : t.values) {
            bytes::put_f32(out, static_cast<float>(v));
        }
    }
    write_file_atomic(path, out);
}

SelfAttentionParams load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
    const std::string data = read_file(path);
    const std::string_view bytes_view(data);
    if (data.size() < kPreambleBytes || bytes_view.substr(0, 4) != kCheckpointMagic) {
        throw Error(ErrorCode::BadMagic, path.string() + " is not an adapter checkpoint");
    }
    const auto version = bytes::get_le<std::uint32_t>(bytes_view, 4);
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "checkpoint version " + std::to_string(version));
    }
    const auto header_len = bytes::get_le<std::uint64_t>(bytes_view, 8);
    if (header_len > data.size() - kPreambleBytes) {
        throw Error(ErrorCode::TruncatedPayload, "checkpoint header extends past end of file");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes_view.substr(kPreambleBytes, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("checkpoint header: ") + e.what());
    }
    const auto dim = header.at("dim").get<std::size_t>();
    const auto heads = header.at("heads").get<std::size_t>();
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw Error(ErrorCode::InvalidArgument, "checkpoint declares invalid dim/heads");
    }
    auto p = SelfAttentionParams::zeros(dim, heads);
    std::size_t offset = kPreambleBytes + header_len;
    std::size_t expected = 0;
    for (const auto& t : p.tensors()) {
        expected += t.values.size() * 4;
    }
    if (data.size() - offset != expected) {
        throw Error(ErrorCode::TruncatedPayload, "checkpoint payload has " + std::to_string(data.size() - offset) +
                                                     " bytes, expected " + std::to_string(expected));
    }
    const auto& declared = header.at("tensors");
    auto views = p.tensors();
    if (declared.size() != views.size()) {
        throw Error(ErrorCode::InvalidArgument, "checkpoint declares an unexpected tensor list");
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (declared[i].at("name").get<std::string>() != views[i].name) {
            throw Error(ErrorCode::InvalidArgument, "checkpoint tensor order mismatch at " + views[i].name);
        }
        for (double& v : views[i].values) {
            v = static_cast<double>(bytes::get_f32(bytes_view, offset));
            offset += 4;
        }
    }
    p.validate();
    if (info != nullptr) {
        info->seed = header.value("seed", std::uint64_t{0});
        info->beta = header.value("beta", 0.0);
        info->tau = header.value("tau", kDefaultTau);
    }
    return p;
}

} // namespace vdt
