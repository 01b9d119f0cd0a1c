#include "apex/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "apex/errors.hpp"
#include "apex/io.hpp"

namespace apex {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'P', 'E', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

    template <typename T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > limit_) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::size_t pos() const { return pos_; }

private:
    const std::string& bytes_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const VelocityModel& model) {
    const auto& arch = model.arch();
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.data_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.conditions));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.embed_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.time_freqs));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.activation));
    put<std::uint32_t>(out, arch.learnable_embeddings ? 1U : 0U);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.hidden.size()));
    for (int w : arch.hidden) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(model.params().size()));
    for (Eigen::Index i = 0; i < model.params().size(); ++i) put<double>(out, model.params()[i]);
    put<std::uint64_t>(out, fnv1a64(out));
    return out;
}

VelocityModel deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t)) throw CheckpointError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not an APEX checkpoint");
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (stored != fnv1a64(std::string_view(bytes.data(), body))) {
        throw CheckpointError("checkpoint checksum mismatch (truncated or corrupt file)");
    }

    Reader r(bytes, body);
    r.get<std::uint64_t>("magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Architecture arch;
    arch.data_dim = static_cast<int>(r.get<std::uint32_t>("data_dim"));
    arch.conditions = static_cast<int>(r.get<std::uint32_t>("conditions"));
    arch.embed_dim = static_cast<int>(r.get<std::uint32_t>("embed_dim"));
    arch.time_freqs = static_cast<int>(r.get<std::uint32_t>("time_freqs"));
    const auto act = r.get<std::uint32_t>("activation");
    if (act > static_cast<std::uint32_t>(Activation::Silu)) throw CheckpointError("unknown activation code");
    arch.activation = static_cast<Activation>(act);
    arch.learnable_embeddings = r.get<std::uint32_t>("learnable flag") != 0;
    const auto layers = r.get<std::uint32_t>("hidden count");
    if (layers > 64) throw CheckpointError("implausible hidden layer count");
    arch.hidden.clear();
    for (std::uint32_t i = 0; i < layers; ++i) arch.hidden.push_back(static_cast<int>(r.get<std::uint32_t>("width")));
    try {
        arch.validate();
    } catch (const InvalidArgument& e) {
        throw CheckpointError(std::string("bad architecture descriptor: ") + e.what());
    }
    const auto n = r.get<std::uint64_t>("parameter count");
    if (n != arch.param_count()) throw CheckpointError("parameter count does not match the architecture");
    if (body - r.pos() != n * sizeof(double)) throw CheckpointError("checkpoint payload size mismatch");
    Vector params(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = r.get<double>("parameter");
    return VelocityModel(arch, std::move(params));
}

void checkpoint_save(const VelocityModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(model));
}

VelocityModel checkpoint_load(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    return deserialize_checkpoint(bytes);
}

VelocityModel checkpoint_load(const std::filesystem::path& path, const Architecture& expected) {
    VelocityModel model = checkpoint_load(path);
    if (!(model.arch() == expected)) throw CheckpointError("checkpoint architecture does not match the config");
    return model;
}

}  // namespace apex
