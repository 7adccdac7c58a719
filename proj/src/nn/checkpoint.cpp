#include "qaalns/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace qaalns::nn {

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'A', 'L', 'N', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put32(std::string& out, std::uint32_t v)
{
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
}

void put64(std::string& out, std::uint64_t v)
{
    put32(out, static_cast<std::uint32_t>(v));
    put32(out, static_cast<std::uint32_t>(v >> 32));
}

class Reader
{
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32()
    {
        if (pos_ + 4 > bytes_.size()) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_++])} << (8 * k);
        }
        return v;
    }

    std::uint64_t u64()
    {
        const std::uint64_t lo = u32();
        return lo | (std::uint64_t{u32()} << 32);
    }

    bool magic()
    {
        if (bytes_.size() < sizeof kMagic || std::memcmp(bytes_.data(), kMagic, sizeof kMagic) != 0) {
            return false;
        }
        pos_ = sizeof kMagic;
        return true;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(Network<LnsArith>& net, std::uint32_t epoch)
{
    Checkpoint c;
    c.format = net.arith().format();
    c.spec_hash = net.spec().hash();
    c.epoch = epoch;
    for (const Tensor<LnsScalar>* t : net.state_tensors()) {
        Tensor<std::uint32_t> e(t->shape, 0);
        for (std::size_t i = 0; i < t->size(); ++i) {
            e.data[i] = encode(t->data[i], c.format);
        }
        c.tensors.push_back(std::move(e));
    }
    return c;
}

void restore_checkpoint(Network<LnsArith>& net, const Checkpoint& ckpt)
{
    const LnsFormat& fmt = net.arith().format();
    if (!ckpt.format.same_arithmetic(fmt) || ckpt.format.zero_mode != fmt.zero_mode) {
        throw CheckpointError("checkpoint format " + ckpt.format.describe() + " does not match " + fmt.describe());
    }
    if (ckpt.spec_hash != net.spec().hash()) {
        throw CheckpointError("checkpoint was written for a different network spec");
    }
    const auto state = net.state_tensors();
    if (state.size() != ckpt.tensors.size()) {
        throw CheckpointError("checkpoint tensor count does not match the network");
    }
    for (std::size_t k = 0; k < state.size(); ++k) {
        if (state[k]->shape != ckpt.tensors[k].shape) {
            throw CheckpointError("checkpoint tensor " + std::to_string(k) + " has shape " +
                                  shape_string(ckpt.tensors[k].shape) + ", network expects " +
                                  shape_string(state[k]->shape));
        }
        for (std::size_t i = 0; i < state[k]->size(); ++i) {
            state[k]->data[i] = decode(ckpt.tensors[k].data[i], fmt);
        }
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    std::string out(kMagic, sizeof kMagic);
    put32(out, kVersion);
    put32(out, static_cast<std::uint32_t>(ckpt.format.total_bits));
    put32(out, static_cast<std::uint32_t>(ckpt.format.fractional_bits));
    put32(out, ckpt.format.zero_mode == ZeroMode::ZeroFlag ? 0u : 1u);
    put32(out, static_cast<std::uint32_t>(ckpt.format.d_max));
    put64(out, ckpt.spec_hash);
    put32(out, ckpt.epoch);
    put32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) {
            put32(out, static_cast<std::uint32_t>(d));
        }
        put32(out, static_cast<std::uint32_t>(t.size()));
        for (std::uint32_t v : t.data) {
            put32(out, v);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
        throw CheckpointError("cannot write " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError("cannot open " + path.string());
    }
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
    if (!r.magic()) {
        throw CheckpointError(path.string() + " is not a checkpoint");
    }
    if (const std::uint32_t v = r.u32(); v != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint c;
    const auto t = static_cast<int>(r.u32());
    const auto fb = static_cast<int>(r.u32());
    const std::uint32_t zm = r.u32();
    const auto dm = static_cast<int>(r.u32());
    if (zm > 1) {
        throw CheckpointError("bad zero mode in checkpoint header");
    }
    try {
        c.format = LnsFormat::make(t, fb, zm == 0 ? ZeroMode::ZeroFlag : ZeroMode::SmallestValue, dm);
    } catch (const LnsError& e) {
        throw CheckpointError(std::string("bad checkpoint format: ") + e.what());
    }
    c.spec_hash = r.u64();
    c.epoch = r.u32();
    const std::uint32_t count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t rank = r.u32();
        if (rank > 8) {
            throw CheckpointError("implausible tensor rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u32();
        }
        const std::uint32_t n = r.u32();
        if (n != shape_size(shape)) {
            throw CheckpointError("tensor " + std::to_string(k) + " element count disagrees with its shape");
        }
        Tensor<std::uint32_t> tensor(shape, 0);
        for (auto& v : tensor.data) {
            v = r.u32();
        }
        c.tensors.push_back(std::move(tensor));
    }
    if (!r.done()) {
        throw CheckpointError("trailing bytes after the last tensor");
    }
    return c;
}

}  // namespace qaalns::nn
