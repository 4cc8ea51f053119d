#include "leafnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "leafnet/datasets.hpp"

namespace leafnet {

namespace {

constexpr char kMagic[8] = {'L', 'E', 'A', 'F', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t get(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
    std::uint64_t u64(const char* what) { return get(8, what); }
    std::string str(const char* what) {
        const std::uint64_t n = u64(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n, const char* what) {
        if (n > bytes_.size() - pos_) {
            throw CheckpointTruncatedError("checkpoint truncated while reading " + std::string(what) +
                                           ": need " + std::to_string(n) + " bytes at offset " +
                                           std::to_string(pos_) + ", file has " +
                                           std::to_string(bytes_.size()));
        }
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

} // namespace

template <typename T>
std::optional<std::uint64_t> Checkpoint<T>::counter(const std::string& name) const {
    for (const auto& [k, v] : counters) {
        if (k == name) {
            return v;
        }
    }
    return std::nullopt;
}

template <typename T>
std::optional<double> Checkpoint<T>::scalar(const std::string& name) const {
    for (const auto& [k, v] : scalars) {
        if (k == name) {
            return v;
        }
    }
    return std::nullopt;
}

template <typename T>
const Tensor<T>* Checkpoint<T>::tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors) {
        if (k == name) {
            return &v;
        }
    }
    return nullptr;
}

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ckpt) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);
    w.u32(sizeof(T));
    w.u64(ckpt.counters.size());
    for (const auto& [name, v] : ckpt.counters) {
        w.str(name);
        w.u64(v);
    }
    w.u64(ckpt.scalars.size());
    for (const auto& [name, v] : ckpt.scalars) {
        w.str(name);
        w.u64(std::bit_cast<std::uint64_t>(v));
    }
    w.u64(ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        if (t.size() != element_count(t.shape())) {
            throw CheckpointError("tensor '" + name + "' has no storage and cannot be saved");
        }
        w.str(name);
        w.u64(t.rank());
        for (std::size_t d : t.shape()) {
            w.u64(d);
        }
        for (T v : t.data()) {
            if constexpr (sizeof(T) == 4) {
                w.u32(std::bit_cast<std::uint32_t>(v));
            } else {
                w.u64(std::bit_cast<std::uint64_t>(v));
            }
        }
    }
    return w.take();
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.take(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointVersionError("not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                     " is not supported (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t scalar_size = r.u32("scalar size");
    if (scalar_size != sizeof(T)) {
        throw CheckpointVersionError("checkpoint stores " + std::to_string(8 * scalar_size) +
                                     "-bit values; loading as " + std::to_string(8 * sizeof(T)) +
                                     "-bit");
    }
    Checkpoint<T> ckpt;
    const std::uint64_t n_counters = r.u64("counter count");
    for (std::uint64_t i = 0; i < n_counters; ++i) {
        std::string name = r.str("counter name");
        ckpt.counters.emplace_back(std::move(name), r.u64("counter value"));
    }
    const std::uint64_t n_scalars = r.u64("scalar count");
    for (std::uint64_t i = 0; i < n_scalars; ++i) {
        std::string name = r.str("scalar name");
        ckpt.scalars.emplace_back(std::move(name), std::bit_cast<double>(r.u64("scalar value")));
    }
    const std::uint64_t n_tensors = r.u64("tensor count");
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str("tensor name");
        const std::uint64_t rank = r.u64("tensor rank");
        if (rank > 16) {
            throw CheckpointError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
        }
        Shape shape;
        for (std::uint64_t a = 0; a < rank; ++a) {
            shape.push_back(static_cast<std::size_t>(r.u64("tensor extent")));
        }
        const std::size_t count = element_count(shape);
        const auto payload = r.take(count * sizeof(T), "tensor data");
        std::vector<T> data(count);
        for (std::size_t k = 0; k < count; ++k) {
            Bits<T> b = 0;
            for (std::size_t j = 0; j < sizeof(T); ++j) {
                b |= static_cast<Bits<T>>(payload[k * sizeof(T) + j]) << (8 * j);
            }
            data[k] = std::bit_cast<T>(b);
        }
        ckpt.tensors.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) {
        throw CheckpointError("trailing bytes after checkpoint payload");
    }
    return ckpt;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot write checkpoint " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw CheckpointError("failed writing checkpoint " + path.string());
    }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    return decode_checkpoint<T>(bytes);
}

std::uint32_t checkpoint_scalar_size(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    Reader r(bytes);
    const auto magic = r.take(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointVersionError("not a checkpoint file (bad magic)");
    }
    (void)r.u32("version");
    return r.u32("scalar size");
}

template <typename T>
Checkpoint<T> capture_training_state(std::span<const ParamRef<T>> params,
                                     const Optimizer<T>& optimizer, const SeededRng& rng,
                                     std::uint64_t step) {
    Checkpoint<T> ckpt;
    ckpt.counters = {{"train.step", step},
                     {"rng.state", rng.state()},
                     {"optim.kind", static_cast<std::uint64_t>(optimizer.kind())},
                     {"optim.steps", optimizer.steps()}};
    ckpt.scalars = {{"optim.lr", optimizer.learning_rate()}};
    for (const ParamRef<T>& p : params) {
        ckpt.tensors.emplace_back("param." + p.name, *p.value);
    }
    const OptimizerState<T>& state = optimizer.state();
    // Unused slots (e.g. the second moment of SGD) are left out.
    for (std::size_t i = 0; i < state.first.size(); ++i) {
        if (!state.first[i].empty()) {
            ckpt.tensors.emplace_back("optim.first." + std::to_string(i), state.first[i]);
        }
    }
    for (std::size_t i = 0; i < state.second.size(); ++i) {
        if (!state.second[i].empty()) {
            ckpt.tensors.emplace_back("optim.second." + std::to_string(i), state.second[i]);
        }
    }
    return ckpt;
}

template <typename T>
void restore_parameters(const Checkpoint<T>& ckpt, std::span<const ParamRef<T>> params) {
    for (const ParamRef<T>& p : params) {
        const Tensor<T>* t = ckpt.tensor("param." + p.name);
        if (t == nullptr) {
            throw CheckpointShapeError("checkpoint has no tensor 'param." + p.name + "'");
        }
        if (t->shape() != p.value->shape()) {
            throw CheckpointShapeError("tensor 'param." + p.name + "' has shape " +
                                       shape_str(t->shape()) + " in checkpoint but " +
                                       shape_str(p.value->shape()) + " in model");
        }
    }
    for (const ParamRef<T>& p : params) {
        *p.value = *ckpt.tensor("param." + p.name);
    }
}

template <typename T>
void restore_training_state(const Checkpoint<T>& ckpt, std::span<const ParamRef<T>> params,
                            Optimizer<T>& optimizer, SeededRng& rng, std::uint64_t& step) {
    const auto kind = ckpt.counter("optim.kind");
    if (kind && *kind != static_cast<std::uint64_t>(optimizer.kind())) {
        throw CheckpointShapeError("checkpoint was written by optimizer " +
                                   optimizer_name(static_cast<OptimizerKind>(*kind)) + ", not " +
                                   optimizer_name(optimizer.kind()));
    }
    OptimizerState<T> state;
    state.steps = ckpt.counter("optim.steps").value_or(0);
    bool any = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<T>* first = ckpt.tensor("optim.first." + std::to_string(i));
        const Tensor<T>* second = ckpt.tensor("optim.second." + std::to_string(i));
        state.first.push_back(first != nullptr ? *first : Tensor<T>());
        state.second.push_back(second != nullptr ? *second : Tensor<T>());
        any = any || first != nullptr || second != nullptr;
    }
    const std::string extra = std::to_string(params.size());
    if (ckpt.tensor("optim.first." + extra) != nullptr ||
        ckpt.tensor("optim.second." + extra) != nullptr) {
        throw CheckpointShapeError("checkpoint holds optimizer state for more than the model's " +
                                   extra + " parameter tensors");
    }
    if (!any) {
        state.first.clear();
        state.second.clear();
    }
    for (std::size_t i = 0; i < state.first.size(); ++i) {
        for (const Tensor<T>* slot : {&state.first[i], &state.second[i]}) {
            if (!slot->empty() && slot->shape() != params[i].value->shape()) {
                throw CheckpointShapeError("optimizer state " + std::to_string(i) + " has shape " +
                                           shape_str(slot->shape()) + ", parameter '" +
                                           params[i].name + "' is " +
                                           shape_str(params[i].value->shape()));
            }
        }
    }
    restore_parameters(ckpt, params);
    optimizer.set_state(std::move(state));
    if (const auto lr = ckpt.scalar("optim.lr")) {
        optimizer.set_learning_rate(*lr);
    }
    rng.set_state(ckpt.counter("rng.state").value_or(rng.state()));
    step = ckpt.counter("train.step").value_or(0);
}

#define LEAFNET_INSTANTIATE_CHECKPOINT(T)                                                          \
    template struct Checkpoint<T>;                                                                 \
    template std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>&);                    \
    template Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t>);                       \
    template void save_checkpoint(const Checkpoint<T>&, const std::filesystem::path&);             \
    template Checkpoint<T> load_checkpoint(const std::filesystem::path&);                          \
    template Checkpoint<T> capture_training_state(std::span<const ParamRef<T>>,                    \
                                                  const Optimizer<T>&, const SeededRng&,           \
                                                  std::uint64_t);                                  \
    template void restore_training_state(const Checkpoint<T>&, std::span<const ParamRef<T>>,       \
                                         Optimizer<T>&, SeededRng&, std::uint64_t&);               \
    template void restore_parameters(const Checkpoint<T>&, std::span<const ParamRef<T>>);

LEAFNET_INSTANTIATE_CHECKPOINT(float)
LEAFNET_INSTANTIATE_CHECKPOINT(double)

} // namespace leafnet
