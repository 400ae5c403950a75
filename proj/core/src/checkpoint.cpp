#include "gsdiff/trainer.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace gsdiff {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'D', 'F'};
constexpr uint32_t kVersion = 1;

// Section tags (little-endian u32 of the 4 chars).
constexpr uint32_t kTagMeta = 0x4154454du; // META
constexpr uint32_t kTagGaus = 0x53554147u; // GAUS
constexpr uint32_t kTagAnch = 0x48434e41u; // ANCH
constexpr uint32_t kTagDecs = 0x53434544u; // DECS
constexpr uint32_t kTagEmbd = 0x44424d45u; // EMBD
constexpr uint32_t kTagOpts = 0x5354504fu; // OPTS
constexpr uint32_t kTagRngs = 0x53474e52u; // RNGS
constexpr uint32_t kTagSchd = 0x44484353u; // SCHD

class Writer {
public:
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void real_array(std::span<const Real> values) {
        u64(values.size());
        raw(values.data(), values.size() * sizeof(Real));
    }
    void u32_array(std::span<const uint32_t> values) {
        u64(values.size());
        raw(values.data(), values.size() * sizeof(uint32_t));
    }
    void int_array(std::span<const int> values) {
        u64(values.size());
        raw(values.data(), values.size() * sizeof(int));
    }
    std::string take() { return std::move(buf_); }

private:
    void raw(const void* p, size_t n) {
        buf_.append(reinterpret_cast<const char*>(p), n);
    }
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& data, size_t begin, size_t end)
        : data_(data), pos_(begin), end_(end) {}

    uint8_t u8() { return get<uint8_t>(); }
    uint32_t u32() { return get<uint32_t>(); }
    uint64_t u64() { return get<uint64_t>(); }
    int64_t i64() { return get<int64_t>(); }
    std::vector<Real> real_array() { return get_array<Real>(); }
    std::vector<uint32_t> u32_array() { return get_array<uint32_t>(); }
    std::vector<int> int_array() { return get_array<int>(); }
    size_t pos() const { return pos_; }
    bool done() const { return pos_ == end_; }

private:
    template <class T>
    T get() {
        if (pos_ + sizeof(T) > end_)
            throw checkpoint_error("checkpoint: truncated section at offset " +
                                   std::to_string(pos_));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    template <class T>
    std::vector<T> get_array() {
        const uint64_t n = u64();
        if (pos_ + n * sizeof(T) > end_)
            throw checkpoint_error("checkpoint: truncated array at offset " +
                                   std::to_string(pos_));
        std::vector<T> out(n);
        std::memcpy(out.data(), data_.data() + pos_, n * sizeof(T));
        pos_ += n * sizeof(T);
        return out;
    }
    const std::string& data_;
    size_t pos_, end_;
};

void write_group(Writer& w, const ParamGroup& g) { w.real_array(g.value); }

void write_group_opt(Writer& w, const ParamGroup& g) {
    w.i64(g.step);
    w.real_array(g.m);
    w.real_array(g.v);
}

void read_group_values(Reader& r, ParamGroup& g) { g.value = r.real_array(); }

void read_group_opt(Reader& r, ParamGroup& g) {
    g.step = r.i64();
    g.m = r.real_array();
    g.v = r.real_array();
    if (g.m.size() != g.value.size() || g.v.size() != g.value.size())
        throw checkpoint_error("checkpoint: optimizer state size mismatch in group '" +
                               g.name + "'");
    g.grad.assign(g.value.size(), Real(0));
}

} // namespace

struct CheckpointCodec {
    static std::string encode(const Trainer& t) {
        std::string sections;
        auto emit = [&sections](uint32_t tag, const std::string& payload) {
            const uint64_t len = payload.size();
            sections.append(reinterpret_cast<const char*>(&tag), 4);
            sections.append(reinterpret_cast<const char*>(&len), 8);
            sections += payload;
        };

        {
            Writer w;
            w.u64(static_cast<uint64_t>(t.iteration_));
            w.u8(t.model_.type == "scaffold" ? 1 : 0);
            w.u8(static_cast<uint8_t>(sizeof(Real)));
            w.u32(static_cast<uint32_t>(t.data_.views.size()));
            emit(kTagMeta, w.take());
        }

        if (t.model_.type == "direct") {
            const DirectModel& m = t.model_.direct;
            Writer w;
            w.u64(static_cast<uint64_t>(m.count));
            w.u32(static_cast<uint32_t>(m.sh_basis));
            write_group(w, m.mu);
            write_group(w, m.log_scale);
            write_group(w, m.rotation);
            write_group(w, m.opacity);
            write_group(w, m.sh);
            emit(kTagGaus, w.take());

            Writer o;
            for (const ParamGroup* g : m.groups()) write_group_opt(o, *g);
            emit(kTagOpts, o.take());
        } else {
            const ScaffoldModel& m = t.model_.scaffold;
            {
                Writer w;
                w.u64(static_cast<uint64_t>(m.anchor_count));
                w.u32(static_cast<uint32_t>(m.feature_dim));
                w.u32(static_cast<uint32_t>(m.k));
                w.u32(static_cast<uint32_t>(m.appearance_dim));
                w.u32(static_cast<uint32_t>(m.hidden));
                write_group(w, m.positions);
                write_group(w, m.features);
                write_group(w, m.offsets);
                write_group(w, m.scalings);
                emit(kTagAnch, w.take());
            }
            {
                Writer w;
                write_group(w, m.decoders);
                emit(kTagDecs, w.take());
            }
            {
                Writer w;
                w.u32(static_cast<uint32_t>(m.n_images));
                write_group(w, m.embeddings);
                emit(kTagEmbd, w.take());
            }
            Writer o;
            for (const ParamGroup* g : m.groups()) write_group_opt(o, *g);
            emit(kTagOpts, o.take());
        }

        {
            Writer w;
            for (const Rng* rng : {&t.rng_main_, &t.rng_oracle_, &t.rng_densify_})
                for (uint64_t s : rng->state()) w.u64(s);
            emit(kTagRngs, w.take());
        }
        {
            Writer w;
            w.real_array(t.stats_.grad_norm_sum);
            w.int_array(t.stats_.grad_hits);
            w.real_array(t.stats_.opacity_sum);
            w.int_array(t.stats_.opacity_count);
            w.u32_array(t.permutation_);
            w.u64(t.perm_pos_);
            emit(kTagSchd, w.take());
        }

        std::string blob;
        blob.append(kMagic, 4);
        const uint32_t version = kVersion;
        blob.append(reinterpret_cast<const char*>(&version), 4);
        blob += sections;

        const uint32_t crc = static_cast<uint32_t>(
            crc32(0, reinterpret_cast<const Bytef*>(blob.data()),
                  static_cast<uInt>(blob.size())));
        blob.append(reinterpret_cast<const char*>(&crc), 4);
        return blob;
    }

    static void decode(Trainer& t, const std::string& blob) {
        if (blob.size() < 12)
            throw checkpoint_error("checkpoint: truncated file at offset " +
                                   std::to_string(blob.size()));
        const uint32_t stored_crc = read_u32_at(blob, blob.size() - 4);
        const uint32_t crc = static_cast<uint32_t>(
            crc32(0, reinterpret_cast<const Bytef*>(blob.data()),
                  static_cast<uInt>(blob.size() - 4)));
        if (stored_crc != crc)
            throw checkpoint_error("checkpoint: CRC mismatch at offset " +
                                   std::to_string(blob.size() - 4));
        if (std::memcmp(blob.data(), kMagic, 4) != 0)
            throw checkpoint_error("checkpoint: bad magic at offset 0");
        const uint32_t version = read_u32_at(blob, 4);
        if (version != kVersion)
            throw checkpoint_error("checkpoint: unsupported version " +
                                   std::to_string(version) + " at offset 4");

        size_t pos = 8;
        const size_t end = blob.size() - 4;
        bool got_meta = false;
        while (pos < end) {
            if (pos + 12 > end)
                throw checkpoint_error("checkpoint: truncated section header at offset " +
                                       std::to_string(pos));
            const uint32_t tag = read_u32_at(blob, pos);
            uint64_t len;
            std::memcpy(&len, blob.data() + pos + 4, 8);
            pos += 12;
            if (pos + len > end)
                throw checkpoint_error("checkpoint: section overruns file at offset " +
                                       std::to_string(pos));
            Reader r(blob, pos, pos + len);
            decode_section(t, tag, r, got_meta);
            pos += len;
        }
        if (!got_meta)
            throw checkpoint_error("checkpoint: missing META section");
    }

    static CheckpointModel load_model(const std::string& path);

private:
    static uint32_t read_u32_at(const std::string& s, size_t at) {
        uint32_t v;
        std::memcpy(&v, s.data() + at, 4);
        return v;
    }

    static void decode_section(Trainer& t, uint32_t tag, Reader& r, bool& got_meta) {
        switch (tag) {
        case kTagMeta: {
            t.iteration_ = static_cast<int>(r.u64());
            const uint8_t type = r.u8();
            const uint8_t real_size = r.u8();
            if (real_size != sizeof(Real))
                throw checkpoint_error(
                    "checkpoint: precision mismatch (file uses " +
                    std::to_string(int(real_size)) + "-byte scalars)");
            t.model_.type = type == 1 ? "scaffold" : "direct";
            r.u32(); // n_images, informational
            got_meta = true;
            break;
        }
        case kTagGaus: {
            DirectModel& m = t.model_.direct;
            m.count = static_cast<int>(r.u64());
            m.sh_basis = static_cast<int>(r.u32());
            read_group_values(r, m.mu);
            read_group_values(r, m.log_scale);
            read_group_values(r, m.rotation);
            read_group_values(r, m.opacity);
            read_group_values(r, m.sh);
            break;
        }
        case kTagAnch: {
            ScaffoldModel& m = t.model_.scaffold;
            m.anchor_count = static_cast<int>(r.u64());
            m.feature_dim = static_cast<int>(r.u32());
            m.k = static_cast<int>(r.u32());
            m.appearance_dim = static_cast<int>(r.u32());
            m.hidden = static_cast<int>(r.u32());
            read_group_values(r, m.positions);
            read_group_values(r, m.features);
            read_group_values(r, m.offsets);
            read_group_values(r, m.scalings);
            break;
        }
        case kTagDecs:
            read_group_values(r, t.model_.scaffold.decoders);
            break;
        case kTagEmbd: {
            t.model_.scaffold.n_images = static_cast<int>(r.u32());
            read_group_values(r, t.model_.scaffold.embeddings);
            break;
        }
        case kTagOpts: {
            if (t.model_.type == "scaffold")
                for (ParamGroup* g : t.model_.scaffold.groups()) read_group_opt(r, *g);
            else
                for (ParamGroup* g : t.model_.direct.groups()) read_group_opt(r, *g);
            break;
        }
        case kTagRngs: {
            for (Rng* rng : {&t.rng_main_, &t.rng_oracle_, &t.rng_densify_}) {
                std::array<uint64_t, 4> s;
                for (auto& w : s) w = r.u64();
                rng->set_state(s);
            }
            break;
        }
        case kTagSchd: {
            t.stats_.grad_norm_sum = r.real_array();
            t.stats_.grad_hits = r.int_array();
            t.stats_.opacity_sum = r.real_array();
            t.stats_.opacity_count = r.int_array();
            t.permutation_ = r.u32_array();
            t.perm_pos_ = r.u64();
            break;
        }
        default:
            throw checkpoint_error("checkpoint: unknown section tag at offset " +
                                   std::to_string(r.pos()));
        }
    }
};

void Trainer::save_checkpoint(const std::string& path) const {
    const std::string blob = CheckpointCodec::encode(*this);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw checkpoint_error("checkpoint: cannot write " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw checkpoint_error("checkpoint: write failed for " + path);
}

namespace {
std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error("checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return blob;
}
} // namespace

CheckpointModel CheckpointCodec::load_model(const std::string& path) {
    Trainer shell;
    decode(shell, read_file(path));
    CheckpointModel out;
    out.model = std::move(shell.model_);
    out.iteration = shell.iteration_;
    return out;
}

Trainer Trainer::resume_checkpoint(const std::string& path, TrainConfig cfg,
                                   SceneDataset dataset) {
    Trainer t(std::move(cfg), std::move(dataset));
    CheckpointCodec::decode(t, read_file(path));
    if (t.model_.type != t.cfg_.model)
        throw checkpoint_error("checkpoint: model type '" + t.model_.type +
                               "' does not match config '" + t.cfg_.model + "'");
    // Learning rates come from the config, not the file.
    if (t.model_.type == "direct") {
        DirectModel& m = t.model_.direct;
        m.mu.lr = t.cfg_.lr.position;
        m.log_scale.lr = t.cfg_.lr.log_scale;
        m.rotation.lr = t.cfg_.lr.rotation;
        m.opacity.lr = t.cfg_.lr.opacity;
        m.sh.lr = t.cfg_.lr.sh;
    } else {
        ScaffoldModel& m = t.model_.scaffold;
        m.positions.lr = t.cfg_.lr.anchor_position;
        m.features.lr = t.cfg_.lr.features;
        m.offsets.lr = t.cfg_.lr.offsets;
        m.scalings.lr = t.cfg_.lr.anchor_scaling;
        m.decoders.lr = t.cfg_.lr.decoders;
        m.embeddings.lr = t.cfg_.lr.embeddings;
    }
    return t;
}

CheckpointModel load_checkpoint_model(const std::string& path) {
    return CheckpointCodec::load_model(path);
}

} // namespace gsdiff
