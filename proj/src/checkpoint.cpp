#include "cornerdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace cornerdet {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'C', 'N', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error("truncated checkpoint '" + path.string() + "'");
    return value;
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << v;
    return s.str();
}

// Every tensor-like block in a checkpoint, addressed by entry name.
struct Entry {
    std::string name;
    std::string kind;
    std::vector<std::size_t> shape;
    std::vector<double>* values = nullptr;
};

std::vector<Entry> collect(Model& model, OptimizerState* optimizer) {
    std::vector<Entry> out;
    for (Parameter& p : model.parameters()) {
        const Shape& s = p.tensor.shape();
        Entry e{p.name, "param", {s.n, s.c, s.h, s.w}};
        out.push_back(e);
    }
    for (StatsBuffer& b : model.buffers()) {
        out.push_back({b.name + ".running_mean", "running_mean", {b.stats->mean.size()}, &b.stats->mean});
        out.push_back({b.name + ".running_var", "running_var", {b.stats->var.size()}, &b.stats->var});
    }
    if (optimizer && !optimizer->first_moment.empty()) {
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            const std::string& n = model.parameters()[i].name;
            out.push_back({"adam.m." + n, "adam_m", {optimizer->first_moment[i].size()}, &optimizer->first_moment[i]});
            out.push_back({"adam.v." + n, "adam_v", {optimizer->second_moment[i].size()}, &optimizer->second_moment[i]});
        }
    }
    return out;
}

std::span<double> entry_values(Model& model, const Entry& e, std::size_t param_index) {
    if (e.kind == "param") return model.parameters()[param_index].tensor.mutable_data();
    return {e.values->data(), e.values->size()};
}

struct Header {
    nlohmann::json manifest;
    std::streampos data_start;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw Error("'" + path.string() + "' is not a checkpoint (bad magic)");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw Error("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
    }
    const auto length = get<std::uint64_t>(in, path);
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
        throw Error("truncated checkpoint manifest in '" + path.string() + "'");
    }
    Header h;
    try {
        h.manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("corrupt checkpoint manifest in '" + path.string() + "': " + e.what());
    }
    h.data_start = in.tellg();
    return h;
}

CheckpointInfo info_from(const nlohmann::json& m) {
    CheckpointInfo info;
    info.config = ModelConfig::from_json(m.at("config"));
    info.classes = m.value("classes", std::vector<std::string>{});
    info.step = m.value("step", std::uint64_t{0});
    info.epoch = m.value("epoch", std::uint64_t{0});
    info.kind = m.value("kind", std::string("train"));
    return info;
}

void read_entries(std::ifstream& in, const std::filesystem::path& path, const nlohmann::json& manifest, Model& model,
                  OptimizerState* optimizer) {
    std::map<std::string, std::pair<std::span<double>, bool>> targets;  // name -> (storage, filled)
    std::size_t pi = 0;
    std::vector<Entry> entries = collect(model, nullptr);
    for (const Entry& e : entries) {
        targets[e.name] = {entry_values(model, e, pi), false};
        if (e.kind == "param") ++pi;
    }
    const auto& stored = manifest.at("entries");
    bool has_moments = false;
    for (const auto& e : stored) has_moments = has_moments || e.at("kind") == "adam_m";
    if (optimizer && has_moments) {
        const std::size_t n = model.parameters().size();
        optimizer->first_moment.assign(n, {});
        optimizer->second_moment.assign(n, {});
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t len = model.parameters()[i].tensor.numel();
            optimizer->first_moment[i].assign(len, 0.0);
            optimizer->second_moment[i].assign(len, 0.0);
            const std::string& name = model.parameters()[i].name;
            targets["adam.m." + name] = {std::span<double>(optimizer->first_moment[i]), false};
            targets["adam.v." + name] = {std::span<double>(optimizer->second_moment[i]), false};
        }
        optimizer->step = manifest.value("adam_step", std::uint64_t{0});
    }

    std::vector<double> scratch;
    for (const auto& e : stored) {
        const std::string name = e.at("name");
        std::size_t count = 1;
        for (std::size_t d : e.at("shape").get<std::vector<std::size_t>>()) count *= d;
        scratch.resize(count);
        if (!in.read(reinterpret_cast<char*>(scratch.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
            throw Error("truncated checkpoint data for '" + name + "' in '" + path.string() + "'");
        }
        const auto it = targets.find(name);
        if (it == targets.end()) {
            if (e.at("kind") == "adam_m" || e.at("kind") == "adam_v") continue;
            throw Error("checkpoint entry '" + name + "' has no counterpart in the model");
        }
        if (it->second.first.size() != count) {
            throw Error("checkpoint entry '" + name + "' holds " + std::to_string(count) + " values, model expects " +
                        std::to_string(it->second.first.size()));
        }
        std::copy(scratch.begin(), scratch.end(), it->second.first.begin());
        it->second.second = true;
    }
    for (const auto& [name, slot] : targets) {
        if (!slot.second) throw Error("checkpoint '" + path.string() + "' lacks entry '" + name + "'");
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info,
                     const OptimizerState* optimizer) {
    Model& m = const_cast<Model&>(model);
    std::vector<Entry> entries = collect(m, const_cast<OptimizerState*>(optimizer));
    nlohmann::json list = nlohmann::json::array();
    for (const Entry& e : entries) list.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", e.shape}});
    const nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                                     {"config", model.config().to_json()},
                                     {"config_hash", hex(model.config().hash())},
                                     {"classes", info.classes},
                                     {"kind", info.kind},
                                     {"step", info.step},
                                     {"epoch", info.epoch},
                                     {"adam_step", optimizer ? optimizer->step : 0},
                                     {"param_count", model.param_count()},
                                     {"entries", list}};
    const std::string text = manifest.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, 8);
        put<std::uint32_t>(out, kCheckpointVersion);
        put<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        std::size_t pi = 0;
        for (const Entry& e : entries) {
            const std::span<double> v = entry_values(m, e, pi);
            if (e.kind == "param") ++pi;
            out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
        if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    return read_header(in, path).manifest;
}

Model load_model(const std::filesystem::path& path, CheckpointInfo* info, OptimizerState* optimizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    const Header h = read_header(in, path);
    const CheckpointInfo parsed = info_from(h.manifest);
    Model model = build_model(parsed.config, 0);
    read_entries(in, path, h.manifest, model, optimizer);
    if (info) *info = parsed;
    return model;
}

void load_into(const std::filesystem::path& path, Model& model, CheckpointInfo* info, OptimizerState* optimizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    const Header h = read_header(in, path);
    const std::string expected = hex(model.config().hash());
    const std::string stored = h.manifest.value("config_hash", std::string());
    if (stored != expected) {
        throw Error("checkpoint '" + path.string() + "' config hash " + stored + " does not match the run config " +
                    expected);
    }
    read_entries(in, path, h.manifest, model, optimizer);
    if (info) *info = info_from(h.manifest);
}

}  // namespace cornerdet
