#include "fusmae/checkpoint.hpp"

#include <sstream>

#include "fusmae/io_util.hpp"

namespace fusmae {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

void write_tensor_table(std::ostream& os, const std::vector<std::pair<std::string, Tensor<float>>>& table) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(table.size()));
    for (const auto& [name, tensor] : table) {
        write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        write_bytes(os, name.data(), name.size());
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(tensor.shape.size()));
        for (int e : tensor.shape) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        write_f32_array(os, tensor.ptr(), static_cast<size_t>(tensor.size()));
    }
}

std::vector<std::pair<std::string, Tensor<float>>> read_tensor_table(std::istream& is, const char* what) {
    const auto count = read_le<std::uint32_t>(is, what);
    std::vector<std::pair<std::string, Tensor<float>>> table;
    table.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_le<std::uint16_t>(is, what);
        std::string name(name_len, '\0');
        read_bytes(is, name.data(), name_len, what);
        const auto rank = read_le<std::uint8_t>(is, what);
        Shape shape(rank);
        for (auto& e : shape) {
            e = static_cast<int>(read_le<std::uint32_t>(is, what));
            if (e <= 0) throw IoError(std::string("corrupt tensor extent in ") + what);
        }
        Tensor<float> t = Tensor<float>::zeros(shape);
        read_f32_array(is, t.ptr(), static_cast<size_t>(t.size()), what);
        table.emplace_back(std::move(name), std::move(t));
    }
    return table;
}

}  // namespace

std::string Checkpoint::config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    throw IoError("checkpoint: missing config key '" + key + "'");
}

bool Checkpoint::has_config(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return true;
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    write_bytes(os, kMagic, 4);
    write_le<std::uint16_t>(os, ck.version);
    std::ostringstream cfg;
    for (const auto& [k, v] : ck.config) cfg << k << "=" << v << "\n";
    const std::string cfg_text = cfg.str();
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg_text.size()));
    write_bytes(os, cfg_text.data(), cfg_text.size());
    write_tensor_table(os, ck.params);
    write_tensor_table(os, ck.opt_m);
    write_tensor_table(os, ck.opt_v);
    write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ck.opt_t));
    write_le<double>(os, ck.opt_cfg.beta1);
    write_le<double>(os, ck.opt_cfg.beta2);
    write_le<double>(os, ck.opt_cfg.eps);
    write_le<double>(os, ck.opt_cfg.weight_decay);
    write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ck.step));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.rng_state.size()));
    write_bytes(os, ck.rng_state.data(), ck.rng_state.size());
    os.flush();
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    read_bytes(is, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.version = read_le<std::uint16_t>(is, "checkpoint version");
    if (ck.version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(ck.version));
    const auto cfg_len = read_le<std::uint32_t>(is, "config block");
    std::string cfg_text(cfg_len, '\0');
    read_bytes(is, cfg_text.data(), cfg_len, "config block");
    std::istringstream cfg_stream(cfg_text);
    std::string line;
    while (std::getline(cfg_stream, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("checkpoint: malformed config line '" + line + "'");
        ck.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    ck.params = read_tensor_table(is, "parameter table");
    ck.opt_m = read_tensor_table(is, "optimizer m table");
    ck.opt_v = read_tensor_table(is, "optimizer v table");
    ck.opt_t = static_cast<std::int64_t>(read_le<std::uint64_t>(is, "optimizer t"));
    ck.opt_cfg.beta1 = read_le<double>(is, "beta1");
    ck.opt_cfg.beta2 = read_le<double>(is, "beta2");
    ck.opt_cfg.eps = read_le<double>(is, "eps");
    ck.opt_cfg.weight_decay = read_le<double>(is, "weight_decay");
    ck.step = static_cast<std::int64_t>(read_le<std::uint64_t>(is, "schedule position"));
    const auto rng_len = read_le<std::uint32_t>(is, "rng state");
    ck.rng_state.resize(rng_len);
    read_bytes(is, ck.rng_state.data(), rng_len, "rng state");
    is.peek();
    if (!is.eof()) throw IoError("checkpoint: trailing bytes in " + path);
    return ck;
}

std::vector<std::pair<std::string, std::string>> encode_model_config(const ModelConfig& cfg) {
    auto num = [](auto v) { return std::to_string(v); };
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("model.H", num(cfg.H));
    kv.emplace_back("model.W", num(cfg.W));
    kv.emplace_back("model.C1", num(cfg.C1));
    kv.emplace_back("model.C2", num(cfg.C2));
    kv.emplace_back("model.P", num(cfg.P));
    kv.emplace_back("model.N", num(cfg.N));
    kv.emplace_back("model.d", num(cfg.d));
    kv.emplace_back("model.h", num(cfg.h));
    kv.emplace_back("model.N_dec", num(cfg.N_dec));
    kv.emplace_back("model.d_dec", num(cfg.d_dec));
    kv.emplace_back("model.h_dec", num(cfg.h_dec));
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", cfg.r);
        kv.emplace_back("model.r", buf);
    }
    kv.emplace_back("model.strategy", to_string(cfg.strategy));
    kv.emplace_back("model.variant", to_string(cfg.variant));
    kv.emplace_back("model.xattn_shared_weights", cfg.xattn_shared_weights ? "1" : "0");
    kv.emplace_back("model.xattn_decoder_kv", cfg.xattn_decoder_kv_full ? "full" : "visible");
    kv.emplace_back("model.norm_pix_loss", cfg.norm_pix_loss ? "1" : "0");
    kv.emplace_back("model.mlp_ratio", num(cfg.mlp_ratio));
    return kv;
}

ModelConfig decode_model_config(const Checkpoint& ck) {
    ModelConfig cfg;
    auto geti = [&](const char* key) { return std::stoi(ck.config_value(key)); };
    cfg.H = geti("model.H");
    cfg.W = geti("model.W");
    cfg.C1 = geti("model.C1");
    cfg.C2 = geti("model.C2");
    cfg.P = geti("model.P");
    cfg.N = geti("model.N");
    cfg.d = geti("model.d");
    cfg.h = geti("model.h");
    cfg.N_dec = geti("model.N_dec");
    cfg.d_dec = geti("model.d_dec");
    cfg.h_dec = geti("model.h_dec");
    cfg.r = std::stod(ck.config_value("model.r"));
    cfg.strategy = strategy_from_string(ck.config_value("model.strategy"));
    cfg.variant = variant_from_string(ck.config_value("model.variant"));
    cfg.xattn_shared_weights = ck.config_value("model.xattn_shared_weights") == "1";
    cfg.xattn_decoder_kv_full = ck.config_value("model.xattn_decoder_kv") == "full";
    cfg.norm_pix_loss = ck.config_value("model.norm_pix_loss") == "1";
    cfg.mlp_ratio = geti("model.mlp_ratio");
    cfg.validate();
    return cfg;
}

Checkpoint make_checkpoint(FusMaeParams<float>& model, AdamW<float>& opt, std::int64_t step,
                           std::uint64_t master_seed,
                           const std::vector<std::pair<std::string, std::string>>& extra_config) {
    Checkpoint ck;
    ck.config = encode_model_config(model.cfg);
    for (const auto& kv : extra_config) ck.config.push_back(kv);
    auto params = named_params(model);
    ck.params.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<float> copy = Tensor<float>::from_vector(params[i].tensor->shape, params[i].tensor->vals());
        ck.params.emplace_back(params[i].name, std::move(copy));
        ck.opt_m.emplace_back(params[i].name,
                              Tensor<float>::from_vector(opt.moment1(i).shape, opt.moment1(i).vals()));
        ck.opt_v.emplace_back(params[i].name,
                              Tensor<float>::from_vector(opt.moment2(i).shape, opt.moment2(i).vals()));
    }
    ck.opt_t = opt.step_count();
    ck.opt_cfg = opt.config();
    ck.step = step;
    ck.rng_state.resize(8);
    for (int i = 0; i < 8; ++i) ck.rng_state[i] = static_cast<std::uint8_t>((master_seed >> (8 * i)) & 0xFF);
    return ck;
}

std::uint64_t checkpoint_master_seed(const Checkpoint& ck) {
    if (ck.rng_state.size() != 8) throw IoError("checkpoint: unexpected rng state length");
    std::uint64_t seed = 0;
    for (int i = 0; i < 8; ++i) seed |= static_cast<std::uint64_t>(ck.rng_state[i]) << (8 * i);
    return seed;
}

void adopt_checkpoint(FusMaeParams<float>& model, AdamW<float>& opt, const Checkpoint& ck) {
    auto params = named_params(model);
    if (params.size() != ck.params.size() || opt.size() != ck.opt_m.size() || ck.opt_m.size() != ck.opt_v.size())
        throw IoError("checkpoint: parameter table size does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != ck.params[i].first)
            throw IoError("checkpoint: parameter name mismatch at entry " + std::to_string(i) + ": model has '" +
                          params[i].name + "', checkpoint has '" + ck.params[i].first + "'");
        if (params[i].tensor->shape != ck.params[i].second.shape)
            throw IoError("checkpoint: shape mismatch for " + params[i].name + ": model " +
                          shape_str(params[i].tensor->shape) + " vs checkpoint " +
                          shape_str(ck.params[i].second.shape));
        params[i].tensor->vals() = ck.params[i].second.vals();
        if (opt.moment1(i).shape != ck.opt_m[i].second.shape || opt.moment2(i).shape != ck.opt_v[i].second.shape)
            throw IoError("checkpoint: optimizer state shape mismatch for " + params[i].name);
        opt.moment1(i).vals() = ck.opt_m[i].second.vals();
        opt.moment2(i).vals() = ck.opt_v[i].second.vals();
    }
    opt.set_step_count(ck.opt_t);
}

}  // namespace fusmae
