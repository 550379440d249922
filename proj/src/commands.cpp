#include "fusmae/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fusmae/data.hpp"
#include "fusmae/gradcheck.hpp"
#include "fusmae/io_util.hpp"
#include "fusmae/pgm.hpp"
#include "fusmae/probe.hpp"
#include "fusmae/train.hpp"

namespace fusmae::cli {

namespace fs = std::filesystem;

// ---- flags -----------------------------------------------------------------

Flags Flags::parse(int argc, const char* const* argv, int start) {
    Flags flags;
    for (int i = start; i < argc; ++i) {
        std::string token = argv[i];
        if (token.rfind("--", 0) != 0)
            throw ConfigError("unexpected argument '" + token + "' (flags are --key value)");
        token = token.substr(2);
        std::string key = token, value;
        const auto eq = token.find('=');
        if (eq != std::string::npos) {
            key = token.substr(0, eq);
            value = token.substr(eq + 1);
        } else {
            if (i + 1 >= argc) throw ConfigError("flag --" + key + " is missing a value");
            value = argv[++i];
        }
        if (key.empty()) throw ConfigError("empty flag name");
        flags.values_[key] = value;
    }
    // config file values fill in anything the command line left unset
    auto cfg_it = flags.values_.find("config");
    if (cfg_it != flags.values_.end()) {
        std::ifstream is(cfg_it->second);
        if (!is) throw ConfigError("cannot open config file " + cfg_it->second);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto feq = line.find('=');
            if (feq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
            const std::string key = line.substr(0, feq);
            if (!flags.values_.count(key)) flags.values_[key] = line.substr(feq + 1);
        }
        flags.consumed_.insert("config");
    }
    return flags;
}

void Flags::note(const std::string& key, const std::string& value) const {
    if (consumed_.insert(key).second) resolved_.emplace_back(key, value);
}

std::string Flags::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    const std::string value = it == values_.end() ? fallback : it->second;
    note(key, value);
    return value;
}

std::string Flags::require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required flag --" + key);
    note(key, it->second);
    return it->second;
}

int Flags::get_int(const std::string& key, int fallback) const {
    const std::string v = get(key, std::to_string(fallback));
    try {
        return std::stoi(v);
    } catch (...) {
        throw ConfigError("flag --" + key + " expects an integer, got '" + v + "'");
    }
}

std::int64_t Flags::get_i64(const std::string& key, std::int64_t fallback) const {
    const std::string v = get(key, std::to_string(fallback));
    try {
        return std::stoll(v);
    } catch (...) {
        throw ConfigError("flag --" + key + " expects an integer, got '" + v + "'");
    }
}

std::uint64_t Flags::get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::string v = get(key, std::to_string(fallback));
    try {
        return std::stoull(v);
    } catch (...) {
        throw ConfigError("flag --" + key + " expects an unsigned integer, got '" + v + "'");
    }
}

double Flags::get_double(const std::string& key, double fallback) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", fallback);
    const std::string v = get(key, buf);
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError("flag --" + key + " expects a number, got '" + v + "'");
    }
}

bool Flags::get_bool(const std::string& key, bool fallback) const {
    const std::string v = get(key, fallback ? "1" : "0");
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("flag --" + key + " expects 0|1|true|false, got '" + v + "'");
}

void Flags::reject_unknown() const {
    for (const auto& [key, value] : values_)
        if (!consumed_.count(key)) throw ConfigError("unknown flag --" + key);
}

std::string default_out_root() {
    const char* env = std::getenv("FUSMAE_OUT");
    return env && *env ? env : "runs";
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path);
    os << text;
    if (!os) throw IoError("write failed for " + path);
}

void write_run_config(const std::string& dir, const Flags& flags,
                      const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::ostringstream os;
    for (const auto& [k, v] : flags.resolved()) os << k << "=" << v << "\n";
    for (const auto& [k, v] : extra) os << k << "=" << v << "\n";
    write_text(dir + "/run_config.txt", os.str());
}

DataConfig data_config_from_flags(const Flags& flags) {
    DataConfig dc;
    dc.H = flags.get_int("H", dc.H);
    dc.W = flags.get_int("W", dc.W);
    dc.C1 = flags.get_int("C1", dc.C1);
    dc.C2 = flags.get_int("C2", dc.C2);
    dc.K = flags.get_int("K", dc.K);
    dc.n_blobs = flags.get_int("n-blobs", dc.n_blobs);
    dc.noise_sigma = flags.get_double("noise-sigma", dc.noise_sigma);
    dc.looks = flags.get_double("looks", dc.looks);
    return dc;
}

ModelConfig model_config_from_flags(const Flags& flags, const DataConfig& data) {
    ModelConfig cfg;
    cfg.H = data.H;
    cfg.W = data.W;
    cfg.C1 = data.C1;
    cfg.C2 = data.C2;
    cfg.P = flags.get_int("P", cfg.P);
    cfg.N = flags.get_int("N", cfg.N);
    cfg.d = flags.get_int("d", cfg.d);
    cfg.h = flags.get_int("heads", cfg.h);
    cfg.N_dec = flags.get_int("N-dec", cfg.N_dec);
    cfg.d_dec = flags.get_int("d-dec", cfg.d_dec);
    cfg.h_dec = flags.get_int("heads-dec", cfg.h_dec);
    cfg.r = flags.get_double("mask-ratio", cfg.r);
    cfg.variant = variant_from_string(flags.get("variant", "xaed"));
    cfg.strategy = strategy_from_string(flags.get("strategy", "independent"));
    cfg.xattn_shared_weights = flags.get_bool("xattn-shared", cfg.xattn_shared_weights);
    const std::string kv = flags.get("decoder-kv", "full");
    if (kv != "full" && kv != "visible") throw ConfigError("--decoder-kv expects full|visible");
    cfg.xattn_decoder_kv_full = kv == "full";
    cfg.norm_pix_loss = flags.get_bool("norm-pix-loss", cfg.norm_pix_loss);
    cfg.validate();
    return cfg;
}

TrainConfig train_config_from_flags(const Flags& flags, const std::string& out_dir) {
    TrainConfig tc;
    tc.batch = flags.get_int("batch", tc.batch);
    tc.steps = flags.get_i64("steps", tc.steps);
    tc.base_lr = flags.get_double("base-lr", tc.base_lr);
    tc.warmup_frac = flags.get_double("warmup-frac", tc.warmup_frac);
    tc.opt.beta1 = flags.get_double("beta1", tc.opt.beta1);
    tc.opt.beta2 = flags.get_double("beta2", tc.opt.beta2);
    tc.opt.eps = flags.get_double("adam-eps", tc.opt.eps);
    tc.opt.weight_decay = flags.get_double("weight-decay", tc.opt.weight_decay);
    tc.seed = flags.get_u64("seed", 1);
    tc.ckpt_every = flags.get_i64("ckpt-every", 0);
    tc.ckpt_path = out_dir + "/checkpoint.fmck";
    return tc;
}

struct LoadedModel {
    ModelConfig cfg;
    FusMaeParams<float> params;
    Checkpoint ck;
};

LoadedModel load_model(const std::string& ckpt_path) {
    LoadedModel lm;
    lm.ck = load_checkpoint(ckpt_path);
    lm.cfg = decode_model_config(lm.ck);
    lm.params = init_params<float>(lm.cfg, 0);
    AdamW<float> opt(named_params(lm.params), lm.ck.opt_cfg);
    adopt_checkpoint(lm.params, opt, lm.ck);
    return lm;
}

std::vector<SamplePair> load_samples(const std::string& path, const ModelConfig& cfg) {
    DatasetReader reader(path);
    const DataConfig& dc = reader.config();
    if (dc.H != cfg.H || dc.W != cfg.W || dc.C1 != cfg.C1 || dc.C2 != cfg.C2)
        throw ConfigError("dataset geometry (" + std::to_string(dc.H) + "x" + std::to_string(dc.W) + ", C1=" +
                          std::to_string(dc.C1) + ", C2=" + std::to_string(dc.C2) +
                          ") does not match the checkpoint's model config");
    return reader.read_all();
}

}  // namespace

// ---- commands ----------------------------------------------------------------

int cmd_gen_data(const Flags& flags) {
    const std::string out = flags.get("out", default_out_root() + "/data.fmds");
    const auto n = static_cast<std::uint32_t>(flags.get_u64("n", 2048));
    const std::uint64_t seed = flags.get_u64("seed", 7);
    DataConfig dc = data_config_from_flags(flags);
    flags.reject_unknown();
    if (n < 1) throw ConfigError("--n must be >= 1");
    dc.validate();
    ensure_dir(fs::path(out).parent_path().string().empty() ? "." : fs::path(out).parent_path().string());
    GenDatasetResult result = gen_dataset(out, n, seed, dc);
    std::cout << "dataset " << result.dataset_path << "\n";
    std::cout << "manifest " << result.manifest_path << "\n";
    std::cout << "checksum " << to_hex(result.manifest.checksum) << "\n";
    return exit_ok;
}

int cmd_pretrain(const Flags& flags) {
    const std::string data_path = flags.require("data");
    const std::string out_dir = flags.get("out", default_out_root() + "/pretrain");
    const std::string resume = flags.get("resume", "");

    ensure_dir(out_dir);
    ModelConfig cfg;
    FusMaeParams<float> model;
    TrainConfig tc;
    std::int64_t start_step = 0;

    if (resume.empty()) {
        DatasetReader reader(data_path);
        DataConfig dc = reader.config();
        cfg = model_config_from_flags(flags, dc);
        tc = train_config_from_flags(flags, out_dir);
        flags.reject_unknown();
        model = init_params<float>(cfg, tc.seed);
    } else {
        Checkpoint ck = load_checkpoint(resume);
        cfg = decode_model_config(ck);
        tc = decode_train_config(ck);
        tc.ckpt_every = flags.get_i64("ckpt-every", tc.ckpt_every);
        tc.ckpt_path = out_dir + "/checkpoint.fmck";
        flags.reject_unknown();
        model = init_params<float>(cfg, 0);
        start_step = ck.step;
        AdamW<float> opt(named_params(model), tc.opt);
        adopt_checkpoint(model, opt, ck);
        auto samples = load_samples(data_path, cfg);
        auto result = pretrain_loop(model, opt, samples, tc, start_step);
        write_loss_csv(out_dir + "/loss.csv", result.trace);
        write_run_config(out_dir, flags, encode_model_config(cfg));
        std::cout << "resumed at step " << start_step << ", finished at " << result.final_step << "\n";
        if (!result.trace.empty()) std::cout << "final loss " << result.trace.back().loss << "\n";
        return exit_ok;
    }

    auto samples = load_samples(data_path, cfg);
    AdamW<float> opt(named_params(model), tc.opt);
    auto result = pretrain_loop(model, opt, samples, tc, start_step);
    write_loss_csv(out_dir + "/loss.csv", result.trace);
    write_run_config(out_dir, flags, encode_model_config(cfg));
    std::cout << "variant " << to_string(cfg.variant) << ", strategy " << to_string(cfg.strategy) << "\n";
    std::cout << "steps " << result.final_step << ", checkpoint " << tc.ckpt_path << "\n";
    std::cout << "initial loss " << result.trace.front().loss << ", final loss " << result.trace.back().loss
              << "\n";
    return exit_ok;
}

namespace {

int run_eval(const Flags& flags, bool is_finetune) {
    const std::string ckpt_path = flags.require("ckpt");
    const std::string data_path = flags.require("data");
    const std::string out_dir =
        flags.get("out", default_out_root() + (is_finetune ? "/finetune" : "/probe"));
    const EvalTask task = task_from_string(flags.get("task", "multilabel"));
    const ModalityCondition cond = modality_from_string(flags.get("modality", "s1s2"));

    LoadedModel lm = load_model(ckpt_path);
    auto samples = load_samples(data_path, lm.cfg);

    MetricsReport report;
    if (is_finetune) {
        FinetuneHyper hyper;
        hyper.epochs = flags.get_int("epochs", hyper.epochs);
        hyper.batch = flags.get_int("batch", hyper.batch);
        hyper.lr = flags.get_double("lr", hyper.lr);
        hyper.label_smoothing = flags.get_double("label-smoothing", hyper.label_smoothing);
        hyper.holdout = flags.get_double("holdout", hyper.holdout);
        hyper.seed = flags.get_u64("seed", 0);
        flags.reject_unknown();
        report = finetune(lm.params, samples, task, cond, hyper);
    } else {
        ProbeHyper hyper;
        hyper.epochs = flags.get_int("epochs", hyper.epochs);
        hyper.batch = flags.get_int("batch", hyper.batch);
        hyper.lr = flags.get_double("lr", hyper.lr);
        hyper.label_smoothing = flags.get_double("label-smoothing", hyper.label_smoothing);
        hyper.holdout = flags.get_double("holdout", hyper.holdout);
        hyper.seed = flags.get_u64("seed", 0);
        flags.reject_unknown();
        FeatureSet features = extract_feature_matrix(lm.params, samples, cond);
        report = linear_probe(features, task, hyper).report;
    }

    ensure_dir(out_dir);
    const std::string label = std::string(is_finetune ? "finetune" : "probe") + "-" +
                              to_string(lm.cfg.variant) + "-" + to_string(cond) + "-" +
                              (task == EvalTask::multilabel ? "multilabel" : "single");
    write_text(out_dir + "/report.txt", report.to_kv());
    write_text(out_dir + "/metrics.csv", MetricsReport::csv_header() + "\n" + report.to_csv_row(label) + "\n");
    write_run_config(out_dir, flags, encode_model_config(lm.cfg));
    std::cout << label << "\n" << report.to_kv();
    return exit_ok;
}

}  // namespace

int cmd_probe(const Flags& flags) { return run_eval(flags, false); }
int cmd_finetune(const Flags& flags) { return run_eval(flags, true); }

int cmd_inspect_attention(const Flags& flags) {
    const std::string ckpt_path = flags.require("ckpt");
    const std::string data_path = flags.require("data");
    const std::string out_dir = flags.get("out", default_out_root() + "/inspect");
    const auto sample_index = static_cast<std::uint32_t>(flags.get_u64("sample", 0));
    const bool dump_recon = flags.get_bool("dump-recon", false);
    const std::uint64_t seed = flags.get_u64("seed", 1);
    flags.reject_unknown();

    LoadedModel lm = load_model(ckpt_path);
    DatasetReader reader(data_path);
    if (sample_index >= reader.size())
        throw ConfigError("sample index " + std::to_string(sample_index) + " out of range (n=" +
                          std::to_string(reader.size()) + ")");
    SamplePair sample = reader.read(sample_index);

    ensure_dir(out_dir);
    AttnMassReport diag = attention_mass_diagnostic(lm.params, sample.i1, sample.i2);

    double worst_row_err = 0.0;
    int exported = 0;
    for (const auto& entry : diag.capture.entries) {
        const bool wanted = entry.label == diag.first_self_label || entry.label.rfind("xattn_enc", 0) == 0;
        if (!wanted) continue;
        for (int h = 0; h < entry.heads; ++h) {
            std::ostringstream csv;
            std::vector<double> heat(static_cast<size_t>(entry.t_q) * entry.t_kv);
            for (int q = 0; q < entry.t_q; ++q) {
                double row_sum = 0.0;
                for (int k = 0; k < entry.t_kv; ++k) {
                    const double w = entry.weights[(static_cast<size_t>(h) * entry.t_q + q) * entry.t_kv + k];
                    heat[static_cast<size_t>(q) * entry.t_kv + k] = w;
                    csv << (k ? "," : "") << w;
                    row_sum += w;
                }
                csv << "\n";
                worst_row_err = std::max(worst_row_err, std::fabs(row_sum - 1.0));
            }
            const std::string stem = out_dir + "/" + entry.label + ".head" + std::to_string(h);
            write_text(stem + ".csv", csv.str());
            write_pgm(stem + ".pgm", heat, entry.t_q, entry.t_kv);
            ++exported;
        }
    }

    std::ostringstream summary;
    summary << "sample=" << sample_index << "\n";
    summary << "variant=" << to_string(lm.cfg.variant) << "\n";
    summary << "exported_heads=" << exported << "\n";
    summary << "max_row_sum_err=" << worst_row_err << "\n";
    for (size_t h = 0; h < diag.within_modality.size(); ++h)
        summary << "within_modality_mass_head" << h << "=" << diag.within_modality[h] << "\n";
    write_text(out_dir + "/block_diagonality.txt", summary.str());
    std::cout << summary.str();

    if (dump_recon) {
        Rng rng(seed);
        Tape<float> tape(false);
        auto out = forward_pretrain(tape, lm.params, sample.i1, sample.i2, rng);
        auto dump_channels = [&](const Tensor<float>& img, const std::string& stem) {
            const int hh = img.shape[0], ww = img.shape[1], cc = img.shape[2];
            for (int c = 0; c < cc; ++c) {
                std::vector<double> plane(static_cast<size_t>(hh) * ww);
                for (int i = 0; i < hh * ww; ++i) plane[i] = img.ptr()[i * cc + c];
                write_pgm(stem + ".ch" + std::to_string(c) + ".pgm", plane, hh, ww);
            }
        };
        dump_channels(sample.i1, out_dir + "/input1");
        dump_channels(sample.i2, out_dir + "/input2");
        dump_channels(out.recon.image1, out_dir + "/recon1");
        dump_channels(out.recon.image2, out_dir + "/recon2");
    }
    write_run_config(out_dir, flags);
    return exit_ok;
}

int cmd_grad_check(const Flags& flags) {
    const std::string dtype = flags.get("dtype", "f64");
    if (dtype != "f32" && dtype != "f64") throw ConfigError("--dtype expects f32|f64");
    const bool f64 = dtype == "f64";
    const double tol = flags.get_double("tol", f64 ? 1e-4 : 1e-3);
    const double eps = flags.get_double("eps", f64 ? 1e-5 : 1e-4);
    const double floor_ = flags.get_double("rel-floor", 1e-2);
    const int max_coords = flags.get_int("max-coords", 24);
    const std::uint64_t seed = flags.get_u64("seed", 17);
    const std::string inject = flags.get("inject-fault", "");
    flags.reject_unknown();

    if (!inject.empty()) fault::set_negated_backward(inject);
    bool all_pass = true;
    auto line = [&](const std::string& name, double err, const std::string& worst) {
        const bool pass = err < tol;
        all_pass = all_pass && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " " << name << " max_rel_err " << err;
        if (!worst.empty()) std::cout << " worst " << worst;
        std::cout << "\n";
    };

    if (f64) {
        for (const auto& [name, err] : op_grad_suite<double>(eps, floor_, seed)) line("op " + name, err, "");
        for (const auto& [name, report] : block_grad_suite<double>(eps, floor_, seed))
            line("block " + name, report.max_rel_err, report.worst_param);
        for (Variant v : {Variant::early_concat, Variant::xad, Variant::xaed}) {
            GradCheckReport r = model_grad_check<double>(minimal_grad_config(v), seed, eps, floor_, max_coords);
            line(std::string("model ") + to_string(v), r.max_rel_err, r.worst_param);
        }
    } else {
        for (const auto& [name, err] : op_grad_suite<float>(eps, floor_, seed)) line("op " + name, err, "");
        for (const auto& [name, report] : block_grad_suite<float>(eps, floor_, seed))
            line("block " + name, report.max_rel_err, report.worst_param);
        for (Variant v : {Variant::early_concat, Variant::xad, Variant::xaed}) {
            GradCheckReport r = model_grad_check<float>(minimal_grad_config(v), seed, eps, floor_, max_coords);
            line(std::string("model ") + to_string(v), r.max_rel_err, r.worst_param);
        }
    }
    fault::clear();
    std::cout << (all_pass ? "all gradient checks passed" : "gradient check FAILURES above") << "\n";
    return all_pass ? exit_ok : exit_check_failed;
}

int cmd_bench(const Flags& flags) {
    const std::string out_dir = flags.get("out", default_out_root() + "/bench");
    const std::uint64_t seed = flags.get_u64("seed", 7);
    const auto n = static_cast<std::uint32_t>(flags.get_u64("n", 512));
    const std::int64_t steps = flags.get_i64("steps", 120);
    const int batch = flags.get_int("batch", 32);
    const double base_lr = flags.get_double("base-lr", 1e-3);
    const std::string strategy = flags.get("strategy", "independent");
    flags.reject_unknown();

    ensure_dir(out_dir);
    DataConfig dc;
    const std::string data_path = out_dir + "/bench.fmds";
    gen_dataset(data_path, n, seed, dc);
    auto samples = DatasetReader(data_path).read_all();

    std::ostringstream csv;
    csv << "# desk-scale comparison on synthetic pairs; values are not comparable to published results\n";
    csv << "variant,mAP_s1,mAP_s2,mAP_s1s2\n";
    for (Variant v : {Variant::early_concat, Variant::xad, Variant::xaed}) {
        ModelConfig cfg;
        cfg.variant = v;
        cfg.strategy = strategy_from_string(strategy);
        cfg.validate();
        auto model = init_params<float>(cfg, seed);
        AdamW<float> opt(named_params(model), AdamWConfig{});
        TrainConfig tc;
        tc.batch = batch;
        tc.steps = steps;
        tc.base_lr = base_lr;
        tc.seed = seed;
        tc.ckpt_path = out_dir + "/checkpoint_" + to_string(v) + ".fmck";
        auto result = pretrain_loop(model, opt, samples, tc);
        std::cout << to_string(v) << ": loss " << result.trace.front().loss << " -> "
                  << result.trace.back().loss << "\n";

        csv << to_string(v);
        for (ModalityCondition cond : {ModalityCondition::s1, ModalityCondition::s2, ModalityCondition::s1s2}) {
            FeatureSet features = extract_feature_matrix(model, samples, cond);
            ProbeHyper hyper;
            hyper.seed = seed;
            ProbeResult probe = linear_probe(features, EvalTask::multilabel, hyper);
            csv << "," << probe.report.map;
            std::cout << "  probe " << to_string(cond) << " mAP " << probe.report.map << "\n";
        }
        csv << "\n";
    }
    write_text(out_dir + "/bench.csv", csv.str());
    write_run_config(out_dir, flags);
    std::cout << "wrote " << out_dir << "/bench.csv\n";
    return exit_ok;
}

// ---- dispatch ------------------------------------------------------------------

namespace {
const char* kUsage =
    "fusmae <command> [--flag value ...]\n"
    "\n"
    "commands:\n"
    "  gen-data           generate a synthetic paired-modality dataset (.fmds + manifest)\n"
    "  pretrain           masked-autoencoder pretraining; writes checkpoint, loss csv, run config\n"
    "  probe              linear probe on frozen encoder features\n"
    "  finetune           train encoder + linear head end to end\n"
    "  inspect-attention  dump attention matrices (csv/pgm) and block-diagonality scores\n"
    "  grad-check         finite-difference verification of every backward rule\n"
    "  bench              gen-data, pretrain all variants, probe each; one comparison csv\n"
    "\n"
    "every command accepts --config <file> with key=value lines (flags win)\n"
    "and is deterministic given --seed. FUSMAE_OUT sets the default output root.\n";
}  // namespace

int dispatch(int argc, const char* const* argv) {
    if (argc < 2) {
        std::cerr << kUsage;
        return exit_usage;
    }
    const std::string command = argv[1];
    if (command == "--help" || command == "help" || command == "-h") {
        std::cout << kUsage;
        return exit_ok;
    }
    try {
        const Flags flags = Flags::parse(argc, argv, 2);
        if (command == "gen-data") return cmd_gen_data(flags);
        if (command == "pretrain") return cmd_pretrain(flags);
        if (command == "probe") return cmd_probe(flags);
        if (command == "finetune") return cmd_finetune(flags);
        if (command == "inspect-attention") return cmd_inspect_attention(flags);
        if (command == "grad-check") return cmd_grad_check(flags);
        if (command == "bench") return cmd_bench(flags);
        std::cerr << "unknown command '" << command << "'\n\n" << kUsage;
        return exit_usage;
    } catch (const NumericsError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return exit_numeric_abort;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    }
}

}  // namespace fusmae::cli
