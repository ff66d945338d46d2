// Command-line surface: synthetic data generation, training, evaluation,
// gradient checking, and attention/activation dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmsarc/data.hpp"
#include "mmsarc/gradcheck.hpp"
#include "mmsarc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmsarc;

namespace {

// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure, 1 anything that should never reach the user.
constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kConfig = 2;
constexpr int kData = 3;
constexpr int kNumeric = 4;

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

struct SplitFiles {
    std::vector<MultimodalSample> train, val, test;
};

SplitFiles read_split_dir(const fs::path& dir) {
    SplitFiles s;
    s.train = read_jsonl((dir / "train.jsonl").string());
    s.val = read_jsonl((dir / "val.jsonl").string());
    s.test = read_jsonl((dir / "test.jsonl").string());
    return s;
}

int cmd_gen(const std::string& out_dir, long n, std::uint64_t seed, double attr_noise,
            double pixel_noise) {
    GeneratorConfig cfg;
    cfg.n_samples = n;
    cfg.seed = seed;
    cfg.attr_noise = attr_noise;
    cfg.pixel_noise = pixel_noise;
    cfg.validate();

    std::vector<MultimodalSample> all = generate_synthetic(cfg);
    std::vector<MultimodalSample> train, val, test;
    split_dataset(all, seed, train, val, test);

    fs::create_directories(out_dir);
    write_jsonl((fs::path(out_dir) / "train.jsonl").string(), train);
    write_jsonl((fs::path(out_dir) / "val.jsonl").string(), val);
    write_jsonl((fs::path(out_dir) / "test.jsonl").string(), test);
    std::printf("wrote %zu/%zu/%zu samples to %s\n", train.size(), val.size(), test.size(),
                out_dir.c_str());
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& variant_flag, bool quiet) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    if (!variant_flag.empty()) cfg.variant = variant_flag;
    cfg.validate();

    SplitFiles data = read_split_dir(data_dir);
    Vocabulary vocab = build_vocabulary();
    SarcasmModel model(cfg.model_config(vocab.size()), vocab, parse_variant(cfg.variant), cfg.seed);

    auto progress = [&](const EpochRecord& er) {
        if (quiet) return;
        std::fprintf(stderr, "epoch %2d/%d  train_loss %.4f  val_f1 %.4f  (%.1fs)\n", er.epoch,
                     cfg.epochs, er.train_loss, er.val.f1, er.wall_seconds);
    };
    RunRecord record = train_model(model, data.train, data.val, data.test, cfg, progress);

    fs::create_directories(out_dir);
    save_checkpoint(out_dir, model, cfg);
    write_text_file(fs::path(out_dir) / "run.json", record.to_json().dump(2) + "\n");
    write_text_file(fs::path(out_dir) / "metrics.json", record.metrics_json().dump() + "\n");

    std::printf("%s\n", record.test.to_json().dump().c_str());
    std::printf("best epoch %d (val f1 %.4f), total %.1fs\n", record.best_epoch,
                record.epochs.empty()
                    ? 0.0
                    : record.epochs[static_cast<std::size_t>(record.best_epoch - 1)].val.f1,
                record.total_wall_seconds);
    std::printf("%s\n", record.test.to_table().c_str());
    return kOk;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_path) {
    LoadedModel loaded = load_checkpoint(checkpoint_dir);
    std::vector<MultimodalSample> samples = read_jsonl(data_path);
    EvalResult r = evaluate(loaded.model, samples);
    std::printf("%s\n", r.metrics.to_json().dump().c_str());
    std::printf("mean_loss  %.6f\n", r.mean_loss);
    std::printf("%s\n", r.metrics.to_table().c_str());
    return kOk;
}

int cmd_gradcheck(double tol, std::uint64_t seed) {
    std::vector<GradCheckRow> rows = run_gradcheck(tol, seed);
    bool all_pass = true;
    std::printf("%-16s %-12s %8s  %s\n", "op", "max_err", "checked", "status");
    for (const auto& r : rows) {
        all_pass &= r.pass;
        std::printf("%-16s %-12.3e %8ld  %s\n", r.name.c_str(), r.max_err, r.checked,
                    r.pass ? "pass" : "FAIL");
    }
    std::printf("%s at tol %g\n", all_pass ? "all passed" : "FAILURES", tol);
    return all_pass ? kOk : kNumeric;
}

int cmd_dump_attention(const std::string& checkpoint_dir, const std::string& data_path,
                       const std::string& out_path) {
    LoadedModel loaded = load_checkpoint(checkpoint_dir);
    const SarcasmModel& model = loaded.model;
    std::vector<MultimodalSample> samples = read_jsonl(data_path);

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);

    NoGradGuard ng;
    for (const auto& s : samples) {
        ModelOutput mo = model.forward(s, nullptr);
        json j;
        j["id"] = s.id;
        j["label"] = s.label;
        if (s.image_class >= 0) j["image_class"] = s.image_class;
        j["y_hat"] = mo.y_hat;
        j["predicted"] = mo.label;
        if (mo.has_attention) {
            std::vector<std::string> attr_tokens;
            attr_tokens.push_back("[CLS]");
            for (const auto& t : s.attribute_tokens) attr_tokens.push_back(t);
            attr_tokens.push_back("[SEP]");
            j["attr_tokens"] = attr_tokens;
            j["alpha"] = mo.att.alpha.values();
        }
        if (mo.has_film) {
            json blocks = json::array();
            for (std::size_t b = 0; b < mo.film.blocks(); ++b)
                blocks.push_back(
                    {{"gamma", mo.film.gamma[b].values()}, {"beta", mo.film.beta[b].values()}});
            j["film"] = blocks;
        }
        if (!mo.acts.post_block.empty()) {
            json means = json::array();
            for (const Tensor& fm : mo.acts.post_block) {
                const long c = fm.dim(0), hw = fm.dim(1) * fm.dim(2);
                std::vector<double> ch(static_cast<std::size_t>(c), 0.0);
                for (long i = 0; i < c; ++i) {
                    double acc = 0.0;
                    for (long p = 0; p < hw; ++p)
                        acc += fm.values()[static_cast<std::size_t>(i * hw + p)];
                    ch[static_cast<std::size_t>(i)] = acc / static_cast<double>(hw);
                }
                means.push_back(ch);
            }
            j["act_means"] = means;
        }
        out << j.dump() << '\n';
        Graph::active().clear();
    }
    if (!out) throw DataError("write failed for " + out_path);
    std::printf("wrote %zu traces to %s\n", samples.size(), out_path.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal sarcasm detector: synthetic data, training, eval, diagnostics"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (train/val/test JSONL)");
    std::string gen_out = "data";
    long gen_n = 2500;
    std::uint64_t gen_seed = 7;
    double gen_attr_noise = 0.25, gen_pixel_noise = 0.15;
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();
    gen->add_option("--n", gen_n, "total number of samples")->capture_default_str();
    gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen->add_option("--attr-noise", gen_attr_noise, "attribute flip probability")
        ->capture_default_str();
    gen->add_option("--pixel-noise", gen_pixel_noise, "gaussian pixel noise sigma")
        ->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "train a model and save the best checkpoint");
    std::string train_config, train_data = "data", train_out = "runs/out", train_variant;
    bool train_quiet = false;
    train->add_option("--config", train_config, "training config file (defaults when omitted)");
    train->add_option("--data", train_data, "directory with train/val/test JSONL")
        ->capture_default_str();
    train->add_option("--out", train_out, "output directory for checkpoint and records")
        ->capture_default_str();
    train->add_option("--variant", train_variant,
                      "full|no-film|no-coatt|no-cls|text-only|image-only (overrides config)");
    train->add_flag("--quiet", train_quiet, "suppress per-epoch progress on stderr");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL file");
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "JSONL data file")->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every operator");
    double gc_tol = 1e-4;
    std::uint64_t gc_seed = 1;
    gradcheck->add_option("--tol", gc_tol, "max scaled error tolerated")->capture_default_str();
    gradcheck->add_option("--seed", gc_seed, "rng seed")->capture_default_str();

    // dump-attention
    auto* dump = app.add_subcommand("dump-attention",
                                    "write per-sample attention and FiLM traces as JSONL");
    std::string dump_ckpt, dump_data, dump_out;
    dump->add_option("--checkpoint", dump_ckpt, "checkpoint directory")->required();
    dump->add_option("--data", dump_data, "JSONL data file")->required();
    dump->add_option("--out", dump_out, "output JSONL path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_out, gen_n, gen_seed, gen_attr_noise, gen_pixel_noise);
        if (train->parsed())
            return cmd_train(train_config, train_data, train_out, train_variant, train_quiet);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_tol, gc_seed);
        if (dump->parsed()) return cmd_dump_attention(dump_ckpt, dump_data, dump_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumeric;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kData;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kData;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return kData;
    } catch (const MaskError& e) {
        std::fprintf(stderr, "mask violation: %s\n", e.what());
        return kData;
    } catch (const Error& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternal;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return kInternal;
    }
    return kInternal;  // unreachable: require_subcommand(1)
}
