#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsarc/checkpoint.hpp"
#include "mmsarc/data.hpp"
#include "mmsarc/metrics.hpp"
#include "mmsarc/model.hpp"
#include "mmsarc/optim.hpp"

namespace mmsarc {

/// Flat `key = value` training configuration. Every field is addressable in
/// the config file; unknown keys are rejected.
struct TrainConfig {
    double film_lr = 3e-4;
    double encoder_lr = 1e-6;
    double coattention_lr = 1e-4;
    int batch_size = 32;
    double weight_decay = 1e-2;
    double clip_norm = 1.0;
    int max_len = 360;
    double dropout = 0.1;
    int epochs = 15;
    std::uint64_t seed = 7;
    int d = 64;
    int layers = 2;
    int heads = 4;
    int layer_tap = 1;
    int q_film_dim = 1024;
    int channels = 32;
    int gru_dim = 100;
    int gru_hidden = 64;
    std::string variant = "full";

    void validate() const {
        if (film_lr <= 0 || encoder_lr <= 0 || coattention_lr <= 0)
            throw ConfigError("config: learning rates must be > 0");
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
        if (weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
        if (clip_norm <= 0) throw ConfigError("config: clip_norm must be > 0");
        parse_variant(variant);
        model_config(3).validate();  // dims, dropout, tap range (placeholder vocab)
    }

    ModelConfig model_config(int vocab_size) const {
        ModelConfig mc;
        mc.d = d;
        mc.layers = layers;
        mc.heads = heads;
        mc.layer_tap = layer_tap;
        mc.max_len = max_len;
        mc.gru_dim = gru_dim;
        mc.gru_hidden = gru_hidden;
        mc.channels = channels;
        mc.q_film_dim = q_film_dim;
        mc.dropout = dropout;
        mc.vocab_size = vocab_size;
        return mc;
    }

    nlohmann::json to_json() const {
        return {{"film_lr", film_lr},
                {"encoder_lr", encoder_lr},
                {"coattention_lr", coattention_lr},
                {"batch_size", batch_size},
                {"weight_decay", weight_decay},
                {"clip_norm", clip_norm},
                {"max_len", max_len},
                {"dropout", dropout},
                {"epochs", epochs},
                {"seed", seed},
                {"d", d},
                {"layers", layers},
                {"heads", heads},
                {"layer_tap", layer_tap},
                {"q_film_dim", q_film_dim},
                {"channels", channels},
                {"gru_dim", gru_dim},
                {"gru_hidden", gru_hidden},
                {"variant", variant}};
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + v + "' for key '" + key + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value '" + v + "' for key '" + key + "'");
    }
}

}  // namespace detail

inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        if (key == "film_lr") cfg.film_lr = detail::parse_double(key, val);
        else if (key == "encoder_lr") cfg.encoder_lr = detail::parse_double(key, val);
        else if (key == "coattention_lr") cfg.coattention_lr = detail::parse_double(key, val);
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::parse_int(key, val));
        else if (key == "weight_decay") cfg.weight_decay = detail::parse_double(key, val);
        else if (key == "clip_norm") cfg.clip_norm = detail::parse_double(key, val);
        else if (key == "max_len") cfg.max_len = static_cast<int>(detail::parse_int(key, val));
        else if (key == "dropout") cfg.dropout = detail::parse_double(key, val);
        else if (key == "epochs") cfg.epochs = static_cast<int>(detail::parse_int(key, val));
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, val));
        else if (key == "d") cfg.d = static_cast<int>(detail::parse_int(key, val));
        else if (key == "layers") cfg.layers = static_cast<int>(detail::parse_int(key, val));
        else if (key == "heads") cfg.heads = static_cast<int>(detail::parse_int(key, val));
        else if (key == "layer_tap") cfg.layer_tap = static_cast<int>(detail::parse_int(key, val));
        else if (key == "q_film_dim") cfg.q_film_dim = static_cast<int>(detail::parse_int(key, val));
        else if (key == "channels") cfg.channels = static_cast<int>(detail::parse_int(key, val));
        else if (key == "gru_dim") cfg.gru_dim = static_cast<int>(detail::parse_int(key, val));
        else if (key == "gru_hidden") cfg.gru_hidden = static_cast<int>(detail::parse_int(key, val));
        else if (key == "variant") cfg.variant = val;
        else
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_train_config(ss.str());
}

inline std::string serialize_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "# learning-rate groups: film_lr covers the GRU, the film generator and the\n"
        << "# conv pipeline; encoder_lr covers the embedding tables and encoder stack;\n"
        << "# coattention_lr covers the bilinear W and the fusion head.\n";
    out << "film_lr = " << cfg.film_lr << "\n";
    out << "encoder_lr = " << cfg.encoder_lr << "\n";
    out << "coattention_lr = " << cfg.coattention_lr << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "weight_decay = " << cfg.weight_decay << "\n";
    out << "clip_norm = " << cfg.clip_norm << "\n";
    out << "max_len = " << cfg.max_len << "\n";
    out << "dropout = " << cfg.dropout << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "d = " << cfg.d << "\n";
    out << "layers = " << cfg.layers << "\n";
    out << "heads = " << cfg.heads << "\n";
    out << "layer_tap = " << cfg.layer_tap << "\n";
    out << "q_film_dim = " << cfg.q_film_dim << "\n";
    out << "channels = " << cfg.channels << "\n";
    out << "gru_dim = " << cfg.gru_dim << "\n";
    out << "gru_hidden = " << cfg.gru_hidden << "\n";
    out << "variant = " << cfg.variant << "\n";
    return out.str();
}

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    MetricsReport val;
    double wall_seconds = 0.0;
    std::vector<double> preclip_norms;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"train_loss", train_loss},
                {"val", val.to_json()},
                {"wall_seconds", wall_seconds},
                {"preclip_norms", preclip_norms}};
    }
};

struct RunRecord {
    TrainConfig config;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;  // 1-based; argmax val F1, ties earliest
    MetricsReport test;
    double total_wall_seconds = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json eps = nlohmann::json::array();
        for (const auto& e : epochs) eps.push_back(e.to_json());
        return {{"config", config.to_json()},
                {"epochs", eps},
                {"best_epoch", best_epoch},
                {"test", test.to_json()},
                {"total_wall_seconds", total_wall_seconds}};
    }

    /// The seed-deterministic portion (everything except wall times).
    nlohmann::json metrics_json() const {
        nlohmann::json eps = nlohmann::json::array();
        for (const auto& e : epochs)
            eps.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val", e.val.to_json()},
                           {"preclip_norms", e.preclip_norms}});
        return {{"config", config.to_json()},
                {"epochs", eps},
                {"best_epoch", best_epoch},
                {"test", test.to_json()}};
    }
};

struct EvalResult {
    double mean_loss = 0.0;
    MetricsReport metrics;
};

/// Eval-mode pass over a dataset: no dropout, no graph recording.
inline EvalResult evaluate(const SarcasmModel& model,
                           const std::vector<MultimodalSample>& samples) {
    if (samples.empty()) throw ContractError("evaluate: empty sample set");
    NoGradGuard ng;
    std::vector<int> preds, labels;
    preds.reserve(samples.size());
    labels.reserve(samples.size());
    double loss_sum = 0.0;
    for (const auto& s : samples) {
        ModelOutput out = model.forward(s, nullptr);
        preds.push_back(out.label);
        labels.push_back(s.label);
        loss_sum += model.loss(out, s.label).value();
    }
    EvalResult r;
    r.mean_loss = loss_sum / static_cast<double>(samples.size());
    r.metrics = compute_metrics(preds, labels);
    return r;
}

/// Full training regime: AdamW over three learning-rate groups, global-norm
/// clipping before every step, seeded per-epoch shuffling, epoch-level val
/// evaluation, best-val-F1 parameters restored at the end, then test eval.
/// on_epoch (optional) observes each completed EpochRecord, e.g. for progress
/// output; it must not mutate the model.
inline RunRecord train_model(SarcasmModel& model, const std::vector<MultimodalSample>& train,
                             const std::vector<MultimodalSample>& val,
                             const std::vector<MultimodalSample>& test, const TrainConfig& cfg,
                             const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) throw ContractError("train_model: empty training set");

    SarcasmModel::Groups g = model.param_groups();
    AdamGroups opt({{"film", g.film, cfg.film_lr, cfg.weight_decay},
                    {"encoder", g.encoder, cfg.encoder_lr, cfg.weight_decay},
                    {"coattention", g.coattention, cfg.coattention_lr, cfg.weight_decay}});
    std::vector<Tensor> all_params = opt.all_params();

    RunRecord record;
    record.config = cfg;
    const auto run_start = std::chrono::steady_clock::now();

    auto named = model.named_params();
    std::vector<std::vector<double>> best_snapshot;
    double best_f1 = -1.0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord er;
        er.epoch = epoch;

        Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng drop_rng(mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch)));

        double loss_weighted_sum = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Graph::active().clear();
            std::vector<Tensor> losses;
            losses.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const MultimodalSample& s = train[order[i]];
                ModelOutput out = model.forward(s, &drop_rng);
                losses.push_back(model.loss(out, s.label));
            }
            Tensor batch_loss = mean_scalars(losses);
            const double lv = batch_loss.value();
            if (!std::isfinite(lv))
                throw NumericError("non-finite loss in epoch " + std::to_string(epoch) +
                                   ", batch starting at shuffled index " + std::to_string(start) +
                                   " (seed " + std::to_string(cfg.seed) + ")");
            backward(batch_loss);
            er.preclip_norms.push_back(clip_global_norm(all_params, cfg.clip_norm));
            opt.step();
            opt.zero_grad();
            loss_weighted_sum += lv * static_cast<double>(end - start);
        }
        Graph::active().clear();
        er.train_loss = loss_weighted_sum / static_cast<double>(train.size());

        if (!val.empty()) er.val = evaluate(model, val).metrics;
        er.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (er.val.f1 > best_f1) {  // strict: ties keep the earliest epoch
            best_f1 = er.val.f1;
            record.best_epoch = epoch;
            best_snapshot.clear();
            for (const auto& [name, t] : named) best_snapshot.push_back(t.values());
        }
        if (on_epoch) on_epoch(er);
        record.epochs.push_back(std::move(er));
    }

    if (!best_snapshot.empty())
        for (std::size_t i = 0; i < named.size(); ++i)
            named[i].second.impl()->values = best_snapshot[i];

    if (!test.empty()) record.test = evaluate(model, test).metrics;
    record.total_wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    return record;
}

/// Checkpoint directory: manifest.json + params.bin + config.txt + vocab.txt.
inline void save_checkpoint(const std::filesystem::path& dir, const SarcasmModel& model,
                            const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    save_params(dir, model.named_params());
    TrainConfig out_cfg = cfg;
    out_cfg.variant = variant_name(model.variant());
    std::ofstream cf(dir / "config.txt");
    if (!cf) throw CheckpointError("cannot write " + (dir / "config.txt").string());
    cf << serialize_train_config(out_cfg);
    model.vocab().save((dir / "vocab.txt").string());
}

struct LoadedModel {
    TrainConfig config;
    SarcasmModel model;
};

inline LoadedModel load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "config.txt"))
        throw CheckpointError("no checkpoint at " + dir.string() + " (missing config.txt)");
    TrainConfig cfg = load_train_config(dir / "config.txt");
    Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());
    SarcasmModel model(cfg.model_config(vocab.size()), vocab, parse_variant(cfg.variant), cfg.seed);
    load_params(dir, model.named_params());
    return LoadedModel{std::move(cfg), std::move(model)};
}

}  // namespace mmsarc
