#include "seam/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seam/data.hpp"
#include "seam/errors.hpp"
#include "seam/evaluation.hpp"
#include "seam/masking.hpp"
#include "seam/model.hpp"
#include "seam/reengineer.hpp"
#include "seam/rng.hpp"
#include "seam/serialize.hpp"
#include "seam/sparse.hpp"

namespace seam::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) { return json(v).dump(); }

/// Text artifacts share the tensor files' write discipline: a temporary
/// sibling renamed into place, so readers never see a partial file.
void write_text(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp + " for writing");
        }
        out << content;
        out.flush();
        if (!out) {
            throw IoError("short write to " + tmp);
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename " + tmp + " into place");
    }
}

void write_json_file(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("config file " + path + ": expected a JSON object");
    }
    return j;
}

/// Applies precedence CLI flag > config-file key > default. Keys mirror the
/// long flag names without the leading dashes; unknown keys are rejected
/// before any work starts.
class Overlay {
  public:
    Overlay(const CLI::App& cmd, const std::string& config_path) : cmd_(cmd), path_(config_path) {
        if (!path_.empty()) {
            file_ = load_config_file(path_);
        }
    }

    template <typename T> void pull(const std::string& flag, T& value) {
        const std::string key = flag.substr(2);
        known_.push_back(key);
        if (file_.is_null() || !file_.contains(key) || cmd_.count(flag) > 0) {
            return;
        }
        try {
            value = file_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config file " + path_ + ": key '" + key +
                                  "' has the wrong type");
        }
    }

    void finish() const {
        if (file_.is_null()) {
            return;
        }
        for (const auto& [key, value] : file_.items()) {
            if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
                throw ValidationError("config file " + path_ + ": unknown key '" + key + "'");
            }
        }
    }

  private:
    const CLI::App& cmd_;
    std::string path_;
    json file_;
    std::vector<std::string> known_;
};

struct DataOpts {
    std::string format = "idx";
    std::string images, labels;
    std::vector<std::string> batches;
    double split = 0.8;
    std::int64_t limit = 0;
};

void add_data_flags(CLI::App& cmd, DataOpts& d) {
    cmd.add_option("--format", d.format, "dataset format: idx | cifar")->capture_default_str();
    cmd.add_option("--images", d.images, "IDX image file");
    cmd.add_option("--labels", d.labels, "IDX label file");
    cmd.add_option("--data", d.batches, "CIFAR binary batch file (repeatable)");
    cmd.add_option("--split", d.split, "train fraction of the loaded data")
        ->capture_default_str();
    cmd.add_option("--limit", d.limit, "keep only the first N samples, 0 = all")
        ->capture_default_str();
}

void pull_data(Overlay& o, DataOpts& d) {
    o.pull("--format", d.format);
    o.pull("--images", d.images);
    o.pull("--labels", d.labels);
    o.pull("--data", d.batches);
    o.pull("--split", d.split);
    o.pull("--limit", d.limit);
}

json data_json(const DataOpts& d) {
    return json{{"format", d.format}, {"images", d.images},   {"labels", d.labels},
                {"data", d.batches},  {"split", d.split},     {"limit", d.limit}};
}

struct TargetOpts {
    std::string target;
    std::string superclasses;
    std::string negatives = "balanced";
};

void add_target_flags(CLI::App& cmd, TargetOpts& t) {
    cmd.add_option("--target", t.target, "target problem: binary:<class> | super:<name>");
    cmd.add_option("--superclasses", t.superclasses, "superclass map JSON, for super:<name>");
    cmd.add_option("--negatives", t.negatives, "binary negative sampling: balanced | all")
        ->capture_default_str();
}

void pull_target(Overlay& o, TargetOpts& t) {
    o.pull("--target", t.target);
    o.pull("--superclasses", t.superclasses);
    o.pull("--negatives", t.negatives);
}

json target_json(const TargetOpts& t) {
    return json{{"target", t.target},
                {"superclasses", t.superclasses},
                {"negatives", t.negatives}};
}

struct LoadedData {
    data::SplitPair parts;
    std::int64_t n_classes = 0;
};

LoadedData load_and_split(const DataOpts& d, std::uint64_t seed) {
    if (!(d.split > 0.0 && d.split < 1.0)) {
        throw ValidationError("--split must lie in (0,1), got " + fmt(d.split));
    }
    data::DatasetSource src;
    if (d.format == "idx") {
        if (d.images.empty() || d.labels.empty()) {
            throw ValidationError("--format idx needs --images and --labels");
        }
        src = data::load_idx(d.images, d.labels);
    } else if (d.format == "cifar") {
        if (d.batches.empty()) {
            throw ValidationError("--format cifar needs at least one --data file");
        }
        src = data::load_cifar_binary(d.batches);
    } else {
        throw ValidationError("--format must be idx or cifar, got '" + d.format + "'");
    }
    data::Dataset ds = std::move(src.data);
    if (d.limit > 0 && d.limit < ds.size()) {
        std::vector<std::size_t> rows(static_cast<std::size_t>(d.limit));
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        ds = data::subset(ds, rows);
    }
    Rng rng(seed);
    LoadedData out;
    out.parts = data::split(ds, d.split, rng);
    out.n_classes = src.n_classes;
    return out;
}

data::TargetProblem build_target(const TargetOpts& t, const data::SplitPair& parts,
                                 std::int64_t n_classes, std::uint64_t seed) {
    if (t.target.empty()) {
        throw ValidationError("--target is required: binary:<class> | super:<name>");
    }
    const auto colon = t.target.find(':');
    const std::string kind = t.target.substr(0, colon);
    const std::string value = colon == std::string::npos ? "" : t.target.substr(colon + 1);
    if (kind == "binary") {
        std::int64_t cls = 0;
        std::size_t pos = 0;
        try {
            cls = std::stoll(value, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (value.empty() || pos != value.size()) {
            throw ValidationError("--target binary:<class> needs an integer class, got '" +
                                  value + "'");
        }
        data::NegativeSampling policy;
        if (t.negatives == "balanced") {
            policy = data::NegativeSampling::balanced;
        } else if (t.negatives == "all") {
            policy = data::NegativeSampling::all;
        } else {
            throw ValidationError("--negatives must be balanced or all, got '" + t.negatives +
                                  "'");
        }
        Rng rng(seed);
        return data::build_binary_target(parts.train, parts.test, n_classes, cls, policy, rng);
    }
    if (kind == "super") {
        if (value.empty()) {
            throw ValidationError("--target super:<name> needs a superclass name");
        }
        if (t.superclasses.empty()) {
            throw ValidationError("--target super:<name> needs --superclasses <map.json>");
        }
        const auto map = data::SuperclassMap::from_json_file(t.superclasses, n_classes);
        return data::build_superclass_target(parts.train, parts.test, n_classes, map, value);
    }
    throw ValidationError("--target must start with binary: or super:, got '" + t.target + "'");
}

int effective_threads(int requested) {
    const char* env = std::getenv("SEAM_THREADS");
    if (!env) {
        return requested;
    }
    const std::string s(env);
    int cap = 0;
    std::size_t pos = 0;
    try {
        cap = std::stoi(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (s.empty() || pos != s.size() || cap < 1) {
        throw ValidationError("SEAM_THREADS must be a positive integer, got '" + s + "'");
    }
    return std::min(requested, cap);
}

std::int64_t retained_weights(const model::ModelGraph& m) {
    std::int64_t n = 0;
    for (const Tensor& w : m.maskable_weights()) {
        for (std::int64_t i = 0; i < w.size(); ++i) {
            if (w.at(i) != 0.0) {
                ++n;
            }
        }
    }
    return n;
}

void require_width(const model::ModelGraph& m, std::int64_t k, const std::string& flag) {
    if (m.output_width() != k) {
        throw ValidationError(flag + ": model outputs " + std::to_string(m.output_width()) +
                              " classes but the target problem has " + std::to_string(k));
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// train ---------------------------------------------------------------

struct TrainOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    DataOpts data;
    std::string arch = "small_cnn_mnist";
    int epochs = 5;
    double lr = 0.1;
    std::int64_t batch = 64;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string name = "original.seam";
};

void cmd_train(TrainOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    pull_data(o, opt.data);
    o.pull("--arch", opt.arch);
    o.pull("--epochs", opt.epochs);
    o.pull("--lr", opt.lr);
    o.pull("--batch", opt.batch);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();

    const auto arch = model::ArchitectureDescriptor::by_name(opt.arch);
    const auto loaded = load_and_split(opt.data, opt.seed);

    model::TrainConfig tc;
    tc.epochs = opt.epochs;
    tc.lr = opt.lr;
    tc.batch_size = opt.batch;
    tc.seed = opt.seed;
    const auto m = model::train_original(arch, loaded.parts.train, loaded.parts.test, tc);

    const std::string model_path = join_path(opt.out_dir, opt.name);
    io::save_model(m, model_path);
    const json report{{"command", "train"},
                      {"config", json{{"arch", opt.arch},
                                      {"epochs", opt.epochs},
                                      {"lr", opt.lr},
                                      {"batch", opt.batch},
                                      {"seed", opt.seed},
                                      {"data", data_json(opt.data)}}},
                      {"model", model_path},
                      {"train_samples", loaded.parts.train.size()},
                      {"test_samples", loaded.parts.test.size()},
                      {"train_acc", m.train_acc},
                      {"test_acc", m.test_acc}};
    write_json_file(join_path(opt.out_dir, "train.json"), report);
    out << "train: wrote " << model_path << " test_acc=" << fmt(m.test_acc)
        << " train_acc=" << fmt(m.train_acc) << "\n";
}

void register_train(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<TrainOpts>();
    CLI::App* cmd = app.add_subcommand("train", "train a model from scratch on a dataset");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    add_data_flags(*cmd, opt->data);
    cmd->add_option("--arch", opt->arch, "architecture preset name")->capture_default_str();
    cmd->add_option("--epochs", opt->epochs, "training epochs")->capture_default_str();
    cmd->add_option("--lr", opt->lr, "learning rate")->capture_default_str();
    cmd->add_option("--batch", opt->batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "model file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_train(*opt, out); });
}

// reengineer ----------------------------------------------------------

struct ReengineerOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    DataOpts data;
    TargetOpts target;
    double alpha = 1.0;
    double xi = 0.05;
    int rounds = 300;
    double tol = 1e-3;
    int window = 5;
    std::int64_t batch = 64;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

void cmd_reengineer(ReengineerOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    pull_data(o, opt.data);
    pull_target(o, opt.target);
    o.pull("--alpha", opt.alpha);
    o.pull("--xi", opt.xi);
    o.pull("--rounds", opt.rounds);
    o.pull("--tol", opt.tol);
    o.pull("--window", opt.window);
    o.pull("--batch", opt.batch);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto loaded = load_and_split(opt.data, opt.seed);
    const auto target = build_target(opt.target, loaded.parts, loaded.n_classes, opt.seed);

    reengineer::ReengineerConfig rc;
    rc.alpha = opt.alpha;
    rc.xi = opt.xi;
    rc.max_rounds = opt.rounds;
    rc.convergence_tol = opt.tol;
    rc.convergence_window = opt.window;
    rc.batch_size = opt.batch;
    rc.seed = opt.seed;
    auto result = reengineer::run_search(m, target, rc);

    const std::string model_path = join_path(opt.out_dir, "reengineered.seam");
    const std::string mask_path = join_path(opt.out_dir, "mask.seam");
    const std::string trace_path = join_path(opt.out_dir, "trace.csv");
    io::save_model(result.reengineered, model_path);
    const auto mask = masking::binarize(result.best.relevance);
    masking::save_mask(mask, mask_path);
    write_text(trace_path, result.trace.to_csv());

    const double retention = masking::retention_rate(mask);
    const double target_acc = model::accuracy(result.reengineered, target.test);
    const double original_acc = evaluation::mapped_accuracy(m, target, target.test);
    const json report{{"command", "reengineer"},
                      {"config", json{{"model", opt.model_path},
                                      {"alpha", opt.alpha},
                                      {"xi", opt.xi},
                                      {"rounds", opt.rounds},
                                      {"tol", opt.tol},
                                      {"window", opt.window},
                                      {"batch", opt.batch},
                                      {"seed", opt.seed},
                                      {"data", data_json(opt.data)},
                                      {"target", target_json(opt.target)}}},
                      {"model", model_path},
                      {"mask", mask_path},
                      {"trace", trace_path},
                      {"target_classes", target.k},
                      {"rounds_run", result.trace.rounds.size()},
                      {"best_round", result.trace.best_round},
                      {"converged", result.trace.converged},
                      {"retention_rate", retention},
                      {"target_test_acc", target_acc},
                      {"original_mapped_test_acc", original_acc}};
    write_json_file(join_path(opt.out_dir, "reengineer.json"), report);
    out << "reengineer: wrote " << model_path << " retention=" << fmt(retention)
        << " target_acc=" << fmt(target_acc) << " rounds=" << result.trace.rounds.size() << "\n";
}

void register_reengineer(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<ReengineerOpts>();
    CLI::App* cmd =
        app.add_subcommand("reengineer", "search a weight mask for a target problem");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "trained model file");
    add_data_flags(*cmd, opt->data);
    add_target_flags(*cmd, opt->target);
    cmd->add_option("--alpha", opt->alpha, "weight-retention pressure")->capture_default_str();
    cmd->add_option("--xi", opt->xi, "search learning rate")->capture_default_str();
    cmd->add_option("--rounds", opt->rounds, "maximum search rounds")->capture_default_str();
    cmd->add_option("--tol", opt->tol, "convergence tolerance")->capture_default_str();
    cmd->add_option("--window", opt->window, "convergence window")->capture_default_str();
    cmd->add_option("--batch", opt->batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->callback([opt, &out] { cmd_reengineer(*opt, out); });
}

// finetune ------------------------------------------------------------

struct FinetuneOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    DataOpts data;
    TargetOpts target;
    int epochs = 5;
    double lr = 0.01;
    std::int64_t batch = 64;
    double dropout = 0.0;
    bool freeze_mask = true;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string name = "finetuned.seam";
};

void cmd_finetune(FinetuneOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    pull_data(o, opt.data);
    pull_target(o, opt.target);
    o.pull("--epochs", opt.epochs);
    o.pull("--lr", opt.lr);
    o.pull("--batch", opt.batch);
    o.pull("--dropout", opt.dropout);
    o.pull("--freeze-mask", opt.freeze_mask);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    auto m = io::load_model(opt.model_path);
    const auto loaded = load_and_split(opt.data, opt.seed);
    const auto target = build_target(opt.target, loaded.parts, loaded.n_classes, opt.seed);

    const bool fresh_classifier = m.output_width() != target.k;
    if (fresh_classifier) {
        m = model::replace_classifier(m, target.k, opt.seed);
    }
    evaluation::FinetuneConfig fc;
    fc.epochs = opt.epochs;
    fc.lr = opt.lr;
    fc.batch_size = opt.batch;
    fc.seed = opt.seed;
    fc.freeze_mask = opt.freeze_mask;
    fc.dropout = opt.dropout;
    const auto ft = evaluation::finetune(m, target, fc);

    const std::string model_path = join_path(opt.out_dir, opt.name);
    io::save_model(ft, model_path);
    const json report{{"command", "finetune"},
                      {"config", json{{"model", opt.model_path},
                                      {"epochs", opt.epochs},
                                      {"lr", opt.lr},
                                      {"batch", opt.batch},
                                      {"dropout", opt.dropout},
                                      {"freeze-mask", opt.freeze_mask},
                                      {"seed", opt.seed},
                                      {"data", data_json(opt.data)},
                                      {"target", target_json(opt.target)}}},
                      {"model", model_path},
                      {"fresh_classifier", fresh_classifier},
                      {"retention_rate",
                       static_cast<double>(retained_weights(ft)) /
                           static_cast<double>(ft.maskable_count())},
                      {"train_acc", ft.train_acc},
                      {"test_acc", ft.test_acc}};
    write_json_file(join_path(opt.out_dir, "finetune.json"), report);
    out << "finetune: wrote " << model_path << " test_acc=" << fmt(ft.test_acc)
        << (fresh_classifier ? " (classifier replaced)" : "") << "\n";
}

void register_finetune(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<FinetuneOpts>();
    CLI::App* cmd = app.add_subcommand("finetune", "fine-tune a model on a target problem");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "model file; a fresh classifier is attached "
                                                "when the output width differs from the target");
    add_data_flags(*cmd, opt->data);
    add_target_flags(*cmd, opt->target);
    cmd->add_option("--epochs", opt->epochs, "fine-tuning epochs")->capture_default_str();
    cmd->add_option("--lr", opt->lr, "learning rate")->capture_default_str();
    cmd->add_option("--batch", opt->batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--dropout", opt->dropout, "dropout before the classifier")
        ->capture_default_str();
    cmd->add_flag("--freeze-mask,!--no-freeze-mask", opt->freeze_mask,
                  "keep weights that start at 0.0 pinned");
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "model file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_finetune(*opt, out); });
}

// attack --------------------------------------------------------------

struct AttackOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    DataOpts data;
    TargetOpts target;
    std::string kind = "fgsm";
    double epsilon = 8.0 / 255.0;
    int steps = 10;
    double step_size = 2.0 / 255.0;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string name = "adversarial.seam";
};

void cmd_attack(AttackOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    pull_data(o, opt.data);
    pull_target(o, opt.target);
    o.pull("--kind", opt.kind);
    o.pull("--epsilon", opt.epsilon);
    o.pull("--steps", opt.steps);
    o.pull("--step-size", opt.step_size);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto loaded = load_and_split(opt.data, opt.seed);
    const auto target = build_target(opt.target, loaded.parts, loaded.n_classes, opt.seed);

    evaluation::AttackConfig ac;
    ac.kind = opt.kind;
    ac.epsilon = opt.epsilon;
    ac.steps = opt.steps;
    ac.step_size = opt.step_size;
    ac.seed = opt.seed;
    const auto set = evaluation::build_adversarial_set(m, target, ac);

    const std::string set_path = join_path(opt.out_dir, opt.name);
    evaluation::save_adversarial_set(set, set_path);
    const json report{{"command", "attack"},
                      {"config", json{{"model", opt.model_path},
                                      {"attack", ac.to_json()},
                                      {"seed", opt.seed},
                                      {"data", data_json(opt.data)},
                                      {"target", target_json(opt.target)}}},
                      {"set", set_path},
                      {"samples", set.size()},
                      {"source_checksum", set.source_checksum}};
    write_json_file(join_path(opt.out_dir, "attack.json"), report);
    out << "attack: wrote " << set_path << " samples=" << set.size() << "\n";
}

void register_attack(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<AttackOpts>();
    CLI::App* cmd =
        app.add_subcommand("attack", "build an adversarial set from a model's mistakes");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "source model file");
    add_data_flags(*cmd, opt->data);
    add_target_flags(*cmd, opt->target);
    cmd->add_option("--kind", opt->kind, "attack: fgsm | pgd")->capture_default_str();
    cmd->add_option("--epsilon", opt->epsilon, "L-inf perturbation budget")
        ->capture_default_str();
    cmd->add_option("--steps", opt->steps, "PGD steps")->capture_default_str();
    cmd->add_option("--step-size", opt->step_size, "PGD step size")->capture_default_str();
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "adversarial set file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_attack(*opt, out); });
}

// eval ----------------------------------------------------------------

struct EvalOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    DataOpts data;
    TargetOpts target;
    std::string adv;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string name = "eval.json";
};

void cmd_eval(EvalOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    pull_data(o, opt.data);
    pull_target(o, opt.target);
    o.pull("--adv", opt.adv);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto loaded = load_and_split(opt.data, opt.seed);
    const auto target = build_target(opt.target, loaded.parts, loaded.n_classes, opt.seed);
    const bool direct = m.output_width() == target.k;

    evaluation::MetricsReport rep;
    rep.acc = direct ? model::accuracy(m, target.test)
                     : evaluation::mapped_accuracy(m, target, target.test);
    rep.retention_rate = static_cast<double>(retained_weights(m)) /
                         static_cast<double>(m.maskable_count());
    rep.flops = sparse::count_flops(m, false).total;
    if (!opt.adv.empty()) {
        const auto set = evaluation::load_adversarial_set(opt.adv);
        rep.dir = direct ? evaluation::dir(m, set) : evaluation::mapped_dir(m, target, set);
    }
    rep.config = json{{"model", opt.model_path}, {"adv", opt.adv},
                      {"seed", opt.seed},        {"data", data_json(opt.data)},
                      {"target", target_json(opt.target)}, {"direct", direct}};

    const std::string path = join_path(opt.out_dir, opt.name);
    write_json_file(path, rep.to_json());
    out << "eval: wrote " << path << " acc=" << fmt(rep.acc);
    if (rep.dir >= 0.0) {
        out << " dir=" << fmt(rep.dir);
    }
    out << "\n";
}

void register_eval(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<EvalOpts>();
    CLI::App* cmd = app.add_subcommand("eval", "measure accuracy and defect inheritance");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "model file");
    add_data_flags(*cmd, opt->data);
    add_target_flags(*cmd, opt->target);
    cmd->add_option("--adv", opt->adv, "adversarial set file; enables the dir metric");
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "report file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_eval(*opt, out); });
}

// flops ---------------------------------------------------------------

struct FlopsOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    std::string out_dir = ".";
};

void cmd_flops(FlopsOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    o.pull("--out", opt.out_dir);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto all_weights = sparse::count_flops(m, true);
    const auto nonzero_only = sparse::count_flops(m, false);
    const double reduction =
        all_weights.total > 0
            ? (1.0 - static_cast<double>(nonzero_only.total) /
                         static_cast<double>(all_weights.total)) *
                  100.0
            : 0.0;

    const std::string csv_path = join_path(opt.out_dir, "flops.csv");
    const std::string json_path = join_path(opt.out_dir, "flops.json");
    write_text(csv_path, sparse::flops_csv(all_weights, nonzero_only));
    const json report{{"command", "flops"},
                      {"config", json{{"model", opt.model_path}}},
                      {"dense", all_weights.to_json()},
                      {"sparse", nonzero_only.to_json()},
                      {"reduction_percent", reduction}};
    write_json_file(json_path, report);
    out << "flops: dense=" << all_weights.total << " sparse=" << nonzero_only.total
        << " reduction=" << fmt(reduction) << "%\n";
}

void register_flops(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<FlopsOpts>();
    CLI::App* cmd = app.add_subcommand("flops", "count multiply-accumulates per layer");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "model file");
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->callback([opt, &out] { cmd_flops(*opt, out); });
}

// bench ---------------------------------------------------------------

struct BenchOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    int batch = 16;
    int reps = 200;
    int warmup = 10;
    int threads = 1;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string name = "bench.json";
};

void cmd_bench(BenchOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    o.pull("--batch", opt.batch);
    o.pull("--reps", opt.reps);
    o.pull("--warmup", opt.warmup);
    o.pull("--threads", opt.threads);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto sm = sparse::to_sparse(m);
    sparse::BenchmarkConfig bc;
    bc.batch_size = opt.batch;
    bc.repetitions = opt.reps;
    bc.warmup = opt.warmup;
    bc.threads = effective_threads(opt.threads);
    bc.seed = opt.seed;
    const auto result = sparse::benchmark(m, sm, bc);

    const std::string path = join_path(opt.out_dir, opt.name);
    const json report{{"command", "bench"},
                      {"config", json{{"model", opt.model_path},
                                      {"batch", bc.batch_size},
                                      {"reps", bc.repetitions},
                                      {"warmup", bc.warmup},
                                      {"threads", bc.threads},
                                      {"seed", bc.seed}}},
                      {"result", result.to_json()}};
    write_json_file(path, report);
    out << "bench: dense=" << fmt(result.dense.mean_ms) << "ms sparse="
        << fmt(result.sparse.mean_ms) << "ms speedup=" << fmt(result.speedup()) << "\n";
}

void register_bench(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<BenchOpts>();
    CLI::App* cmd = app.add_subcommand("bench", "time dense vs sparse forward passes");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "model file");
    cmd->add_option("--batch", opt->batch, "benchmark batch size")->capture_default_str();
    cmd->add_option("--reps", opt->reps, "timed repetitions")->capture_default_str();
    cmd->add_option("--warmup", opt->warmup, "untimed warm-up passes")->capture_default_str();
    cmd->add_option("--threads", opt->threads, "worker threads, capped by SEAM_THREADS")
        ->capture_default_str();
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "report file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_bench(*opt, out); });
}

// export-sparse -------------------------------------------------------

struct ExportOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string model_path;
    std::string out_dir = ".";
    std::string name = "sparse.seam";
};

void cmd_export_sparse(ExportOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--model", opt.model_path);
    o.pull("--out", opt.out_dir);
    o.pull("--name", opt.name);
    o.finish();
    if (opt.model_path.empty()) {
        throw ValidationError("--model is required");
    }

    const auto m = io::load_model(opt.model_path);
    const auto sm = sparse::to_sparse(m);
    std::int64_t nnz = 0;
    for (const auto& layer : sm.layers) {
        if (layer.spec.has_params()) {
            nnz += layer.weight.nnz();
        }
    }
    const std::string path = join_path(opt.out_dir, opt.name);
    sparse::save_sparse_model(sm, path);
    const json report{{"command", "export-sparse"},
                      {"config", json{{"model", opt.model_path}}},
                      {"sparse_model", path},
                      {"stored_weights", nnz},
                      {"dense_weights", m.maskable_count()}};
    write_json_file(join_path(opt.out_dir, "export.json"), report);
    out << "export-sparse: wrote " << path << " stored=" << nnz << "/" << m.maskable_count()
        << " weights\n";
}

void register_export_sparse(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<ExportOpts>();
    CLI::App* cmd =
        app.add_subcommand("export-sparse", "store a model in compressed sparse row form");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--model", opt->model_path, "model file");
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->add_option("--name", opt->name, "sparse model file name")->capture_default_str();
    cmd->callback([opt, &out] { cmd_export_sparse(*opt, out); });
}

// report --------------------------------------------------------------

struct ReportOpts {
    CLI::App* cmd = nullptr;
    std::string config;
    std::string original;
    std::string reengineered;
    std::string finetuned_original;
    std::string finetuned_reengineered;
    std::string adv;
    DataOpts data;
    TargetOpts target;
    int batch = 16;
    int reps = 200;
    int warmup = 10;
    int threads = 1;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

void cmd_report(ReportOpts opt, std::ostream& out) {
    Overlay o(*opt.cmd, opt.config);
    o.pull("--original", opt.original);
    o.pull("--reengineered", opt.reengineered);
    o.pull("--finetuned-original", opt.finetuned_original);
    o.pull("--finetuned-reengineered", opt.finetuned_reengineered);
    o.pull("--adv", opt.adv);
    pull_data(o, opt.data);
    pull_target(o, opt.target);
    o.pull("--batch", opt.batch);
    o.pull("--reps", opt.reps);
    o.pull("--warmup", opt.warmup);
    o.pull("--threads", opt.threads);
    o.pull("--seed", opt.seed);
    o.pull("--out", opt.out_dir);
    o.finish();
    for (const auto& [flag, value] :
         std::initializer_list<std::pair<const char*, const std::string*>>{
             {"--original", &opt.original},
             {"--reengineered", &opt.reengineered},
             {"--finetuned-original", &opt.finetuned_original},
             {"--finetuned-reengineered", &opt.finetuned_reengineered},
             {"--adv", &opt.adv}}) {
        if (value->empty()) {
            throw ValidationError(std::string(flag) + " is required");
        }
    }

    const auto original = io::load_model(opt.original);
    const auto reengineered = io::load_model(opt.reengineered);
    const auto ft_original = io::load_model(opt.finetuned_original);
    const auto ft_reengineered = io::load_model(opt.finetuned_reengineered);
    const auto adv = evaluation::load_adversarial_set(opt.adv);
    const auto loaded = load_and_split(opt.data, opt.seed);
    const auto target = build_target(opt.target, loaded.parts, loaded.n_classes, opt.seed);
    require_width(reengineered, target.k, "--reengineered");
    require_width(ft_original, target.k, "--finetuned-original");
    require_width(ft_reengineered, target.k, "--finetuned-reengineered");

    const std::int64_t total_weights = original.maskable_count();
    const std::int64_t retained = retained_weights(reengineered);
    const double retention =
        static_cast<double>(retained) / static_cast<double>(total_weights);
    const double weight_reduction = (1.0 - retention) * 100.0;

    const double acc_original = evaluation::mapped_accuracy(original, target, target.test);
    const double acc_reengineered = model::accuracy(reengineered, target.test);

    const auto flops_original = sparse::count_flops(original, true).total;
    const auto flops_reengineered = sparse::count_flops(reengineered, false).total;
    const double flop_reduction =
        flops_original > 0 ? (1.0 - static_cast<double>(flops_reengineered) /
                                        static_cast<double>(flops_original)) *
                                 100.0
                           : 0.0;

    sparse::BenchmarkConfig bc;
    bc.batch_size = opt.batch;
    bc.repetitions = opt.reps;
    bc.warmup = opt.warmup;
    bc.threads = effective_threads(opt.threads);
    bc.seed = opt.seed;
    const auto latency = sparse::benchmark(reengineered, sparse::to_sparse(reengineered), bc);

    const double dir_original = evaluation::dir(ft_original, adv);
    const double dir_reengineered = evaluation::dir(ft_reengineered, adv);

    const json config{{"original", opt.original},
                      {"reengineered", opt.reengineered},
                      {"finetuned-original", opt.finetuned_original},
                      {"finetuned-reengineered", opt.finetuned_reengineered},
                      {"adv", opt.adv},
                      {"batch", bc.batch_size},
                      {"reps", bc.repetitions},
                      {"warmup", bc.warmup},
                      {"threads", bc.threads},
                      {"seed", opt.seed},
                      {"data", data_json(opt.data)},
                      {"target", target_json(opt.target)}};
    const json report{
        {"command", "report"},
        {"config", config},
        {"weights",
         json{{"original", total_weights},
              {"retained", retained},
              {"retention_rate", retention},
              {"reduction_percent", weight_reduction}}},
        {"accuracy",
         json{{"original", acc_original},
              {"reengineered", acc_reengineered},
              {"delta_pp", (acc_reengineered - acc_original) * 100.0}}},
        {"flops",
         json{{"original", flops_original},
              {"reengineered", flops_reengineered},
              {"reduction_percent", flop_reduction}}},
        {"latency", latency.to_json()},
        {"dir",
         json{{"finetuned_original", dir_original},
              {"finetuned_reengineered", dir_reengineered},
              {"gap_pp", (dir_original - dir_reengineered) * 100.0}}}};

    std::ostringstream csv;
    csv << "metric,original,reengineered\n";
    csv << "weights," << total_weights << "," << retained << "\n";
    csv << "flops," << flops_original << "," << flops_reengineered << "\n";
    csv << "test_acc," << fmt(acc_original) << "," << fmt(acc_reengineered) << "\n";
    csv << "dir," << fmt(dir_original) << "," << fmt(dir_reengineered) << "\n";
    csv << "latency_ms," << fmt(latency.dense.mean_ms) << "," << fmt(latency.sparse.mean_ms)
        << "\n";

    write_json_file(join_path(opt.out_dir, "report.json"), report);
    write_text(join_path(opt.out_dir, "report.csv"), csv.str());
    out << "report: weights -" << fmt(weight_reduction) << "% flops -" << fmt(flop_reduction)
        << "% acc " << fmt(acc_reengineered) << " dir gap " << fmt((dir_original - dir_reengineered) * 100.0)
        << "pp speedup " << fmt(latency.speedup()) << "x\n";
}

void register_report(CLI::App& app, std::ostream& out) {
    auto opt = std::make_shared<ReportOpts>();
    CLI::App* cmd = app.add_subcommand(
        "report", "compare an original and a re-engineered model side by side");
    opt->cmd = cmd;
    cmd->add_option("--config", opt->config, "JSON config file; explicit flags win");
    cmd->add_option("--original", opt->original, "trained original model");
    cmd->add_option("--reengineered", opt->reengineered, "re-engineered model");
    cmd->add_option("--finetuned-original", opt->finetuned_original,
                    "fine-tuned full-model baseline");
    cmd->add_option("--finetuned-reengineered", opt->finetuned_reengineered,
                    "fine-tuned re-engineered model");
    cmd->add_option("--adv", opt->adv, "adversarial set built from the original");
    add_data_flags(*cmd, opt->data);
    add_target_flags(*cmd, opt->target);
    cmd->add_option("--batch", opt->batch, "benchmark batch size")->capture_default_str();
    cmd->add_option("--reps", opt->reps, "benchmark repetitions")->capture_default_str();
    cmd->add_option("--warmup", opt->warmup, "benchmark warm-up passes")->capture_default_str();
    cmd->add_option("--threads", opt->threads, "worker threads, capped by SEAM_THREADS")
        ->capture_default_str();
    cmd->add_option("--seed", opt->seed, "RNG seed")->capture_default_str();
    cmd->add_option("--out", opt->out_dir, "output directory")->capture_default_str();
    cmd->callback([opt, &out] { cmd_report(*opt, out); });
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"re-engineering toolkit: train, mask-search, evaluate and package models"};
    app.name("seam");
    app.require_subcommand(1);
    register_train(app, out);
    register_reengineer(app, out);
    register_finetune(app, out);
    register_attack(app, out);
    register_eval(app, out);
    register_flops(app, out);
    register_bench(app, out);
    register_export_sparse(app, out);
    register_report(app, out);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "seam: numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "seam: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "seam: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

} // namespace seam::cli
