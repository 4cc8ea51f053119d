#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "leafnet/cartpole.hpp"
#include "leafnet/checkpoint.hpp"
#include "leafnet/datasets.hpp"
#include "leafnet/experiments.hpp"
#include "leafnet/gradcheck.hpp"
#include "leafnet/lstm.hpp"
#include "leafnet/network.hpp"

namespace fs = std::filesystem;

namespace leafnet::cli {

namespace {

const std::vector<std::string> kExperiments = {"mlp-mnist", "cnn-cifar10", "lstm-char",
                                               "qnet-cartpole"};

// Salts for streams derived from the run seed.
constexpr std::uint64_t kInitSalt = 0x1417;
constexpr std::uint64_t kSubsetSalt = 0x5AB5E7;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct TrainOptions {
    std::string experiment;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::string> optimizer;
    std::optional<double> momentum;
    std::optional<double> weight_decay;
    bool selective_sgd = false;
    std::optional<std::size_t> trial_iterations;
    std::optional<std::size_t> reselect_every;
    std::uint64_t seed = 0;
    std::optional<std::size_t> subset;
    int precision = 32;
    std::string data_dir = "data";
    std::string out_dir = "run";
    std::optional<std::string> corpus;
    std::optional<std::size_t> hidden;
    std::optional<std::size_t> seq_len;
    std::optional<std::size_t> max_chars;
    std::optional<std::size_t> episodes;
    std::optional<double> gamma;
    bool no_replay = false;
    bool record_time = false;
    std::optional<double> selected_lr;  // written by runs, ignored on input
};

/// Every setting of a run after per-experiment defaults are applied.
struct Resolved {
    std::string experiment;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr = 0.0;
    double momentum = 0.0;
    double weight_decay = 0.0;
    bool selective_sgd = false;
    std::size_t trial_iterations = 50;
    std::size_t reselect_every = 0;
    std::uint64_t seed = 0;
    std::size_t subset = 0;
    int precision = 32;
    std::string data_dir;
    std::string out_dir;
    std::string corpus;
    std::size_t hidden = 0;
    std::size_t seq_len = 0;
    std::size_t max_chars = 0;
    std::size_t episodes = 0;
    double gamma = 0.0;
    bool replay = true;
    bool record_time = false;

    TrainConfig train_config() const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.optimizer = optimizer;
        c.hyper.learning_rate = lr;
        c.hyper.momentum = momentum;
        c.hyper.weight_decay = weight_decay;
        c.seed = seed;
        if (selective_sgd) {
            SelectiveSgdConfig s;
            s.trial_iterations = trial_iterations;
            s.reselect_every = reselect_every;
            c.selective_sgd = s;
        }
        return c;
    }
};

Resolved resolve(const TrainOptions& o) {
    Resolved r;
    r.experiment = o.experiment;
    r.seed = o.seed;
    r.precision = o.precision;
    r.data_dir = o.data_dir;
    r.out_dir = o.out_dir;
    r.selective_sgd = o.selective_sgd;
    r.trial_iterations = o.trial_iterations.value_or(50);
    r.reselect_every = o.reselect_every.value_or(0);
    r.subset = o.subset.value_or(0);
    r.weight_decay = o.weight_decay.value_or(0.0);
    r.record_time = o.record_time;
    r.replay = !o.no_replay;

    std::string optimizer = "sgd";
    if (r.experiment == "mlp-mnist") {
        r.epochs = 10;
        r.batch_size = 100;
        r.lr = 0.1;
        r.momentum = 0.9;
    } else if (r.experiment == "cnn-cifar10") {
        r.epochs = 10;
        r.batch_size = 50;
        r.lr = 1e-2;
        r.momentum = 0.9;
    } else if (r.experiment == "lstm-char") {
        r.epochs = 10;
        r.batch_size = 32;
        optimizer = "rmsprop";
        r.lr = 1e-2;
        r.hidden = 30;
        r.seq_len = 50;
    } else if (r.experiment == "qnet-cartpole") {
        r.batch_size = 32;
        optimizer = "adam";
        r.lr = 1e-3;
        r.hidden = 64;
        r.episodes = 2000;
        r.gamma = 0.99;
    } else {
        throw ConfigError("unknown experiment '" + r.experiment +
                          "' (expected mlp-mnist, cnn-cifar10, lstm-char or qnet-cartpole)");
    }
    r.epochs = o.epochs.value_or(r.epochs);
    r.batch_size = o.batch_size.value_or(r.batch_size);
    r.optimizer = parse_optimizer(o.optimizer.value_or(optimizer));
    r.lr = o.lr.value_or(r.lr);
    r.momentum = o.momentum.value_or(r.optimizer == OptimizerKind::sgd ? r.momentum : 0.0);
    r.hidden = o.hidden.value_or(r.hidden);
    r.seq_len = o.seq_len.value_or(r.seq_len);
    r.max_chars = o.max_chars.value_or(0);
    r.episodes = o.episodes.value_or(r.episodes);
    r.gamma = o.gamma.value_or(r.gamma);
    r.corpus = o.corpus.value_or((fs::path(r.data_dir) / "shakespeare.txt").string());
    if (r.precision != 32 && r.precision != 64) {
        throw ConfigError("precision must be 32 or 64");
    }
    return r;
}

void write_snapshot(const Resolved& r, const std::optional<double>& selected_lr) {
    std::ofstream f(fs::path(r.out_dir) / "config.ini");
    f << "# leafnet train configuration; rerun with: leafnet train --config <this file>\n";
    f << "experiment = " << r.experiment << "\n";
    f << "seed = " << r.seed << "\n";
    f << "precision = " << r.precision << "\n";
    f << "data-dir = " << r.data_dir << "\n";
    f << "out-dir = " << r.out_dir << "\n";
    f << "epochs = " << r.epochs << "\n";
    f << "batch-size = " << r.batch_size << "\n";
    f << "optimizer = " << optimizer_name(r.optimizer) << "\n";
    f << "lr = " << exact(r.lr) << "\n";
    f << "momentum = " << exact(r.momentum) << "\n";
    f << "weight-decay = " << exact(r.weight_decay) << "\n";
    f << "selective-sgd = " << (r.selective_sgd ? "true" : "false") << "\n";
    f << "trial-iterations = " << r.trial_iterations << "\n";
    f << "reselect-every = " << r.reselect_every << "\n";
    f << "subset = " << r.subset << "\n";
    if (r.experiment == "lstm-char") {
        f << "corpus = " << r.corpus << "\n";
        f << "hidden = " << r.hidden << "\n";
        f << "seq-len = " << r.seq_len << "\n";
        f << "max-chars = " << r.max_chars << "\n";
    }
    if (r.experiment == "qnet-cartpole") {
        f << "hidden = " << r.hidden << "\n";
        f << "episodes = " << r.episodes << "\n";
        f << "gamma = " << exact(r.gamma) << "\n";
        f << "no-replay = " << (r.replay ? "false" : "true") << "\n";
    }
    if (selected_lr) {
        f << "selected-lr = " << exact(*selected_lr) << "\n";
    }
}

class MetricsWriter {
public:
    MetricsWriter(const Resolved& r)
        : csv_(fs::path(r.out_dir) / "metrics.csv"),
          timing_(fs::path(r.out_dir) / "timing.csv"),
          record_time_(r.record_time) {
        csv_ << "epoch,train_loss,train_err,test_loss,test_err,seconds\n";
        timing_ << "epoch,seconds\n";
    }

    void row(const EpochMetrics& m) {
        csv_ << m.epoch << ',' << num(m.train_loss) << ',' << num(m.train_err) << ','
             << num(m.test_loss) << ',' << num(m.test_err) << ','
             << num(record_time_ ? m.seconds : 0.0) << '\n';
        csv_.flush();
        timing_ << m.epoch << ',' << num(m.seconds) << '\n';
        timing_.flush();
    }

private:
    std::ofstream csv_;
    std::ofstream timing_;
    bool record_time_;
};

void print_epoch(std::ostream& out, const EpochMetrics& m) {
    out << "epoch " << m.epoch << "  train loss " << num(m.train_loss) << "  train err "
        << num(m.train_err) << "  test loss " << num(m.test_loss) << "  test err "
        << num(m.test_err) << "  (" << num(m.seconds) << " s)\n";
    out.flush();
}

template <typename T>
int train_classifier(const Resolved& r, std::ostream& out) {
    const bool mnist = r.experiment == "mlp-mnist";
    SequentialModel<T> model = mnist ? make_mlp<T>({28, 28, 1}, {128, 128}, 10)
                                     : make_cifar_cnn<T>(10);
    model.validate(mnist ? Shape{28, 28, 1, 1} : Shape{32, 32, 3, 1});
    SeededRng init = SeededRng::derive(r.seed, kInitSalt);
    model.initialize(init);
    Trainer<T> trainer(model, r.train_config());
    MetricsWriter writer(r);
    std::optional<double> selected;

    if (r.epochs > 0) {
        DatasetSplit<T> data;
        try {
            data = mnist ? load_mnist<T>(r.data_dir) : load_cifar10<T>(r.data_dir);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) +
                            " (fetch the dataset with tools/fetch_datasets.sh or pass --data-dir)");
        }
        if (r.subset > 0) {
            SeededRng pick = SeededRng::derive(r.seed, kSubsetSalt);
            data.train = subset(data.train, r.subset, pick);
        }
        out << r.experiment << ": " << data.train.size() << " training / " << data.test.size()
            << " test items\n";
        trainer.fit(data.train, data.test, [&](const EpochMetrics& m) {
            writer.row(m);
            print_epoch(out, m);
        });
        if (r.selective_sgd) {
            selected = trainer.optimizer().learning_rate();
            out << "selected learning rate " << num(*selected) << "\n";
        }
    }
    save_checkpoint(capture_training_state(model, trainer.optimizer(), trainer.rng(),
                                           trainer.step()),
                    fs::path(r.out_dir) / "checkpoint.bin");
    write_snapshot(r, selected);
    return kExitOk;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open corpus " + path +
                        " (fetch it with tools/fetch_datasets.sh or pass --corpus)");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
int train_lstm(const Resolved& r, std::ostream& out) {
    std::string text = read_text(r.corpus);
    if (r.max_chars > 0) {
        std::vector<char32_t> cps = utf8_decode(text);
        if (cps.size() > r.max_chars) {
            cps.resize(r.max_chars);
            text = utf8_encode(cps);
        }
    }
    const CharDataset data = char_dataset(text, r.seq_len);
    auto [train, test] = split_char_dataset(data, 0.1);
    const UnigramBaseline base = unigram_baseline(train, test);
    out << "lstm-char: vocabulary " << data.vocab.size() << ", " << train.size() << " training / "
        << test.size() << " held-out windows of " << r.seq_len << "\n";
    out << "unigram baseline accuracy: sampled " << num(base.sampled_accuracy) << ", majority "
        << num(base.majority_accuracy) << "\n";

    LstmTrainConfig config;
    config.hidden = r.hidden;
    config.seq_len = r.seq_len;
    config.epochs = r.epochs;
    config.batch_size = r.batch_size;
    config.optimizer = r.optimizer;
    config.hyper.learning_rate = r.lr;
    config.hyper.momentum = r.momentum;
    config.hyper.weight_decay = r.weight_decay;
    config.seed = r.seed;
    if (r.selective_sgd) {
        SelectiveSgdConfig s;
        s.trial_iterations = r.trial_iterations;
        s.reselect_every = r.reselect_every;
        config.selective_sgd = s;
    }
    LstmTrainer<T> trainer(data.vocab.size(), config);
    MetricsWriter writer(r);
    std::optional<double> selected;
    if (r.epochs > 0) {
        trainer.fit(train, test, [&](const EpochMetrics& m) {
            writer.row(m);
            print_epoch(out, m);
        });
        if (r.selective_sgd) {
            selected = trainer.optimizer().learning_rate();
            out << "selected learning rate " << num(*selected) << "\n";
        }
    }
    const std::vector<ParamRef<T>> refs = trainer.parameter_refs();
    Checkpoint<T> ckpt = capture_training_state(std::span<const ParamRef<T>>(refs),
                                                trainer.optimizer(), trainer.rng(), trainer.step());
    std::vector<T> symbols;
    for (char32_t c : data.vocab.symbols()) {
        symbols.push_back(static_cast<T>(c));
    }
    const std::size_t vocab_size = symbols.size();
    ckpt.tensors.emplace_back("vocab", Tensor<T>({vocab_size}, std::move(symbols)));
    ckpt.counters.emplace_back("lstm.seq_len", r.seq_len);
    save_checkpoint(ckpt, fs::path(r.out_dir) / "checkpoint.bin");
    write_snapshot(r, selected);
    return kExitOk;
}

template <typename T>
int train_qnet(const Resolved& r, std::ostream& out) {
    QNetConfig config;
    config.gamma = r.gamma;
    config.hidden = {r.hidden};
    config.max_episodes = r.episodes;
    config.optimizer = r.optimizer;
    config.hyper.learning_rate = r.lr;
    config.hyper.momentum = r.momentum;
    config.hyper.weight_decay = r.weight_decay;
    if (r.replay) {
        config.replay = ReplayConfig{10000, r.batch_size};
    } else {
        config.replay.reset();
    }

    std::ofstream csv(fs::path(r.out_dir) / "metrics.csv");
    csv << "episode,steps,total_reward,epsilon,mean_loss\n";
    QNetRun<T> run = run_qnet_training<T>(config, r.seed, [&](const EpisodeRecord& e) {
        csv << e.episode << ',' << e.steps << ',' << num(e.total_reward) << ',' << num(e.epsilon)
            << ',' << num(e.mean_loss) << '\n';
    });
    csv.flush();
    {
        std::ofstream evals(fs::path(r.out_dir) / "evaluations.csv");
        evals << "episode,mean_length\n";
        for (const QNetEvaluation& e : run.evaluations) {
            evals << e.after_episode << ',' << num(e.mean_length) << '\n';
        }
    }
    out << "qnet-cartpole: " << run.episodes.size() << " episodes, " << run.gradient_steps
        << " gradient steps\n";
    if (run.solved_at) {
        out << "reached mean greedy length >= " << num(config.success_threshold) << " after "
            << *run.solved_at << " episodes\n";
    } else if (!run.evaluations.empty()) {
        out << "not solved; last evaluation mean length "
            << num(run.evaluations.back().mean_length) << "\n";
    }
    Checkpoint<T> ckpt;
    ckpt.counters = {{"train.step", run.gradient_steps},
                     {"qnet.episodes", run.episodes.size()}};
    for (const ParamRef<T>& p : run.model.parameters()) {
        ckpt.tensors.emplace_back("param." + p.name, *p.value);
    }
    save_checkpoint(ckpt, fs::path(r.out_dir) / "checkpoint.bin");
    write_snapshot(r, std::nullopt);
    return kExitOk;
}

template <typename T>
int dispatch_train(const Resolved& r, std::ostream& out) {
    if (r.experiment == "lstm-char") {
        return train_lstm<T>(r, out);
    }
    if (r.experiment == "qnet-cartpole") {
        return train_qnet<T>(r, out);
    }
    return train_classifier<T>(r, out);
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
    const Resolved r = resolve(o);
    fs::create_directories(r.out_dir);
    return r.precision == 64 ? dispatch_train<double>(r, out) : dispatch_train<float>(r, out);
}

int cmd_gradcheck(const std::string& arch, std::uint64_t seed, const std::string& corrupt,
                  const GradCheckOptions& options, std::ostream& out) {
    GradCheckReport report;
    if (arch == "mlp" || arch == "cnn") {
        GradCheckCase c = arch == "mlp" ? small_mlp_case(seed, corrupt) : small_cnn_case(seed, corrupt);
        report = grad_check(c.model, c.inputs, c.labels, options);
    } else if (arch == "lstm") {
        report = lstm_grad_check(seed, options, corrupt);
    } else if (arch == "qnet") {
        report = qnet_grad_check(seed, options, corrupt);
    } else {
        throw ConfigError("unknown architecture '" + arch + "' (expected mlp, cnn, lstm or qnet)");
    }
    for (const GradCheckEntry& e : report.entries) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-12s max rel error %.3e over %zu coords  %s\n",
                      e.group.c_str(), e.max_rel_error, e.coords,
                      e.max_rel_error <= report.tolerance ? "ok" : "FAIL");
        out << line;
    }
    out << "gradcheck " << arch << ": " << (report.passed() ? "PASS" : "FAIL")
        << " (max relative error " << num(report.max_error()) << ", tolerance "
        << num(report.tolerance) << ")\n";
    return report.passed() ? kExitOk : kExitVerification;
}

template <typename T>
int sample_impl(const std::string& path, const std::string& prime, std::size_t length,
                double temperature, std::uint64_t seed, std::ostream& out) {
    const Checkpoint<T> ckpt = load_checkpoint<T>(path);
    const Tensor<T>* vocab_t = ckpt.tensor("vocab");
    const Tensor<T>* b_i = ckpt.tensor("param.lstm.b_i");
    const Tensor<T>* b_y = ckpt.tensor("param.lstm.b_y");
    if (vocab_t == nullptr || b_i == nullptr || b_y == nullptr) {
        throw CheckpointShapeError("checkpoint " + path + " does not hold a character LSTM");
    }
    std::vector<char32_t> symbols;
    for (T v : vocab_t->data()) {
        symbols.push_back(static_cast<char32_t>(v));
    }
    const CharVocab vocab(std::move(symbols));
    LstmParams<T> params = LstmParams<T>::zeros(b_i->size(), vocab.size(), b_y->size());
    LstmParams<T> unused = params;
    const std::vector<ParamRef<T>> refs = lstm_parameter_refs(params, unused);
    restore_parameters(ckpt, std::span<const ParamRef<T>>(refs));
    SeededRng rng(seed);
    out << lstm_sample(params, vocab, prime, length, temperature, rng) << "\n";
    return kExitOk;
}

int cmd_sample(const std::string& path, const std::string& prime, std::size_t length,
               double temperature, std::uint64_t seed, std::ostream& out) {
    return checkpoint_scalar_size(path) == 8
               ? sample_impl<double>(path, prime, length, temperature, seed, out)
               : sample_impl<float>(path, prime, length, temperature, seed, out);
}

template <typename T>
int play_impl(const std::string& path, std::size_t episodes, std::size_t max_steps,
              std::uint64_t seed, std::ostream& out) {
    const Checkpoint<T> ckpt = load_checkpoint<T>(path);
    std::vector<std::size_t> widths;
    for (std::size_t i = 0;; i += 2) {
        const Tensor<T>* w = ckpt.tensor("param." + std::to_string(i) + ".linear.W");
        if (w == nullptr) {
            break;
        }
        widths.push_back(w->extent(0));
    }
    if (widths.empty() || widths.back() != kCartPoleActions) {
        throw CheckpointShapeError("checkpoint " + path + " does not hold a cart-pole Q-network");
    }
    widths.pop_back();
    SequentialModel<T> model = make_qnet<T>(widths);
    const std::vector<ParamRef<T>> refs = model.parameters();
    restore_parameters(ckpt, std::span<const ParamRef<T>>(refs));
    SeededRng rng(seed);
    std::vector<std::size_t> lengths;
    const double mean = evaluate_policy(model, episodes, max_steps, rng, &lengths);
    for (std::size_t e = 0; e < lengths.size(); ++e) {
        out << "episode " << e + 1 << ": " << lengths[e] << " steps\n";
    }
    out << "mean episode length " << num(mean) << " over " << episodes << " episodes\n";
    return kExitOk;
}

int cmd_play(const std::string& path, std::size_t episodes, std::size_t max_steps,
             std::uint64_t seed, std::ostream& out) {
    return checkpoint_scalar_size(path) == 8 ? play_impl<double>(path, episodes, max_steps, seed, out)
                                             : play_impl<float>(path, episodes, max_steps, seed, out);
}

/// Splices `--config` file entries in front of the explicit arguments so that
/// explicit flags, parsed later, take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::optional<std::string> config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (!config || rest.empty()) {
        return args;
    }
    std::vector<std::string> out = {rest.front()};
    for (const auto& [key, value] : read_key_values(*config)) {
        out.push_back("--" + key + "=" + value);
    }
    out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

} // namespace

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path);
    }
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t number = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(number) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"leafnet: small neural-network library and experiment runner"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    TrainOptions t;
    auto* train = app.add_subcommand("train", "Train one of the experiments");
    std::string positional;
    train->add_option("name", positional,
                      "mlp-mnist | cnn-cifar10 | lstm-char | qnet-cartpole");
    train->add_option("--experiment", t.experiment, "Same as the positional argument");
    train->add_option("--epochs", t.epochs, "Training epochs");
    train->add_option("--batch-size", t.batch_size, "Mini-batch size (replay batch for qnet)");
    train->add_option("--lr", t.lr, "Learning rate");
    train->add_option("--optimizer", t.optimizer, "sgd | adagrad | rmsprop | adam");
    train->add_option("--momentum", t.momentum, "SGD momentum");
    train->add_option("--weight-decay", t.weight_decay, "L2 weight decay");
    train->add_flag("--selective-sgd", t.selective_sgd, "Pick the learning rate by short trials");
    train->add_option("--trial-iterations", t.trial_iterations, "Steps per selective-SGD trial");
    train->add_option("--reselect-every", t.reselect_every, "Re-run the search every N epochs");
    train->add_option("--seed", t.seed, "Seed for every random stream");
    train->add_option("--subset", t.subset, "Train on N items drawn after a seeded shuffle");
    train->add_option("--precision", t.precision, "32 or 64");
    train->add_option("--data-dir", t.data_dir, "Dataset directory");
    train->add_option("--out-dir", t.out_dir, "Output directory");
    train->add_option("--corpus", t.corpus, "Text corpus (lstm-char)");
    train->add_option("--hidden", t.hidden, "Hidden units (lstm-char, qnet-cartpole)");
    train->add_option("--seq-len", t.seq_len, "Window length (lstm-char)");
    train->add_option("--max-chars", t.max_chars, "Use only the first N characters (lstm-char)");
    train->add_option("--episodes", t.episodes, "Maximum training episodes (qnet-cartpole)");
    train->add_option("--gamma", t.gamma, "Discount factor (qnet-cartpole)");
    train->add_flag("--no-replay", t.no_replay, "Update on the latest transition only");
    train->add_flag("--record-time", t.record_time, "Write wall-clock seconds into metrics.csv");
    train->add_option("--selected-lr", t.selected_lr, "Recorded by selective-SGD runs; ignored");
    train->add_option("--config", "Flat key = value file; explicit flags take precedence");

    std::string arch;
    std::string corrupt;
    std::uint64_t gc_seed = 0;
    GradCheckOptions gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gradcheck->add_option("architecture", arch, "mlp | cnn | lstm | qnet")->required();
    gradcheck->add_option("--seed", gc_seed, "Seed for weights and data");
    gradcheck->add_option("--corrupt", corrupt,
                          "Negate the gradients of a layer kind (conv, linear) or LSTM tensor");
    gradcheck->add_option("--coords", gc.coords_per_tensor, "Sampled coordinates per tensor");
    gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error");

    std::string ckpt_path;
    std::string prime = "T";
    std::size_t length = 200;
    double temperature = 1.0;
    std::uint64_t sample_seed = 0;
    auto* sample = app.add_subcommand("sample", "Generate text from an LSTM checkpoint");
    sample->add_option("--checkpoint", ckpt_path, "checkpoint.bin from train lstm-char")->required();
    sample->add_option("--prime", prime, "Text fed before sampling");
    sample->add_option("--length", length, "Characters to generate");
    sample->add_option("--temperature", temperature, "Softmax temperature; 0 is greedy");
    sample->add_option("--seed", sample_seed, "Sampling seed");

    std::string play_path;
    std::size_t episodes = 20;
    std::size_t max_steps = 200;
    std::uint64_t play_seed = 0;
    auto* play = app.add_subcommand("play-cartpole", "Greedy cart-pole episodes from a checkpoint");
    play->add_option("--checkpoint", play_path, "checkpoint.bin from train qnet-cartpole")->required();
    play->add_option("--episodes", episodes, "Episodes to run");
    play->add_option("--max-steps", max_steps, "Step cap per episode");
    play->add_option("--seed", play_seed, "Seed for initial states");

    try {
        std::vector<std::string> args = expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*train) {
            if (!positional.empty()) {
                t.experiment = positional;
            }
            if (t.experiment.empty()) {
                err << "error: train needs an experiment name\n";
                return kExitUsage;
            }
            return cmd_train(t, out);
        }
        if (*gradcheck) {
            return cmd_gradcheck(arch, gc_seed, corrupt, gc, out);
        }
        if (*sample) {
            return cmd_sample(ckpt_path, prime, length, temperature, sample_seed, out);
        }
        if (*play) {
            return cmd_play(play_path, episodes, max_steps, play_seed, out);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const SearchError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitVerification;
    }
    return kExitUsage;
}

} // namespace leafnet::cli
