#include "neuralfd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <numeric>
#include <random>

#include "neuralfd/dataset_io.hpp"
#include "neuralfd/errors.hpp"
#include "neuralfd/traffic_sim.hpp"

namespace neuralfd::cli {

using io::json;
namespace fs = std::filesystem;

training::Dataset build_dataset(const std::vector<Trajectory>& trajectories,
                                const std::vector<DetectorLog>& detectors, const SplitSpec& split,
                                const sensing::SensingOptions& sensing) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        if (trajectories[i].size() >= 2) usable.push_back(i);
    }
    if (usable.size() < split.train + split.test) {
        throw DataError("dataset has " + std::to_string(usable.size()) +
                        " usable trajectories, " + std::to_string(split.train) + " train + " +
                        std::to_string(split.test) + " test required");
    }
    std::mt19937_64 rng(split.seed);
    for (std::size_t i = usable.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(usable[i], usable[j]);
    }

    const sensing::DetectorBank bank(detectors);
    auto make = [&](std::size_t begin, std::size_t count) {
        std::vector<std::size_t> idx(usable.begin() + static_cast<std::ptrdiff_t>(begin),
                                     usable.begin() + static_cast<std::ptrdiff_t>(begin + count));
        std::sort(idx.begin(), idx.end());
        std::vector<training::Sample> out;
        out.reserve(idx.size());
        for (auto i : idx) {
            const auto& tr = trajectories[i];
            out.push_back({tr, sensing::estimate_density_along(tr, bank, sensing)});
        }
        return out;
    };

    training::Dataset data;
    data.train = make(0, split.train);
    data.test = make(split.train, split.test);
    data.delta_t = data.train.empty() ? 1.0 : data.train.front().trajectory.dt;
    data.validate();
    return data;
}

namespace {

double max_train_speed(const training::Dataset& data) {
    double u = 0.0;
    for (const auto& s : data.train) {
        for (double v : s.trajectory.speeds) u = std::max(u, v);
    }
    return u > 0.0 ? u : 1.0;
}

// (rho, x) pairs seen in training, thinned to a bounded count.
std::vector<std::pair<double, double>> distill_points(const training::Dataset& data) {
    constexpr std::size_t kMaxPoints = 1000;
    std::vector<std::pair<double, double>> all;
    for (const auto& s : data.train) {
        for (std::size_t k = 0; k < s.trajectory.size(); ++k) {
            all.emplace_back(s.density.values[k], s.trajectory.positions[k]);
        }
    }
    const std::size_t stride = all.size() / kMaxPoints + 1;
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < all.size(); i += stride) out.push_back(all[i]);
    return out;
}

fd::FdModel widen_to_nn2(const fd::FdModel& nn1, double roadway_length) {
    const auto& p = nn1.neural_params();
    fd::NeuralFdParams q = p;
    q.x_ref = roadway_length;
    q.spec.layer_sizes.front() = 2;
    const auto hidden = static_cast<std::size_t>(p.spec.layer_sizes[1]);
    // First-layer matrix goes from (hidden x 1) to (hidden x 2) with a zero x column.
    std::vector<double> w;
    w.reserve(q.spec.parameter_count());
    for (std::size_t r = 0; r < hidden; ++r) {
        w.push_back(p.weights[r]);
        w.push_back(0.0);
    }
    w.insert(w.end(), p.weights.begin() + static_cast<std::ptrdiff_t>(hidden), p.weights.end());
    q.weights = std::move(w);
    return fd::FdModel::neural(std::move(q));
}

}  // namespace

fd::FdModel initial_model(const training::Dataset& data, const FitOptions& opts) {
    using fd::Variant;
    if (opts.warm_start) {
        const auto& w = *opts.warm_start;
        if (opts.variant == Variant::Nn2 && w.variant() == Variant::Nn1) {
            return widen_to_nn2(w, opts.roadway_length);
        }
        if (opts.variant == w.variant()) return w;
        if (opts.variant == Variant::GreenshieldsTraj && !w.is_neural()) {
            return fd::FdModel::greenshields(w.greenshields_params(), Variant::GreenshieldsTraj,
                                             w.rho_scale());
        }
        if ((opts.variant == Variant::Nn1 || opts.variant == Variant::Nn2) && !w.is_neural()) {
            // Start the network on the fitted Greenshields curve.
            FitOptions cold = opts;
            cold.warm_start.reset();
            const auto student = initial_model(data, cold);
            return training::fit_to_diagram(student, w, distill_points(data));
        }
        throw ConfigError("cannot warm-start " + std::string(fd::variant_name(opts.variant)) +
                          " from a " + std::string(w.name()) + " checkpoint");
    }

    switch (opts.variant) {
        case Variant::GreenshieldsLS:
        case Variant::GreenshieldsTraj: {
            const auto pts = training::speed_density_pairs(data.train);
            fd::GreenshieldsParams p{max_train_speed(data), opts.rho_j_ref};
            try {
                p = training::fit_greenshields_ls(pts);
            } catch (const DegenerateFitError&) {
                if (opts.variant == Variant::GreenshieldsLS) throw;
            }
            return fd::FdModel::greenshields(p, opts.variant, opts.rho_j_ref);
        }
        case Variant::Nn1:
        case Variant::Nn2: {
            const int arity = opts.variant == Variant::Nn1 ? 1 : 2;
            auto spec = nn::default_spec(arity);
            auto weights = nn::init_weights(spec, opts.init_seed);
            return fd::FdModel::neural(fd::NeuralFdParams::make(
                max_train_speed(data), std::move(spec), std::move(weights), opts.rho_j_ref,
                arity == 2 ? opts.roadway_length : 1.0));
        }
    }
    throw ConfigError("unknown model variant");
}

FitOutcome fit_model(const training::Dataset& data, const FitOptions& opts) {
    auto model = initial_model(data, opts);
    if (opts.variant == fd::Variant::GreenshieldsLS) {
        training::FitReport report;
        report.model = std::string(model.name());
        report.best_params = model.parameters();
        const auto train_loss =
            training::dataset_loss(model, data.train, data.delta_t, opts.train.weighting, opts.train.threads);
        const auto test_loss =
            training::dataset_loss(model, data.test, data.delta_t, opts.train.weighting, opts.train.threads);
        report.epochs.push_back({0, train_loss.value_or(0.0), test_loss});
        report.best_loss = test_loss.value_or(train_loss.value_or(0.0));
        report.converged = true;
        return {model, report};
    }
    auto report = training::train(model, data, opts.train);
    return {model.with_parameters(report.best_params), report};
}

namespace {

struct UsageError : Error {
    using Error::Error;
};

json manifest_json(const std::string& command, const json& config,
                   const std::map<std::string, std::uint64_t>& seeds,
                   const std::map<std::string, std::string>& inputs,
                   const std::map<std::string, std::string>& outputs) {
    json m;
    m["tool"] = "neuralfd";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["config"] = config;
    m["config_hash"] = io::sha256_hex(config.dump());
    m["seeds"] = seeds;
    json in = json::object();
    for (const auto& [name, content] : inputs) in[name] = io::sha256_hex(content);
    m["inputs"] = in;
    json out = json::object();
    for (const auto& [name, content] : outputs) out[name] = io::sha256_hex(content);
    m["outputs"] = out;
    // Wall-clock time would break byte-identical reruns; honour SOURCE_DATE_EPOCH instead.
    const char* sde = std::getenv("SOURCE_DATE_EPOCH");
    m["timestamps"] = {{"source_date_epoch", sde ? json(std::string(sde)) : json(nullptr)}};
    return m;
}

void write_outputs(const fs::path& dir, const std::map<std::string, std::string>& files) {
    fs::create_directories(dir);
    for (const auto& [name, content] : files) io::write_file_atomic(dir / name, content);
}

struct LoadedData {
    sim::ScenarioConfig scenario;
    std::vector<Trajectory> trajectories;
    std::vector<DetectorLog> detectors;
    std::map<std::string, std::string> raw;  // file name -> content, for hashing
};

LoadedData load_data_dir(const fs::path& dir) {
    LoadedData d;
    for (const char* name : {"scenario.json", "trajectories.csv", "detectors.jsonl"}) {
        if (!fs::exists(dir / name)) throw UsageError("dataset directory lacks " + std::string(name));
        d.raw[name] = io::read_file(dir / name);
    }
    try {
        d.scenario = io::scenario_from_json(json::parse(d.raw["scenario.json"]));
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad scenario.json: ") + e.what());
    }
    d.trajectories = io::parse_trajectories_csv(d.raw["trajectories.csv"]);
    d.detectors = io::parse_detectors_jsonl(d.raw["detectors.jsonl"]);
    return d;
}

struct LoadedCheckpoint {
    fd::FdModel model;
    json doc;
    std::string raw;
};

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const auto raw = io::read_file(path);
    try {
        auto doc = json::parse(raw);
        auto model = io::checkpoint_from_json(doc);
        return {std::move(model), std::move(doc), raw};
    } catch (const json::exception& e) {
        throw UsageError("cannot parse checkpoint " + path + ": " + e.what());
    } catch (const DataError& e) {
        throw UsageError(path + ": " + e.what());
    }
}

int cmd_simulate(const std::string& config_path, const fs::path& out_dir, std::ostream& out) {
    const std::string raw = io::read_file(config_path);
    sim::ScenarioConfig cfg;
    try {
        cfg = io::scenario_from_json(json::parse(raw));
    } catch (const json::exception& e) {
        throw UsageError(std::string("cannot parse config: ") + e.what());
    }
    const auto result = sim::run_scenario(cfg);

    std::map<std::string, std::string> files;
    files["scenario.json"] = io::scenario_to_json(cfg).dump(2) + "\n";
    files["trajectories.csv"] = io::trajectories_csv(result.trajectories);
    files["detectors.jsonl"] = io::detectors_jsonl(result.detectors);
    files["density.bin"] = io::density_binary(result.field);
    files["density.json"] = io::density_header(result.field).dump(2) + "\n";
    const auto manifest = manifest_json("simulate", io::scenario_to_json(cfg), {{"scenario", cfg.seed}},
                                        {{"config", raw}}, files);
    write_outputs(out_dir, files);
    io::write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
    out << "simulated " << result.trajectories.size() << " trajectories, "
        << result.detectors.size() << " detectors -> " << out_dir.string() << "\n";
    return kOk;
}

struct FitArgs {
    std::string data_dir;
    std::string model;
    std::size_t train = 500;
    std::size_t test = 100;
    double lr = 0.1;
    std::uint64_t seed = 0;
    std::string out_dir;
    int epochs = 500;
    std::string weighting = "per-trajectory";
    bool decompose = false;
    std::string init_ckpt;
    unsigned threads = 0;
    double u_floor = 0.1;
    double rho_cap = fd::kDefaultRhoJRef;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
    const auto variant = fd::parse_variant(a.model);
    if (!variant) {
        throw UsageError("unknown model '" + a.model +
                         "' (expected greenshields-ls, greenshields-traj, nn1 or nn2)");
    }
    const auto weighting = training::parse_weighting(a.weighting);
    if (!weighting) throw UsageError("unknown weighting '" + a.weighting + "'");

    auto data_in = load_data_dir(a.data_dir);
    const SplitSpec split{a.train, a.test, a.seed};
    const sensing::SensingOptions sensing{a.u_floor, a.rho_cap, 0.0};
    training::Dataset data;
    try {
        data = build_dataset(data_in.trajectories, data_in.detectors, split, sensing);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    if (a.decompose) data = training::decompose_one_step(data);

    FitOptions opts;
    opts.variant = *variant;
    opts.train.learning_rate = a.lr;
    opts.train.max_epochs = a.epochs;
    opts.train.seed = a.seed;
    opts.train.weighting = *weighting;
    opts.train.threads = a.threads;
    opts.init_seed = a.seed;
    opts.roadway_length = data_in.scenario.roadway_length;
    opts.rho_j_ref = a.rho_cap;
    std::map<std::string, std::string> inputs = data_in.raw;
    if (!a.init_ckpt.empty()) {
        auto ck = load_checkpoint(a.init_ckpt);
        opts.warm_start = std::move(ck.model);
        inputs["init_checkpoint"] = std::move(ck.raw);
    }

    const auto fit = fit_model(data, opts);

    json config{{"model", a.model},     {"train", a.train},         {"test", a.test},
                {"lr", a.lr},           {"seed", a.seed},           {"epochs", a.epochs},
                {"weighting", a.weighting}, {"decompose", a.decompose}, {"u_floor", a.u_floor},
                {"rho_cap", a.rho_cap}, {"warm_start", !a.init_ckpt.empty()}};
    json ckpt = io::checkpoint_to_json(fit.model);
    ckpt["split"] = {{"seed", a.seed}, {"train", a.train}, {"test", a.test}};
    ckpt["sensing"] = {{"u_floor", a.u_floor}, {"rho_cap", a.rho_cap}};
    ckpt["weighting"] = a.weighting;

    std::vector<Trajectory> trajs;
    std::vector<DensitySeries> rhos;
    for (const auto* split_samples : {&data.train, &data.test}) {
        for (const auto& s : *split_samples) {
            trajs.push_back(s.trajectory);
            rhos.push_back(s.density);
        }
    }

    std::map<std::string, std::string> files;
    files["checkpoint.json"] = ckpt.dump(2) + "\n";
    files["report.json"] = io::fit_report_to_json(fit.report).dump(2) + "\n";
    files["colocated.csv"] = sensing::colocated_csv(trajs, rhos);
    const auto manifest =
        manifest_json("fit", config, {{"split", a.seed}, {"init", a.seed}}, inputs, files);
    write_outputs(a.out_dir, files);
    io::write_file_atomic(fs::path(a.out_dir) / "manifest.json", manifest.dump(2) + "\n");

    out << a.model << ": best epoch " << fit.report.best_epoch << ", loss " << fit.report.best_loss
        << " ft^2";
    if (!fit.model.is_neural()) {
        const auto& g = fit.model.greenshields_params();
        out << ", u0 = " << g.u0 << " ft/s, rho_j = " << g.rho_j << " veh/ft";
    }
    out << "\n";
    if (fit.report.failure) {
        out << "training halted: " << *fit.report.failure << "\n";
        return kRuntimeError;
    }
    return kOk;
}

struct EvalArgs {
    std::string data_dir;
    std::vector<std::string> ckpts;
    std::string out_dir;
    std::optional<std::size_t> train, test;
    std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
    auto data_in = load_data_dir(a.data_dir);
    std::vector<fd::FdModel> models;
    std::vector<json> raw_ckpts;
    std::map<std::string, std::string> inputs = data_in.raw;
    for (std::size_t i = 0; i < a.ckpts.size(); ++i) {
        auto ck = load_checkpoint(a.ckpts[i]);
        models.push_back(std::move(ck.model));
        raw_ckpts.push_back(std::move(ck.doc));
        inputs["checkpoint_" + std::to_string(i)] = std::move(ck.raw);
    }
    const double length = data_in.scenario.roadway_length;
    for (const auto& m : models) {
        if (m.depends_on_position() &&
            std::abs(m.neural_params().x_ref - length) > 1e-9 * length) {
            throw UsageError("checkpoint position normalisation (" +
                             std::to_string(m.neural_params().x_ref) +
                             " ft) does not match the dataset roadway length (" +
                             std::to_string(length) + " ft)");
        }
    }

    const json& first = raw_ckpts.front();
    SplitSpec split;
    const json sp = first.value("split", json::object());
    split.train = a.train.value_or(sp.value("train", std::size_t{500}));
    split.test = a.test.value_or(sp.value("test", std::size_t{100}));
    split.seed = a.seed.value_or(sp.value("seed", std::uint64_t{0}));
    const json sens = first.value("sensing", json::object());
    const sensing::SensingOptions sensing{sens.value("u_floor", 0.1),
                                          sens.value("rho_cap", fd::kDefaultRhoJRef), 0.0};
    const auto weighting =
        training::parse_weighting(first.value("weighting", std::string("per-trajectory")))
            .value_or(training::LossWeighting::PerTrajectory);

    training::Dataset data;
    try {
        data = build_dataset(data_in.trajectories, data_in.detectors, split, sensing);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    const auto rows = training::evaluate(models, data, weighting);
    const auto csv = training::metric_table_csv(rows);
    if (a.out_dir.empty()) {
        out << csv;
        return kOk;
    }
    std::map<std::string, std::string> files{{"metrics.csv", csv}};
    json config{{"train", split.train}, {"test", split.test}, {"seed", split.seed},
                {"checkpoints", a.ckpts.size()}};
    const auto manifest = manifest_json("evaluate", config, {{"split", split.seed}}, inputs, files);
    write_outputs(a.out_dir, files);
    io::write_file_atomic(fs::path(a.out_dir) / "manifest.json", manifest.dump(2) + "\n");
    out << csv;
    return kOk;
}

struct ExportArgs {
    std::string ckpt;
    int rho_steps = 101;
    int x_steps = 0;
    std::vector<double> slices;
    std::optional<double> rho_max;
    std::string out_file;
};

int cmd_export(const ExportArgs& a, std::ostream& out) {
    const auto model = load_checkpoint(a.ckpt).model;
    fd::ExportGrid grid;
    grid.rho_steps = a.rho_steps;
    grid.x_steps = a.x_steps;
    grid.slices = a.slices;
    grid.rho_max = a.rho_max.value_or(model.is_neural() ? model.neural_params().rho_j_ref
                                                        : model.greenshields_params().rho_j);
    if (model.depends_on_position()) grid.x_max = model.neural_params().x_ref;
    std::string csv;
    try {
        csv = fd::export_csv(model, fd::export_diagram(model, grid));
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (a.out_file.empty()) {
        out << csv;
    } else {
        const fs::path p(a.out_file);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        io::write_file_atomic(p, csv);
    }
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learn fundamental diagrams from probe trajectories and detector events"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string sim_config, sim_out;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
    simulate->add_option("--config", sim_config, "Scenario config JSON")->required()->check(CLI::ExistingFile);
    simulate->add_option("--out", sim_out, "Output directory")->required();

    FitArgs fit;
    auto* fitc = app.add_subcommand("fit", "Fit one diagram family to a dataset");
    fitc->add_option("--data", fit.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    fitc->add_option("--model", fit.model, "greenshields-ls | greenshields-traj | nn1 | nn2")->required();
    fitc->add_option("--train", fit.train, "Training trajectories");
    fitc->add_option("--test", fit.test, "Test trajectories");
    fitc->add_option("--lr", fit.lr, "Adam learning rate");
    fitc->add_option("--seed", fit.seed, "Split and initialisation seed");
    fitc->add_option("--out", fit.out_dir, "Output directory")->required();
    fitc->add_option("--epochs", fit.epochs, "Maximum epochs");
    fitc->add_option("--weighting", fit.weighting, "per-trajectory | per-trajectory-mean | per-point");
    fitc->add_flag("--decompose", fit.decompose, "Train on one-step trajectory pieces");
    fitc->add_option("--init", fit.init_ckpt, "Warm-start checkpoint")->check(CLI::ExistingFile);
    fitc->add_option("--threads", fit.threads, "Worker threads (0 = all cores)");
    fitc->add_option("--u-floor", fit.u_floor, "Stopped-vehicle speed threshold [ft/s]");
    fitc->add_option("--rho-cap", fit.rho_cap, "Density cap and normalisation [veh/ft]");

    EvalArgs ev;
    std::size_t ev_train = 0, ev_test = 0;
    std::uint64_t ev_seed = 0;
    auto* evalc = app.add_subcommand("evaluate", "Trajectory-loss table for checkpoints");
    evalc->add_option("--data", ev.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    evalc->add_option("--ckpt", ev.ckpts, "Checkpoint files")->required()->expected(1, -1)->check(CLI::ExistingFile);
    evalc->add_option("--out", ev.out_dir, "Output directory (default: print CSV)");
    auto* ev_train_opt = evalc->add_option("--train", ev_train, "Override training count");
    auto* ev_test_opt = evalc->add_option("--test", ev_test, "Override test count");
    auto* ev_seed_opt = evalc->add_option("--seed", ev_seed, "Override split seed");

    ExportArgs ex;
    double ex_rho_max = 0.0;
    auto* exportc = app.add_subcommand("export", "Tabulate a checkpoint's diagram as CSV");
    exportc->add_option("--ckpt", ex.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    exportc->add_option("--rho-steps", ex.rho_steps, "Density samples");
    exportc->add_option("--x-steps", ex.x_steps, "Position samples (nn2)");
    exportc->add_option("--slice", ex.slices, "Fixed-x profile position (nn2), repeatable");
    auto* ex_rho_opt = exportc->add_option("--rho-max", ex_rho_max, "Largest density");
    exportc->add_option("--out", ex.out_file, "Output CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (*simulate) return cmd_simulate(sim_config, sim_out, out);
        if (*fitc) return cmd_fit(fit, out);
        if (*evalc) {
            if (*ev_train_opt) ev.train = ev_train;
            if (*ev_test_opt) ev.test = ev_test;
            if (*ev_seed_opt) ev.seed = ev_seed;
            return cmd_evaluate(ev, out);
        }
        if (*exportc) {
            if (*ex_rho_opt) ex.rho_max = ex_rho_max;
            return cmd_export(ex, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ModelShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace neuralfd::cli
