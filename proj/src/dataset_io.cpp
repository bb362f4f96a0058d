#include "neuralfd/dataset_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "neuralfd/errors.hpp"

namespace neuralfd::io {

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
        }
    }
}

double parse_double(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw DataError("line " + std::to_string(line) + ": cannot parse number '" + s + "'");
    }
    return v;
}

std::ostringstream precise_stream() {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    return os;
}

}  // namespace

json scenario_to_json(const sim::ScenarioConfig& cfg) {
    json j;
    j["roadway_length"] = cfg.roadway_length;
    j["cell_width"] = cfg.cell_width;
    j["sim_dt"] = cfg.sim_dt;
    j["horizon"] = cfg.horizon;
    j["sample_dt"] = cfg.sample_dt;
    j["true_fd"] = {{"u0", cfg.true_fd.u0}, {"rho_j", cfg.true_fd.rho_j}};
    j["inflow"] = json::array();
    for (const auto& k : cfg.inflow) j["inflow"].push_back({{"t", k.t}, {"rate", k.rate}});
    j["inflow_jitter"] = cfg.inflow_jitter;
    j["jitter_period"] = cfg.jitter_period;
    if (cfg.signal) {
        j["signal"] = {{"green", cfg.signal->green},
                       {"red", cfg.signal->red},
                       {"offset", cfg.signal->offset}};
    } else {
        j["signal"] = nullptr;
    }
    j["blockages"] = json::array();
    for (const auto& b : cfg.blockages) {
        j["blockages"].push_back({{"x_start", b.x_start},
                                  {"x_end", b.x_end},
                                  {"t_start", b.t_start},
                                  {"t_end", b.t_end},
                                  {"capacity_factor", b.capacity_factor}});
    }
    if (cfg.random_blockages) {
        const auto& r = *cfg.random_blockages;
        j["random_blockages"] = {{"count", r.count},
                                 {"x_min", r.x_min},
                                 {"x_max", r.x_max},
                                 {"length", r.length},
                                 {"min_duration", r.min_duration},
                                 {"max_duration", r.max_duration},
                                 {"capacity_factor", r.capacity_factor}};
    } else {
        j["random_blockages"] = nullptr;
    }
    j["detector_spacing"] = cfg.detector_spacing;
    j["probe_count"] = cfg.probe_count;
    j["seed"] = cfg.seed;
    j["closed_boundaries"] = cfg.closed_boundaries;
    j["initial_density"] = cfg.initial_density;
    return j;
}

sim::ScenarioConfig scenario_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("scenario config must be a JSON object");
    sim::ScenarioConfig cfg;
    try {
        reject_unknown(j,
                       {"roadway_length", "cell_width", "sim_dt", "horizon", "sample_dt", "true_fd",
                        "inflow", "inflow_jitter", "jitter_period", "signal", "blockages",
                        "random_blockages", "detector_spacing", "probe_count", "seed",
                        "closed_boundaries", "initial_density", "description"},
                       "scenario config");
        read_opt(j, "roadway_length", cfg.roadway_length);
        read_opt(j, "cell_width", cfg.cell_width);
        read_opt(j, "sim_dt", cfg.sim_dt);
        read_opt(j, "horizon", cfg.horizon);
        read_opt(j, "sample_dt", cfg.sample_dt);
        if (auto it = j.find("true_fd"); it != j.end()) {
            reject_unknown(*it, {"u0", "rho_j"}, "true_fd");
            read_opt(*it, "u0", cfg.true_fd.u0);
            read_opt(*it, "rho_j", cfg.true_fd.rho_j);
        }
        if (auto it = j.find("inflow"); it != j.end() && !it->is_null()) {
            if (it->is_number()) {
                cfg.inflow = {{0.0, it->get<double>()}};
            } else {
                for (const auto& k : *it) {
                    reject_unknown(k, {"t", "rate"}, "inflow knot");
                    cfg.inflow.push_back({k.at("t").get<double>(), k.at("rate").get<double>()});
                }
            }
        }
        read_opt(j, "inflow_jitter", cfg.inflow_jitter);
        read_opt(j, "jitter_period", cfg.jitter_period);
        if (auto it = j.find("signal"); it != j.end() && !it->is_null()) {
            reject_unknown(*it, {"green", "red", "offset"}, "signal");
            sim::SignalPlan s;
            read_opt(*it, "green", s.green);
            read_opt(*it, "red", s.red);
            read_opt(*it, "offset", s.offset);
            cfg.signal = s;
        }
        if (auto it = j.find("blockages"); it != j.end() && !it->is_null()) {
            for (const auto& b : *it) {
                reject_unknown(b, {"x_start", "x_end", "t_start", "t_end", "capacity_factor"},
                               "blockage");
                cfg.blockages.push_back({b.at("x_start").get<double>(), b.at("x_end").get<double>(),
                                         b.at("t_start").get<double>(), b.at("t_end").get<double>(),
                                         b.at("capacity_factor").get<double>()});
            }
        }
        if (auto it = j.find("random_blockages"); it != j.end() && !it->is_null()) {
            reject_unknown(*it,
                           {"count", "x_min", "x_max", "length", "min_duration", "max_duration",
                            "capacity_factor"},
                           "random_blockages");
            sim::RandomBlockages r;
            read_opt(*it, "count", r.count);
            read_opt(*it, "x_min", r.x_min);
            read_opt(*it, "x_max", r.x_max);
            read_opt(*it, "length", r.length);
            read_opt(*it, "min_duration", r.min_duration);
            read_opt(*it, "max_duration", r.max_duration);
            read_opt(*it, "capacity_factor", r.capacity_factor);
            cfg.random_blockages = r;
        }
        read_opt(j, "detector_spacing", cfg.detector_spacing);
        read_opt(j, "probe_count", cfg.probe_count);
        read_opt(j, "seed", cfg.seed);
        read_opt(j, "closed_boundaries", cfg.closed_boundaries);
        if (auto it = j.find("initial_density"); it != j.end() && !it->is_null()) {
            if (it->is_number()) {
                cfg.initial_density = {it->get<double>()};
            } else {
                cfg.initial_density = it->get<std::vector<double>>();
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scenario config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

sim::ScenarioConfig load_scenario(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return scenario_from_json(j);
}

std::string trajectories_csv(const std::vector<Trajectory>& trajs) {
    auto os = precise_stream();
    os << "vehicle_id,t,x,v\n";
    for (const auto& tr : trajs) {
        for (std::size_t k = 0; k < tr.size(); ++k) {
            os << tr.vehicle_id << ',' << tr.time_at(k) << ',' << tr.positions[k] << ','
               << tr.speeds[k] << '\n';
        }
    }
    return os.str();
}

std::vector<Trajectory> parse_trajectories_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line.rfind("vehicle_id,t,x,v", 0) != 0) {
        throw DataError("trajectories CSV must start with header vehicle_id,t,x,v");
    }
    std::vector<Trajectory> out;
    std::vector<std::vector<double>> times;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        if (cols.size() != 4) throw DataError("line " + std::to_string(line_no) + ": expected 4 columns");
        const auto id = static_cast<std::int64_t>(parse_double(cols[0], line_no));
        if (out.empty() || out.back().vehicle_id != id) {
            out.push_back({});
            out.back().vehicle_id = id;
            times.emplace_back();
        }
        times.back().push_back(parse_double(cols[1], line_no));
        out.back().positions.push_back(parse_double(cols[2], line_no));
        out.back().speeds.push_back(parse_double(cols[3], line_no));
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& ts = times[i];
        out[i].t0 = ts.front();
        if (ts.size() >= 2) {
            const double dt = (ts.back() - ts.front()) / static_cast<double>(ts.size() - 1);
            for (std::size_t k = 1; k < ts.size(); ++k) {
                if (std::abs((ts[k] - ts[k - 1]) - dt) > 1e-6 * dt) {
                    throw DataError("vehicle " + std::to_string(out[i].vehicle_id) +
                                    " is not uniformly sampled");
                }
            }
            out[i].dt = std::round(dt * 1e9) / 1e9;
        }
    }
    return out;
}

std::string detectors_jsonl(const std::vector<DetectorLog>& logs) {
    std::string out;
    for (const auto& log : logs) {
        json j{{"position", log.position}, {"crossings", log.crossing_times}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<DetectorLog> parse_detectors_jsonl(const std::string& text) {
    std::vector<DetectorLog> out;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("position").get<double>(),
                           j.at("crossings").get<std::vector<double>>()});
        } catch (const json::exception& e) {
            throw DataError("detectors JSONL line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string density_binary(const sim::DensityField& field) {
    static_assert(std::endian::native == std::endian::little, "density.bin is little-endian");
    std::string out(field.values.size() * sizeof(double), '\0');
    std::memcpy(out.data(), field.values.data(), out.size());
    return out;
}

json density_header(const sim::DensityField& field) {
    return json{{"dtype", "float64-le"},
                {"layout", "record-major"},
                {"cells", field.cells},
                {"records", field.records()},
                {"cell_width", field.cell_width},
                {"record_dt", field.record_dt}};
}

sim::DensityField parse_density(const json& header, const std::string& binary) {
    sim::DensityField f;
    f.cells = header.at("cells").get<std::size_t>();
    f.cell_width = header.at("cell_width").get<double>();
    f.record_dt = header.at("record_dt").get<double>();
    const auto records = header.at("records").get<std::size_t>();
    if (binary.size() != records * f.cells * sizeof(double)) {
        throw DataError("density.bin size does not match its header");
    }
    f.values.resize(records * f.cells);
    std::memcpy(f.values.data(), binary.data(), binary.size());
    return f;
}

json checkpoint_to_json(const fd::FdModel& model) {
    json j;
    j["format"] = "neuralfd-checkpoint";
    j["version"] = 1;
    j["variant"] = std::string(model.name());
    if (model.is_neural()) {
        const auto& p = model.neural_params();
        j["layer_sizes"] = p.spec.layer_sizes;
        j["weights"] = p.weights;
        j["u0_raw"] = p.u0_raw;
        j["rho_j_ref"] = p.rho_j_ref;
        j["x_ref"] = p.x_ref;
    } else {
        const auto& g = model.greenshields_params();
        j["u0"] = g.u0;
        j["rho_j"] = g.rho_j;
        j["rho_scale"] = model.rho_scale();
    }
    return j;
}

fd::FdModel checkpoint_from_json(const json& j) {
    try {
        const auto name = j.at("variant").get<std::string>();
        const auto variant = fd::parse_variant(name);
        if (!variant) throw DataError("checkpoint has unknown variant '" + name + "'");
        if (*variant == fd::Variant::Nn1 || *variant == fd::Variant::Nn2) {
            fd::NeuralFdParams p;
            p.spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
            p.weights = j.at("weights").get<std::vector<double>>();
            p.u0_raw = j.at("u0_raw").get<double>();
            p.rho_j_ref = j.value("rho_j_ref", fd::kDefaultRhoJRef);
            p.x_ref = j.value("x_ref", 1.0);
            auto m = fd::FdModel::neural(std::move(p));
            if (m.variant() != *variant) {
                throw ModelShapeError("checkpoint variant " + name +
                                      " does not match its network input arity");
            }
            return m;
        }
        return fd::FdModel::greenshields({j.at("u0").get<double>(), j.at("rho_j").get<double>()},
                                         *variant, j.value("rho_scale", fd::kDefaultRhoJRef));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

json fit_report_to_json(const training::FitReport& report) {
    json j;
    j["model"] = report.model;
    j["best_epoch"] = report.best_epoch;
    j["best_loss"] = report.best_loss;
    j["best_params"] = report.best_params;
    j["converged"] = report.converged;
    j["failure"] = report.failure ? json(*report.failure) : json(nullptr);
    j["epochs"] = json::array();
    for (const auto& e : report.epochs) {
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"test_loss", e.test_loss ? json(*e.test_loss) : json(nullptr)}});
    }
    return j;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

}  // namespace neuralfd::io
