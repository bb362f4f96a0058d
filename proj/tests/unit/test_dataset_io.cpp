#include <doctest.h>

#include <filesystem>

#include "neuralfd/dataset_io.hpp"
#include "neuralfd/errors.hpp"

using namespace neuralfd;
using namespace neuralfd::io;

TEST_CASE("scenario json round trip and strictness") {
    sim::ScenarioConfig c;
    c.inflow = {{0.0, 0.2}, {100.0, 0.3}};
    c.signal = sim::SignalPlan{25.0, 15.0, 3.0};
    c.blockages = {{100.0, 120.0, 10.0, 40.0, 0.5}};
    c.random_blockages = sim::RandomBlockages{4, 100.0, 250.0};
    c.inflow_jitter = 0.2;
    c.seed = 77;
    const auto j = scenario_to_json(c);
    const auto back = scenario_from_json(j);
    CHECK(scenario_to_json(back) == j);

    auto typo = j;
    typo["horizn"] = 10;
    CHECK_THROWS_AS(scenario_from_json(typo), ConfigError);
    auto described = j;
    described["description"] = "notes";
    CHECK_NOTHROW(scenario_from_json(described));

    const auto scalar = scenario_from_json(json{{"inflow", 0.25}, {"horizon", 60}});
    REQUIRE(scalar.inflow.size() == 1);
    CHECK(scalar.inflow[0].rate == 0.25);
    CHECK_THROWS_AS(scenario_from_json(json{{"sim_dt", 0.5}}), ConfigError);
    CHECK_THROWS_AS(scenario_from_json(json{{"horizon", "long"}}), ConfigError);
}

TEST_CASE("trajectory csv round trip") {
    Trajectory a;
    a.vehicle_id = 3;
    a.t0 = 12.0;
    a.positions = {0.1, 40.123456789012345, 81.5};
    a.speeds = {41.0, 40.9, 40.8};
    Trajectory b = a;
    b.vehicle_id = 4;
    b.t0 = 13.0;
    const auto text = trajectories_csv({a, b});
    const auto back = parse_trajectories_csv(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].positions == a.positions);
    CHECK(back[1].speeds == b.speeds);
    CHECK(back[1].t0 == 13.0);
    CHECK(back[0].dt == 1.0);
    CHECK_THROWS_AS(parse_trajectories_csv("id,x\n"), DataError);
    CHECK_THROWS_AS(parse_trajectories_csv("vehicle_id,t,x,v\n1,0,0\n"), DataError);
    CHECK_THROWS_AS(parse_trajectories_csv("vehicle_id,t,x,v\n1,0,0,1\n1,1,1,1\n1,3,2,1\n"), DataError);
}

TEST_CASE("detector jsonl round trip") {
    std::vector<DetectorLog> logs{{0.0, {1.0, 2.5}}, {3.0, {}}};
    const auto back = parse_detectors_jsonl(detectors_jsonl(logs));
    REQUIRE(back.size() == 2);
    CHECK(back[0].crossing_times == logs[0].crossing_times);
    CHECK(back[1].position == 3.0);
    CHECK_THROWS_AS(parse_detectors_jsonl("{\"position\": 1}\n"), DataError);
}

TEST_CASE("density binary round trip") {
    sim::DensityField f;
    f.cells = 3;
    f.cell_width = 3.5;
    f.record_dt = 1.0;
    f.values = {0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
    const auto back = parse_density(density_header(f), density_binary(f));
    CHECK(back.values == f.values);
    CHECK(back.records() == 2);
    CHECK_THROWS_AS(parse_density(density_header(f), std::string(7, '\0')), DataError);
}

TEST_CASE("checkpoints round trip bit-exactly") {
    const auto g = fd::FdModel::greenshields({43.123456789, 0.0487654321}, fd::Variant::GreenshieldsLS);
    const auto g2 = checkpoint_from_json(json::parse(checkpoint_to_json(g).dump()));
    CHECK(g2.variant() == fd::Variant::GreenshieldsLS);
    CHECK(g2.greenshields_params() == g.greenshields_params());

    auto spec = nn::default_spec(2);
    const auto n = fd::FdModel::neural(fd::NeuralFdParams::make(41.7, spec, nn::init_weights(spec, 5), 0.05, 350.0));
    auto j = checkpoint_to_json(n);
    j["split"] = {{"seed", 1}};
    const auto n2 = checkpoint_from_json(json::parse(j.dump()));
    CHECK(n2.variant() == fd::Variant::Nn2);
    CHECK(n2.parameters() == n.parameters());
    CHECK(n2.neural_params().x_ref == 350.0);

    auto wrong = checkpoint_to_json(n);
    wrong["variant"] = "nn1";
    CHECK_THROWS_AS(checkpoint_from_json(wrong), ModelShapeError);
    wrong["variant"] = "spline";
    CHECK_THROWS_AS(checkpoint_from_json(wrong), DataError);
    CHECK_THROWS_AS(checkpoint_from_json(json{{"variant", "nn1"}}), DataError);
}

TEST_CASE("sha256 and atomic writes") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const auto dir = fs::temp_directory_path() / "neuralfd_io_test";
    fs::create_directories(dir);
    write_file_atomic(dir / "a.txt", "hello");
    CHECK(read_file(dir / "a.txt") == "hello");
    CHECK_FALSE(fs::exists(dir / "a.txt.tmp"));
    CHECK_THROWS_AS(read_file(dir / "missing.txt"), DataError);
    fs::remove_all(dir);
}
