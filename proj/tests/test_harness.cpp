#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "bmcx/bmcx.hpp"
#include "test_util.hpp"

using namespace bmcx;
using namespace bmcx::testutil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("bmcx_harness_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json base_config(const fs::path& out) {
    json j;
    j["experiment"] = "pretrain";
    j["seed"] = 7;
    j["output_dir"] = out.string();
    j["model"] = {{"input", {6}},
                  {"layers",
                   {{{"type", "linear"}, {"in", 6}, {"out", 10}, {"bias", true}},
                    {{"type", "relu"}},
                    {{"type", "linear"}, {"in", 10}, {"out", 3}, {"bias", true}}}}};
    j["dataset"] = {{"source", "blobs"}, {"classes", 3},   {"dims", 6}, {"per_class", 40},
                    {"eval_per_class", 30}, {"spread", 0.4}};
    j["optimizer"] = {{"lr", 0.1}, {"momentum", 0.9}, {"weight_decay", 0.0005}, {"nesterov", true}};
    j["epochs"] = 5;
    j["batch"] = 32;
    return j;
}

}  // namespace

TEST_CASE("checkpoint round-trips") {
    const Model model(mlp_spec({5, 7, 3}));
    TempDir dir;

    SECTION("curve, bit-exact including the frozen flag") {
        RngStream rng(3);
        CurveModel curve = make_curve(model.init_params(1), model.init_params(2), true);
        for (auto& v : curve.theta_b.values) v += rng.normal();
        const std::string path = (dir.path / "c.bmck").string();
        save_curve(path, curve);
        const CurveModel back = load_curve(path);
        REQUIRE(bit_equal(back.theta0.values, curve.theta0.values));
        REQUIRE(bit_equal(back.theta_b.values, curve.theta_b.values));
        REQUIRE(bit_equal(back.theta1.values, curve.theta1.values));
        REQUIRE(back.endpoints_frozen == curve.endpoints_frozen);
        REQUIRE(*back.theta0.layout == *curve.theta0.layout);
    }
    SECTION("planar, scale preserved") {
        PlanarModel m = make_planar(model.init_params(4));
        m.s = -2.25;
        const std::string path = (dir.path / "p.bmck").string();
        save_planar(path, m);
        const PlanarModel back = load_planar(path);
        REQUIRE(back.s == m.s);
        REQUIRE(bit_equal(back.w0.values, m.w0.values));
    }
    SECTION("file size equals header + manifest + payload") {
        const ParamVector params = model.init_params(5);
        const std::string path = (dir.path / "m.bmck").string();
        save_model_params(path, params);
        const size_t expected = checkpoint_header_size(*model.layout()) +
                                8 * static_cast<size_t>(model.param_count()) * 1;
        REQUIRE(fs::file_size(path) == expected);

        CurveModel curve = make_curve(params, params, false);
        const std::string cpath = (dir.path / "c.bmck").string();
        save_curve(cpath, curve);
        REQUIRE(fs::file_size(cpath) ==
                checkpoint_header_size(*model.layout()) + 8 * static_cast<size_t>(model.param_count()) * 3);
    }
    SECTION("corrupted magic is rejected") {
        const std::string path = (dir.path / "bad.bmck").string();
        save_model_params(path, model.init_params(6));
        std::string bytes = slurp(path);
        bytes[0] = 'X';
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(),
                                                                      static_cast<long>(bytes.size()));
        REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("bad magic"));
    }
    SECTION("truncation names the byte offset") {
        const std::string path = (dir.path / "trunc.bmck").string();
        save_model_params(path, model.init_params(6));
        std::string bytes = slurp(path);
        bytes.resize(bytes.size() - 13);
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(),
                                                                      static_cast<long>(bytes.size()));
        REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("truncated at byte"));
    }
    SECTION("kind mismatch is rejected") {
        const std::string path = (dir.path / "m.bmck").string();
        save_model_params(path, model.init_params(6));
        REQUIRE_THROWS_WITH(load_curve(path), Catch::Matchers::ContainsSubstring("expected curve"));
    }
}

TEST_CASE("model spec serializes to and from config text losslessly") {
    ModelSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.layers.push_back(Conv2dSpec{1, 4, 3, 1, 1, true});
    spec.layers.push_back(ReluSpec{});
    spec.layers.push_back(MaxPool2dSpec{2});
    spec.layers.push_back(FlattenSpec{});
    spec.layers.push_back(LinearSpec{64, 10, false});
    const json j = model_spec_to_json(spec);
    const ModelSpec back = model_spec_from_json(j);
    REQUIRE(model_spec_to_json(back) == j);
    REQUIRE(count_params(back) == count_params(spec));
}

TEST_CASE("config parsing is strict") {
    TempDir dir;
    SECTION("a valid config parses") {
        const ExperimentConfig cfg = parse_experiment_config(base_config(dir.path));
        REQUIRE(cfg.experiment == ExperimentKind::Pretrain);
        REQUIRE(cfg.seed == 7);
        REQUIRE(cfg.batch == 32);
    }
    SECTION("unknown fields are rejected by name") {
        json j = base_config(dir.path);
        j["dataset"]["sprad"] = 0.4;
        REQUIRE_THROWS_WITH(parse_experiment_config(j),
                            Catch::Matchers::ContainsSubstring("dataset.sprad"));
        json top = base_config(dir.path);
        top["learning_rate"] = 0.1;
        REQUIRE_THROWS_WITH(parse_experiment_config(top),
                            Catch::Matchers::ContainsSubstring("learning_rate"));
    }
    SECTION("seed is mandatory") {
        json j = base_config(dir.path);
        j.erase("seed");
        REQUIRE_THROWS_WITH(parse_experiment_config(j), Catch::Matchers::ContainsSubstring("seed"));
    }
    SECTION("context kind must match the experiment") {
        json j = base_config(dir.path);
        j["experiment"] = "bmc-risk";
        j["context"] = {{"kind", "shift"}};
        REQUIRE_THROWS_WITH(parse_experiment_config(j),
                            Catch::Matchers::ContainsSubstring("does not match experiment"));
    }
    SECTION("beta below one is rejected") {
        json j = base_config(dir.path);
        j["experiment"] = "bmc-risk";
        j["context"] = {{"kind", "risk"}, {"beta", 0.5}};
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
    }
}

TEST_CASE("eval sweep") {
    Dataset train = synth_blobs(4, 6, 50, 0.3, 21);
    Dataset eval_ds = synth_blobs(4, 6, 40, 0.3, 22);
    const NormStats st = normalize(train);
    normalize_with(eval_ds, st);
    const Model model(mlp_spec({6, 12, 4}));
    PretrainConfig pre;
    pre.epochs = 15;
    pre.batch = 32;
    pre.seed = 2;
    const ParamVector base = pretrain_endpoint(model, train, pre);
    RngStream rng(5);
    CurveModel curve = make_curve(base, model.init_params(99), false);

    SECTION("grid endpoints use exactly the stored endpoint weights") {
        const std::vector<double> grid{0.0, 1.0};
        const SweepResult sweep =
            eval_sweep_curve(curve, model, eval_ds, RiskProfile{1.0, 4}, grid, 1);
        std::vector<int64_t> all(static_cast<size_t>(eval_ds.size()));
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
        const Batch b = take_batch(eval_ds, all);
        const double acc0 = accuracy(model, curve.theta0, b.x, b.y);
        const double acc1 = accuracy(model, curve.theta1, b.x, b.y);
        REQUIRE(sweep.rows[0].key == "overall");
        REQUIRE(sweep.rows[0].accuracy == acc0);  // exact: same weights, same data
        bool found_t1 = false;
        for (const auto& r : sweep.rows) {
            if (r.t == 1.0 && r.key == "overall") {
                REQUIRE(r.accuracy == acc1);
                found_t1 = true;
            }
        }
        REQUIRE(found_t1);
    }
    SECTION("risk sweep records the favored class per t") {
        const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
        const SweepResult sweep =
            eval_sweep_curve(curve, model, eval_ds, RiskProfile{5.0, 4}, grid, 1);
        REQUIRE(sweep.metadata.contains("favored_class_per_t"));
        const auto& fav = sweep.metadata["favored_class_per_t"];
        REQUIRE(fav.size() == 5);
        for (const auto& entry : fav) {
            const double t = entry["t"].get<double>();
            const int expect = std::min(static_cast<int>(t * 4), 3);
            REQUIRE(entry["favored_class"].get<int>() == expect);
        }
    }
    SECTION("accuracies stay in [0,1] and counts positive across contexts") {
        const std::vector<double> grid = uniform_grid(5);
        for (const ContextSpec& ctx :
             {ContextSpec{RiskProfile{2.0, 4}},
              ContextSpec{CorruptionSpec{CorruptionKind::GaussianNoise, 0.8, 0}},
              ContextSpec{ShiftSpec{4}}}) {
            const SweepResult sweep = eval_sweep_curve(curve, model, eval_ds, ctx, grid, 3);
            REQUIRE(!sweep.rows.empty());
            for (const auto& r : sweep.rows) {
                REQUIRE(r.accuracy >= 0.0);
                REQUIRE(r.accuracy <= 1.0);
                REQUIRE(r.n > 0);
            }
        }
    }
    SECTION("csv round-trip and byte-stable re-emission") {
        TempDir dir;
        const std::vector<double> grid = uniform_grid(5);
        SweepResult sweep = eval_sweep_curve(curve, model, eval_ds,
                                             CorruptionSpec{CorruptionKind::Contrast, 1.0, 0}, grid, 9);
        sweep.config_hash = "deadbeef";
        sweep.version = kVersionString;
        const std::string csv = (dir.path / "sweep.csv").string();
        write_sweep_csv(csv, sweep);
        const auto rows = read_sweep_csv(csv);
        REQUIRE(rows.size() == sweep.rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            REQUIRE(rows[i].t == sweep.rows[i].t);
            REQUIRE(rows[i].key == sweep.rows[i].key);
            REQUIRE(rows[i].accuracy == sweep.rows[i].accuracy);
            REQUIRE(rows[i].n == sweep.rows[i].n);
        }
        const std::string first = slurp(csv);
        write_sweep_csv(csv, sweep);
        REQUIRE(slurp(csv) == first);
        REQUIRE_THROWS_WITH(read_sweep_csv((dir.path / "missing.csv").string()),
                            Catch::Matchers::ContainsSubstring("cannot open"));
    }
}

TEST_CASE("plot emission") {
    TempDir dir;
    SECTION("two-row csv yields exactly one polyline with two points") {
        const std::string csv = (dir.path / "two.csv").string();
        {
            std::ofstream f(csv);
            f << "t,key,accuracy,n\n0,overall,0.5,100\n1,overall,0.75,100\n";
        }
        const auto files = emit_plots(csv);
        REQUIRE(files.size() == 1);
        const std::string svg = slurp(files[0]);
        size_t polylines = 0, pos = 0;
        while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
            ++polylines;
            ++pos;
        }
        REQUIRE(polylines == 1);
        const size_t points_attr = svg.find("points=\"");
        const size_t end = svg.find('"', points_attr + 8);
        const std::string points = svg.substr(points_attr + 8, end - points_attr - 8);
        REQUIRE(std::count(points.begin(), points.end(), ' ') == 1);  // two x,y pairs
    }
    SECTION("empty result set is an error and writes nothing") {
        const std::string csv = (dir.path / "empty.csv").string();
        {
            std::ofstream f(csv);
            f << "t,key,accuracy,n\n";
        }
        REQUIRE_THROWS_WITH(emit_plots(csv), Catch::Matchers::ContainsSubstring("no data rows"));
        REQUIRE(!fs::exists(dir.path / "empty.overall.svg"));
    }
    SECTION("re-emission is byte-identical") {
        const std::string csv = (dir.path / "multi.csv").string();
        {
            std::ofstream f(csv);
            f << "t,key,accuracy,n\n";
            f << "0,overall,0.5,100\n0.5,overall,0.7,100\n1,overall,0.9,100\n";
            f << "0,class_0,0.4,25\n0.5,class_0,0.6,25\n1,class_0,0.8,25\n";
        }
        const auto files = emit_plots(csv);
        REQUIRE(files.size() == 2);
        std::vector<std::string> first;
        for (const auto& f : files) first.push_back(slurp(f));
        emit_plots(csv);
        for (size_t i = 0; i < files.size(); ++i) REQUIRE(slurp(files[i]) == first[i]);
    }
}

TEST_CASE("normalization precedes corruption in the pipeline") {
    // Corruption only ever sees data that went through prepare_dataset, so
    // asserting both splits come out normalized pins the stage order.
    TempDir dir;
    json j = base_config(dir.path / "x");
    j["experiment"] = "bmc-longtail";
    j["context"] = {{"kind", "corruption"}, {"corruption", "gaussian-noise"}, {"gamma", 1.0}};
    const ExperimentConfig cfg = parse_experiment_config(j);
    const PreparedData data = prepare_dataset(cfg);
    REQUIRE(data.train.normalized);
    REQUIRE(data.eval.normalized);
    REQUIRE(!data.train.mean.empty());

    json off = j;
    off["dataset"]["normalize"] = false;
    const PreparedData raw = prepare_dataset(parse_experiment_config(off));
    REQUIRE(!raw.train.normalized);
}

TEST_CASE("a perfect classifier sweeps to accuracy 1.0 everywhere") {
    Dataset ds = synth_blobs(3, 6, 40, 0.02, 31);  // trivially separable
    normalize(ds);
    const Model model(mlp_spec({6, 8, 3}));
    PretrainConfig pre;
    pre.epochs = 25;
    pre.batch = 32;
    pre.seed = 1;
    const ParamVector perfect = pretrain_endpoint(model, ds, pre);
    const CurveModel constant = make_curve(perfect, perfect, true);
    const SweepResult sweep = eval_sweep_curve(constant, model, ds, RiskProfile{1.0, 3},
                                               uniform_grid(5), 1);
    REQUIRE(!sweep.rows.empty());
    for (const auto& r : sweep.rows) REQUIRE(r.accuracy == 1.0);
}

TEST_CASE("planar checkpoints reject non-corruption eval contexts") {
    TempDir dir;
    const Model model(mlp_spec({6, 10, 3}));
    save_planar((dir.path / "p.bmck").string(), make_planar(model.init_params(1)));
    json e = base_config(dir.path / "ev");
    e["experiment"] = "eval-sweep";
    e["context"] = {{"kind", "risk"}, {"beta", 1.0}};
    e["eval"] = {{"checkpoint", (dir.path / "p.bmck").string()}, {"grid", 3}};
    REQUIRE_THROWS_WITH(run_experiment(parse_experiment_config(e)),
                        Catch::Matchers::ContainsSubstring("corruption context"));
}

TEST_CASE("experiment runner") {
    SECTION("pretrain smoke run writes checkpoint, history, and snapshot") {
        TempDir dir;
        const ExperimentConfig cfg = parse_experiment_config(base_config(dir.path / "run"));
        run_experiment(cfg);
        REQUIRE(fs::exists(dir.path / "run" / "model.bmck"));
        REQUIRE(fs::exists(dir.path / "run" / "history.csv"));
        REQUIRE(fs::exists(dir.path / "run" / "config.json"));
        REQUIRE(!fs::exists(dir.path / "run" / "FAILED"));

        // The snapshot reparses to the same config; re-running it reproduces
        // the artifacts byte for byte.
        const ExperimentConfig again = load_experiment_config((dir.path / "run" / "config.json").string());
        REQUIRE(again.raw == cfg.raw);
        const std::string model_bytes = slurp(dir.path / "run" / "model.bmck");
        const std::string history_bytes = slurp(dir.path / "run" / "history.csv");
        run_experiment(again);
        REQUIRE(slurp(dir.path / "run" / "model.bmck") == model_bytes);
        REQUIRE(slurp(dir.path / "run" / "history.csv") == history_bytes);
    }
    SECTION("bmc run followed by an eval sweep reproduces byte-identical CSVs") {
        TempDir dir;
        json j = base_config(dir.path / "bmc");
        j["experiment"] = "bmc-risk";
        j["context"] = {{"kind", "risk"}, {"beta", 5.0}};
        j["bmc"] = {{"r", 0.02}, {"pretrain_epochs", 5}};
        j["epochs"] = 4;
        run_experiment(parse_experiment_config(j));
        REQUIRE(fs::exists(dir.path / "bmc" / "curve.bmck"));

        json e;
        e["experiment"] = "eval-sweep";
        e["seed"] = 3;
        e["output_dir"] = (dir.path / "sweep").string();
        e["model"] = j["model"];
        e["dataset"] = j["dataset"];
        e["context"] = {{"kind", "risk"}, {"beta", 5.0}};
        e["eval"] = {{"checkpoint", (dir.path / "bmc" / "curve.bmck").string()}, {"grid", 5}};
        run_experiment(parse_experiment_config(e));
        REQUIRE(fs::exists(dir.path / "sweep" / "sweep.csv"));
        REQUIRE(fs::exists(dir.path / "sweep" / "sweep.meta.json"));
        const std::string first = slurp(dir.path / "sweep" / "sweep.csv");
        run_experiment(parse_experiment_config(e));
        REQUIRE(slurp(dir.path / "sweep" / "sweep.csv") == first);

        // every emitted sweep CSV parses against the schema
        REQUIRE(!read_sweep_csv((dir.path / "sweep" / "sweep.csv").string()).empty());
    }
    SECTION("planar run writes grid and best checkpoint") {
        TempDir dir;
        json j = base_config(dir.path / "planar");
        j["experiment"] = "planar";
        j["optimizer"]["lr"] = 0.03;
        j["planar"] = {{"corruption1", {{"kind", "gaussian-noise"}, {"gamma", 0.8}}},
                       {"corruption2", {{"kind", "contrast"}}},
                       {"points_per_step", 10},
                       {"patience", 2},
                       {"max_epochs", 4},
                       {"pretrain_epochs", 5}};
        run_experiment(parse_experiment_config(j));
        REQUIRE(fs::exists(dir.path / "planar" / "planar.bmck"));
        REQUIRE(fs::exists(dir.path / "planar" / "grid.csv"));
        // 11x11 grid plus header
        std::ifstream f(dir.path / "planar" / "grid.csv");
        std::string line;
        size_t lines = 0;
        while (std::getline(f, line)) ++lines;
        REQUIRE(lines == 122);
    }
    SECTION("runtime failure flags partial outputs") {
        TempDir dir;
        json e = base_config(dir.path / "fail");
        e["experiment"] = "eval-sweep";
        e["context"] = {{"kind", "risk"}, {"beta", 1.0}};
        e["eval"] = {{"checkpoint", (dir.path / "does-not-exist.bmck").string()}, {"grid", 3}};
        REQUIRE_THROWS(run_experiment(parse_experiment_config(e)));
        REQUIRE(fs::exists(dir.path / "fail" / "FAILED"));
    }
}
