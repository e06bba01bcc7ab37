#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* kCli = GHARNACK_CLI_PATH;
const char* kConfigDir = GHARNACK_CONFIG_DIR;

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "gharnack_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(kCli) + " " + args + " > /dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    REQUIRE(raw != -1);
    REQUIRE(WIFEXITED(raw));
    return WEXITSTATUS(raw);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_timestamp(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find("\"timestamp\"") == std::string::npos) {
            out << line << '\n';
        }
    }
    return out.str();
}

json load_report(const fs::path& dir) {
    return json::parse(read_file(dir / "report.json"));
}

// Small, fast config exercising the MC plumbing.
const char* kSmallConfig = R"({
  "params": {"sigma_lower": 1.0, "sigma_upper": 2.0},
  "system": {"A": 0.0, "M": 1.0, "Q": 1.0, "K": 2.0,
             "b1": "-x - y", "b2": "0", "box": 5.0},
  "grid": {"T": 0.5, "n_steps": 32},
  "run": {"seed": 7, "n_paths": 400},
  "semigroup": {"f": "inv_quad", "z0": [0.0, 0.0]},
  "simulate": {"control": "bangbang", "dump_paths": 2}
})";

// Every number under "results"/"fitted_constants" must be wrapped as
// {"value": .., "se": ..} or {"value": .., "tag": "exact"}.
void check_tagged(const json& node, const std::string& where) {
    if (node.is_object()) {
        if (node.contains("value") && node["value"].is_number()) {
            const bool tagged =
                (node.contains("se") && node["se"].is_number()) ||
                (node.contains("tag") && node["tag"] == "exact");
            INFO(where);
            CHECK(tagged);
            return;
        }
        for (const auto& item : node.items()) {
            INFO(where + "." + item.key());
            CHECK(!item.value().is_number());
            check_tagged(item.value(), where + "." + item.key());
        }
        return;
    }
    if (node.is_array()) {
        std::size_t i = 0;
        for (const auto& v : node) {
            INFO(where + "[" + std::to_string(i) + "]");
            CHECK(!v.is_number());
            check_tagged(v, where + "[" + std::to_string(i) + "]");
            ++i;
        }
    }
}

}  // namespace

TEST_CASE("version flag") {
    CHECK(run_cli("--version") == 0);
}

TEST_CASE("usage errors exit with the config status") {
    const fs::path dir = work_dir("usage");
    write_file(dir / "cfg.json", kSmallConfig);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("bogus --config " + (dir / "cfg.json").string()) == 2);
    CHECK(run_cli("semigroup") == 2);  // --config required
}

TEST_CASE("config errors exit 2 and write no report") {
    const fs::path dir = work_dir("config_errors");

    write_file(dir / "bad.json", "{\"params\": {");
    CHECK(run_cli("semigroup --config " + (dir / "bad.json").string() +
                  " --out " + dir.string()) == 2);

    CHECK(run_cli("semigroup --config " + (dir / "absent.json").string() +
                  " --out " + dir.string()) == 2);

    json cfg = json::parse(kSmallConfig);
    cfg["params"]["sigma_lower"] = 3.0;  // band inverted
    write_file(dir / "band.json", cfg.dump());
    CHECK(run_cli("semigroup --config " + (dir / "band.json").string() +
                  " --out " + dir.string()) == 2);

    cfg = json::parse(kSmallConfig);
    cfg["system"]["Q"] = 0.0;  // noise never reaches the position
    write_file(dir / "degenerate.json", cfg.dump());
    CHECK(run_cli("semigroup --config " +
                  (dir / "degenerate.json").string() + " --out " +
                  dir.string()) == 2);

    cfg = json::parse(kSmallConfig);
    cfg["typo_block"] = 1;
    write_file(dir / "typo.json", cfg.dump());
    CHECK(run_cli("semigroup --config " + (dir / "typo.json").string() +
                  " --out " + dir.string()) == 2);

    cfg = json::parse(kSmallConfig);
    cfg["system"]["b1"] = "cot(x)";
    write_file(dir / "parse.json", cfg.dump());
    CHECK(run_cli("semigroup --config " + (dir / "parse.json").string() +
                  " --out " + dir.string()) == 2);

    CHECK_FALSE(fs::exists(dir / "report.json"));
}

TEST_CASE("semigroup report carries the documented schema") {
    const fs::path dir = work_dir("schema");
    write_file(dir / "cfg.json", kSmallConfig);
    CHECK(run_cli("semigroup --config " + (dir / "cfg.json").string() +
                  " --out " + dir.string() + " --quiet") == 0);

    const json rep = load_report(dir);
    const char* keys[] = {"command", "config",  "results", "fitted_constants",
                          "pass",    "version", "timestamp"};
    for (const char* k : keys) {
        INFO(k);
        CHECK(rep.contains(k));
    }
    CHECK(rep.size() == 7);
    CHECK(rep["command"] == "semigroup");
    CHECK(rep["pass"] == true);
    CHECK(rep["version"].is_string());
    CHECK(rep["config"]["run"]["seed"] == 7);
    CHECK(rep["results"]["per_control"].size() == 3);
    check_tagged(rep["results"], "results");
    check_tagged(rep["fitted_constants"], "fitted_constants");
}

TEST_CASE("same config and seed give byte-identical reports") {
    const fs::path a = work_dir("det_a");
    const fs::path b = work_dir("det_b");
    write_file(a / "cfg.json", kSmallConfig);
    CHECK(run_cli("semigroup --config " + (a / "cfg.json").string() +
                  " --out " + a.string() + " --quiet") == 0);
    CHECK(run_cli("semigroup --config " + (a / "cfg.json").string() +
                  " --out " + b.string() + " --quiet") == 0);
    CHECK(strip_timestamp(read_file(a / "report.json")) ==
          strip_timestamp(read_file(b / "report.json")));

    const fs::path c = work_dir("det_c");
    CHECK(run_cli("semigroup --config " + (a / "cfg.json").string() +
                  " --out " + c.string() + " --quiet --seed 8") == 0);
    CHECK(strip_timestamp(read_file(a / "report.json")) !=
          strip_timestamp(read_file(c / "report.json")));
    const json rep = load_report(c);
    CHECK(rep["config"]["run"]["seed"] == 8);
}

TEST_CASE("simulate dumps paths.csv") {
    const fs::path dir = work_dir("simulate");
    write_file(dir / "cfg.json", kSmallConfig);
    CHECK(run_cli("simulate --config " + (dir / "cfg.json").string() +
                  " --out " + dir.string() + " --quiet --paths 50") == 0);
    const std::string csv = read_file(dir / "paths.csv");
    CHECK(csv.rfind("path,t,theta,w,b,qv,bprime,qvprime,x,y\n", 0) == 0);
    // 2 dumped paths, 33 nodes each, plus the header.
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 33);
    const json rep = load_report(dir);
    CHECK(rep["config"]["run"]["n_paths"] == 50);
    CHECK(rep["results"]["terminal_qv"]["value"].get<double>() > 0.0);
}

TEST_CASE("hjb writes the value grid and respects explicit steps") {
    const fs::path dir = work_dir("hjb");
    json cfg = json::parse(kSmallConfig);
    cfg["estimator"]["hjb"] = {{"nx", 41}, {"ny", 41}, {"half_width", 4.0}};
    cfg.erase("grid");
    cfg["grid"] = {{"T", 0.5}};
    write_file(dir / "cfg.json", cfg.dump());
    CHECK(run_cli("hjb --config " + (dir / "cfg.json").string() + " --out " +
                  dir.string() + " --quiet") == 0);
    const std::string csv = read_file(dir / "grid.csv");
    CHECK(csv.rfind("x,y,u0\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 41 * 41);
    const json rep = load_report(dir);
    const double v = rep["results"]["value"]["value"].get<double>();
    CHECK(v > 0.0);
    CHECK(v <= 1.0);

    // Forcing a step count far beyond the parabolic limit trips the CFL
    // guard, which lands in the report as a structured numerical error.
    cfg["grid"] = {{"T", 0.5}, {"n_steps", 4}};
    write_file(dir / "cfl.json", cfg.dump());
    CHECK(run_cli("hjb --config " + (dir / "cfl.json").string() + " --out " +
                  dir.string() + " --quiet") == 1);
    const json bad = load_report(dir);
    CHECK(bad["pass"] == false);
    CHECK(bad["results"]["error"]["kind"] == "cfl_violation");
    CHECK(bad["results"]["error"]["dt_limit"]["value"].get<double>() > 0.0);
}

TEST_CASE("weak-solution gates on the expected verdicts") {
    const fs::path dir = work_dir("weak");
    json cfg = json::parse(kSmallConfig);
    cfg.erase("semigroup");
    cfg.erase("simulate");
    cfg["system"]["b1_bar"] = "x";
    cfg["weak-solution"] = {
        {"p", 2.0},
        {"eps_cases", json::array({json{{"eps", 0.8},
                                        {"expect_finite", true}},
                                   json{{"eps", 1.2},
                                        {"expect_finite", false}}})}};
    write_file(dir / "cfg.json", cfg.dump());
    CHECK(run_cli("weak-solution --config " + (dir / "cfg.json").string() +
                  " --out " + dir.string() + " --quiet") == 0);
    json rep = load_report(dir);
    CHECK(rep["results"]["cases"][0]["moment_finite"] == true);
    CHECK(rep["results"]["cases"][1]["moment_finite"] == false);
    CHECK(!rep["results"]["cases"][1].contains("moment"));

    // Claiming the divergent case converges must fail the run.
    cfg["weak-solution"]["eps_cases"][1]["expect_finite"] = true;
    write_file(dir / "wrong.json", cfg.dump());
    CHECK(run_cli("weak-solution --config " + (dir / "wrong.json").string() +
                  " --out " + dir.string() + " --quiet") == 1);
    rep = load_report(dir);
    CHECK(rep["pass"] == false);
    CHECK(rep["results"]["cases"][1]["matched"] == false);
}

TEST_CASE("checked-in example configs parse and run") {
    // The heavyweight examples (harnack grid, gradient horizons, long-run
    // invariant) are exercised by the acceptance suite; here the cheap
    // ones plus config-only validation for the rest.
    const fs::path dir = work_dir("examples");
    const fs::path cfgs(kConfigDir);
    REQUIRE(fs::exists(cfgs));

    CHECK(run_cli("coupling-check --config " +
                  (cfgs / "coupling_identity.json").string() + " --out " +
                  dir.string() + " --quiet --paths 20") == 0);
    CHECK(run_cli("phi-integrability --config " +
                  (cfgs / "phi_integrability.json").string() + " --out " +
                  dir.string() + " --quiet --paths 4000") == 0);
    CHECK(run_cli("weak-solution --config " +
                  (cfgs / "weak_solution_threshold.json").string() +
                  " --out " + dir.string() + " --quiet --paths 500") == 0);
    CHECK(run_cli("simulate --config " +
                  (cfgs / "simulate_bangbang.json").string() + " --out " +
                  dir.string() + " --quiet --paths 200") == 0);
    CHECK(run_cli("girsanov-check --config " +
                  (cfgs / "girsanov_unit_mean.json").string() + " --out " +
                  dir.string() + " --quiet --paths 2000") == 0);
    CHECK(run_cli("semigroup --config " +
                  (cfgs / "semigroup_damped.json").string() + " --out " +
                  dir.string() + " --quiet --paths 500") == 0);
    CHECK(run_cli("hjb --config " + (cfgs / "hjb_damped.json").string() +
                  " --out " + dir.string() + " --quiet") == 0);

    // Structural sanity for the heavy configs without running them.
    for (const char* name :
         {"harnack_grid.json", "gradient_horizons.json",
          "invariant_longrun.json"}) {
        const json cfg = json::parse(read_file(cfgs / name));
        CHECK(cfg.contains("params"));
    }
}

TEST_CASE("girsanov channels hold the unit mean") {
    const fs::path dir = work_dir("girsanov");
    json cfg = json::parse(kSmallConfig);
    cfg.erase("semigroup");
    cfg.erase("simulate");
    cfg["run"]["n_paths"] = 4000;
    cfg["girsanov-check"] = {{"g1", "0.4 * sin(x)"}, {"h", json::array(
                                 {0.3, -0.2})}};
    write_file(dir / "cfg.json", cfg.dump());
    CHECK(run_cli("girsanov-check --config " + (dir / "cfg.json").string() +
                  " --out " + dir.string() + " --quiet") == 0);
    const json rep = load_report(dir);
    // Three controls, two channels each.
    CHECK(rep["results"]["channels"].size() == 6);
    for (const auto& ch : rep["results"]["channels"]) {
        CHECK(ch["unit_mean_ok"] == true);
    }
    CHECK(rep["fitted_constants"].contains("energy_budget_ratio"));
}

TEST_CASE("invariant command reports the covariance comparison") {
    const fs::path dir = work_dir("invariant");
    json cfg;
    cfg["params"] = {{"sigma_lower", 1.0}, {"sigma_upper", 2.0}};
    cfg["run"] = {{"seed", 11}, {"n_paths", 8000}};
    cfg["invariant"] = {{"t_long", 40.0}, {"dt", 0.01}};
    write_file(dir / "cfg.json", cfg.dump());
    CHECK(run_cli("invariant --config " + (dir / "cfg.json").string() +
                  " --out " + dir.string() + " --quiet") == 0);
    const json rep = load_report(dir);
    CHECK(rep["results"]["discrepancy_flag"] == true);
    CHECK(rep["results"]["within_5pct"] == true);
    CHECK(rep["fitted_constants"]["variance_ratio"]["value"]
              .get<double>() == 0.5);
}
