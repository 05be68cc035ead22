// Subprocess tests of the command-line tool. The binary path arrives via the
// POLARFUSE_BIN environment variable (set by ctest).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "polarfuse/simulate.hpp"
#include "polarfuse/tensor_io.hpp"

using namespace polarfuse;
namespace fs = std::filesystem;

namespace {

std::string bin() {
    const char* env = std::getenv("POLARFUSE_BIN");
    REQUIRE_MESSAGE(env != nullptr, "POLARFUSE_BIN not set");
    return env;
}

int run(const std::string& args) {
    const std::string cmd = "'" + bin() + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in, "cannot open " << path.string());
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), dir).string()] = slurp(entry.path());
    return out;
}

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() /
               ("pf_cli_" + std::to_string(static_cast<unsigned long>(::getpid())));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
    std::string p(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("simulate is deterministic and decode satisfies the state invariants") {
    Workspace ws;
    const std::string ds = ws.p("ds");
    CHECK(run("simulate --out '" + ds + "' --scenes 4 --resolution 32 --seed 11") == 0);
    auto first = snapshot(ds);
    CHECK(first.count("manifest.csv") == 1);
    CHECK(first.count("intrinsics.txt") == 1);
    fs::remove_all(ds);
    CHECK(run("simulate --out '" + ds + "' --scenes 4 --resolution 32 --seed 11") == 0);
    auto second = snapshot(ds);
    CHECK(first == second);

    // craft a capture for decode from a rendered scene
    SceneSpec scene;
    scene.height = scene.width = 32;
    scene.intrinsics = CameraIntrinsics{35.2, 35.2, 15.5, 15.5};
    Material m;
    m.dolp = 0.4;
    scene.primitives.push_back(Primitive::plane({0.05, -0.05, -1.0}, {0.0, 0.0, 1500.0}, m));
    Material ball;
    ball.mode = MaterialMode::Specular;
    ball.dolp = 0.6;
    scene.primitives.push_back(Primitive::sphere({80.0, 0.0, 1000.0}, 220.0, ball));
    RenderResult r = render(scene);
    write_pft1(ws.p("capture.pft"), r.capture.data);
    write_intrinsics(ws.p("k.txt"), scene.intrinsics);

    const std::string decode_cmd = "decode --input '" + ws.p("capture.pft") +
                                   "' --intrinsics '" + ws.p("k.txt") + "' --out '" +
                                   ws.p("dec") + "'";
    CHECK(run(decode_cmd) == 0);
    Tensor dolp = read_pft1(ws.p("dec_dolp.pft"));
    Tensor aolp = read_pft1(ws.p("dec_aolp.pft"));
    Tensor intensity = read_pft1(ws.p("dec_intensity.pft"));
    Tensor guidance = read_pft1(ws.p("dec_guidance.pft"));
    REQUIRE(guidance.dims() == std::vector<std::size_t>({6, 32, 32}));
    for (std::size_t i = 0; i < dolp.size(); ++i) {
        CHECK(dolp[i] >= 0.0);
        CHECK(dolp[i] <= 1.0);
        CHECK(aolp[i] >= 0.0);
        CHECK(aolp[i] < 3.14159265358979324);
        CHECK(intensity[i] >= 0.0);
    }

    // rerun produces bit-identical outputs
    const std::string before = slurp(ws.p("dec_guidance.pft"));
    CHECK(run(decode_cmd) == 0);
    CHECK(slurp(ws.p("dec_guidance.pft")) == before);
}

TEST_CASE("decode rejects a truncated capture with exit code 2") {
    Workspace ws;
    SceneSpec scene;
    scene.height = scene.width = 16;
    scene.intrinsics = CameraIntrinsics{17.6, 17.6, 7.5, 7.5};
    Material m;
    scene.primitives.push_back(Primitive::plane({0.0, 0.0, -1.0}, {0.0, 0.0, 1000.0}, m));
    RenderResult r = render(scene);
    write_pft1(ws.p("capture.pft"), r.capture.data);
    write_intrinsics(ws.p("k.txt"), scene.intrinsics);

    std::string bytes = slurp(ws.p("capture.pft"));
    std::ofstream os(ws.p("trunc.pft"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    os.close();

    CHECK(run("decode --input '" + ws.p("trunc.pft") + "' --intrinsics '" + ws.p("k.txt") +
              "' --out '" + ws.p("x") + "'") == 2);
    CHECK(run("decode --input '" + ws.p("missing.pft") + "' --intrinsics '" + ws.p("k.txt") +
              "' --out '" + ws.p("x") + "'") == 2);
}

TEST_CASE("config errors exit with code 4") {
    Workspace ws;
    CHECK(run("train --manifest '" + ws.p("none.csv") + "' --ablation bogus --out '" +
              ws.p("o") + "'") == 4);
    CHECK(run("train --manifest '" + ws.p("none.csv") + "' --channels 16,8 --out '" + ws.p("o") +
              "'") == 4);
    CHECK(run("train --manifest '" + ws.p("none.csv") + "' --stages 3 --channels 8,16 --out '" +
              ws.p("o") + "'") == 4);
    CHECK(run("bogus-subcommand") == 4);
    // missing manifest is an input error, not a config error
    CHECK(run("train --manifest '" + ws.p("none.csv") + "' --out '" + ws.p("o") + "'") == 2);
}

TEST_CASE("config file keys apply beneath command-line flags") {
    Workspace ws;
    {
        std::ofstream os(ws.p("run.cfg"));
        os << "# comment\nscenes=3\nresolution=32\nseed=21\n";
    }
    CHECK(run("simulate --config '" + ws.p("run.cfg") + "' --out '" + ws.p("a") +
              "' --seed 22") == 0);
    auto rows = read_manifest(ws.p("a/manifest.csv"));
    CHECK(rows.size() == 3);  // from the config file
    const std::string echoed = slurp(ws.p("a/config.txt"));
    CHECK(echoed.find("seed=22") != std::string::npos);  // flag wins over file
    CHECK(echoed.find("scenes=3") != std::string::npos);

    {
        std::ofstream os(ws.p("bad.cfg"));
        os << "unknown-key=1\n";
    }
    CHECK(run("simulate --config '" + ws.p("bad.cfg") + "' --out '" + ws.p("b") + "'") == 4);
}

TEST_CASE("full pipeline smoke stays within the wall-clock budget") {
    Workspace ws;
    const auto t0 = std::chrono::steady_clock::now();
    CHECK(run("simulate --out '" + ws.p("ds") + "' --scenes 16 --resolution 32 --seed 5") == 0);
    CHECK(run("train --manifest '" + ws.p("ds/manifest.csv") + "' --out '" + ws.p("run") +
              "' --steps 200 --seed 5 --channels 8,16 --lr 0.01") == 0);
    CHECK(run("eval --manifest '" + ws.p("ds/manifest.csv") + "' --checkpoint '" +
              ws.p("run/checkpoint.pwa1") + "' --out '" + ws.p("ev") + "' --channels 8,16") == 0);
    CHECK(run("pointcloud --manifest '" + ws.p("ds/manifest.csv") + "' --checkpoint '" +
              ws.p("run/checkpoint.pwa1") + "' --out '" + ws.p("pc") +
              "' --index 1 --channels 8,16") == 0);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 300.0);

    // metrics carry the three degradation modes plus the All aggregate
    const std::string metrics = slurp(ws.p("ev/metrics.csv"));
    CHECK(metrics.find("stereo-holes") != std::string::npos);
    CHECK(metrics.find("dtof-transparent") != std::string::npos);
    CHECK(metrics.find("itof-fov-crop") != std::string::npos);
    CHECK(metrics.find("All") != std::string::npos);

    // the point clouds exist and carry the expected headers
    for (const char* name : {"pc/sensor.ply", "pc/gt.ply", "pc/pred.ply"}) {
        const std::string ply = slurp(ws.p(name));
        CHECK(ply.rfind("ply\nformat ascii 1.0", 0) == 0);
    }

    // training rejects a checkpoint-shaped config clash via eval exit code
    CHECK(run("eval --manifest '" + ws.p("ds/manifest.csv") + "' --checkpoint '" +
              ws.p("run/checkpoint.pwa1") + "' --out '" + ws.p("ev2") +
              "' --channels 8,16,32") == 2);
}
