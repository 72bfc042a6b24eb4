#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "CLI11.hpp"

#include "hnext/config.hpp"
#include "hnext/data.hpp"
#include "hnext/model.hpp"
#include "hnext/trainer.hpp"
#include "hnext/verifier.hpp"

namespace fs = std::filesystem;
using namespace hnext;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

std::string env_data_dir() {
    const char* v = std::getenv("HNEXT_DATA_DIR");
    return v ? std::string(v) : std::string();
}

std::string resolve(const std::string& configured, const std::string& fallback) {
    return configured.empty() ? fallback : configured;
}

// manifest.json under the output directory: artifact name -> fnv1a checksum.
// Entries carrying wall-clock content are listed with "timestamped": true and
// no checksum, so reruns stay comparable.
void update_manifest(const fs::path& out_dir, const std::string& name, bool timestamped) {
    const fs::path manifest_path = out_dir / "manifest.json";
    nlohmann::json manifest;
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        in >> manifest;
    }
    if (timestamped) {
        manifest[name] = {{"timestamped", true}};
    } else {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a_file((out_dir / name).string())));
        manifest[name] = {{"fnv1a64", std::string(buf)}};
    }
    std::ofstream out(manifest_path);
    out << manifest.dump(2) << "\n";
}

int cmd_generate(const RunConfig& config, const std::string& out_override, bool force) {
    const std::string mnist_dir = resolve(config.paths.mnist_dir, env_data_dir());
    if (mnist_dir.empty()) {
        std::fprintf(stderr, "generate: no MNIST source (set paths.mnist_dir or HNEXT_DATA_DIR)\n");
        return kExitUsage;
    }
    const fs::path out_dir =
        resolve(out_override, resolve(config.paths.data_dir, config.paths.out_dir));
    fs::create_directories(out_dir);

    for (const char* split : {"train", "valid", "test"}) {
        const fs::path p = out_dir / (config.data.variant + "-" + split + ".hnxd");
        if (fs::exists(p) && !force) {
            std::fprintf(stderr, "generate: %s exists; pass --force to overwrite\n",
                         p.string().c_str());
            return kExitUsage;
        }
    }

    MnistSource source;
    try {
        source = load_mnist(mnist_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "generate: %s\n", e.what());
        return kExitUsage;
    }

    DatasetBundle bundle = generate_dataset(config.data.variant, config.data.seed, source,
                                            config.data.rot_mnist_swap_test_valid);
    nlohmann::json sizes;
    for (const RotatedDataset* ds : {&bundle.train, &bundle.valid, &bundle.test}) {
        const std::string name = config.data.variant + "-" + ds->split + ".hnxd";
        write_dataset_archive(*ds, (out_dir / name).string());
        update_manifest(out_dir, name, false);
        sizes[ds->split] = ds->size();
        std::printf("%s: %zu samples\n", name.c_str(), ds->size());
    }
    sizes["seed"] = config.data.seed;
    sizes["variant"] = config.data.variant;
    std::ofstream meta(out_dir / (config.data.variant + "-meta.json"));
    meta << sizes.dump(2) << "\n";
    update_manifest(out_dir, config.data.variant + "-meta.json", false);
    return kExitOk;
}

int cmd_train(const RunConfig& config, const std::string& out_override) {
    const fs::path out_dir = resolve(out_override, config.paths.out_dir);
    fs::create_directories(out_dir);
    const std::string data_dir = resolve(config.paths.data_dir, env_data_dir());

    const RotatedDataset train_split =
        read_dataset_archive(data_dir + "/" + config.data.variant + "-train.hnxd");
    const RotatedDataset valid_split =
        read_dataset_archive(data_dir + "/" + config.data.variant + "-valid.hnxd");

    Model model(config.model);
    std::printf("parameters: %ld\n", count_parameters(config.model));

    TrainResult result = train(model, train_split, valid_split, config.train);

    const fs::path ckpt =
        config.paths.checkpoint.empty() ? out_dir / "checkpoint.hnxt" : fs::path(config.paths.checkpoint);
    save_checkpoint(ckpt.string(), config, result.params, result.bn_states);
    if (ckpt.parent_path() == out_dir) update_manifest(out_dir, ckpt.filename().string(), false);

    std::ofstream csv(out_dir / "metrics.csv");
    csv << "epoch,train_loss,acc_0,acc_45,wall_seconds,seed\n";
    char buf[160];
    for (const TrainRecord& r : result.records) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.3f,%llu\n", r.epoch, r.train_loss,
                      r.acc_0, r.acc_45, r.wall_seconds,
                      static_cast<unsigned long long>(r.seed));
        csv << buf;
    }
    csv.close();
    update_manifest(out_dir, "metrics.csv", /*timestamped=*/true);
    for (const TrainRecord& r : result.records)
        std::printf("epoch %d: loss %.4f acc@0 %.4f acc@45 %.4f (%.1fs)\n", r.epoch,
                    r.train_loss, r.acc_0, r.acc_45, r.wall_seconds);
    return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::string& out_override) {
    const fs::path out_dir = resolve(out_override, config.paths.out_dir);
    fs::create_directories(out_dir);
    if (config.paths.checkpoint.empty()) {
        std::fprintf(stderr, "eval: paths.checkpoint is required\n");
        return kExitUsage;
    }
    Checkpoint ck = load_checkpoint(config.paths.checkpoint);
    Model model(ck.config.model);

    const std::string data_dir = resolve(config.paths.data_dir, env_data_dir());
    const RotatedDataset valid_split =
        read_dataset_archive(data_dir + "/" + config.data.variant + "-valid.hnxd");

    InvarianceReport report = fixed_angle_table(model, ck.params, ck.bn_states, valid_split,
                                                fixed_eval_angles(), config.train.eval_subset);
    write_invariance_csv(report, (out_dir / "invariance.csv").string());
    update_manifest(out_dir, "invariance.csv", false);
    std::printf("OA: %.4f\n", report.overall_accuracy);
    return kExitOk;
}

int cmd_verify(const RunConfig& config, const std::string& out_override, bool random_weights) {
    const fs::path out_dir = resolve(out_override, config.paths.out_dir);
    fs::create_directories(out_dir);

    Model model(config.model);
    const int probe_size =
        config.verify.input_size > 0 ? config.verify.input_size : config.model.input_size;
    const std::vector<RealGrid> probes = make_probe_inputs(
        config.verify.num_inputs, probe_size, config.model.mask, config.verify.seed);

    EquivarianceReport worst;
    if (random_weights) {
        Rng rng(config.verify.seed);
        for (int draw = 0; draw < config.verify.param_draws; ++draw) {
            ParamStore params;
            model.register_params(params);
            model.init_params(params, rng);
            std::vector<BatchNormState> bn = model.make_bn_states();
            EquivarianceReport report =
                measure_equivariance(model, params, bn, probes, config.verify.angles_deg);
            if (worst.rows.empty()) {
                worst = std::move(report);
            } else {
                for (std::size_t i = 0; i < worst.rows.size(); ++i) {
                    worst.rows[i].abs_residual =
                        std::max(worst.rows[i].abs_residual, report.rows[i].abs_residual);
                    worst.rows[i].mag_residual =
                        std::max(worst.rows[i].mag_residual, report.rows[i].mag_residual);
                }
            }
        }
    } else {
        if (config.paths.checkpoint.empty()) {
            std::fprintf(stderr, "verify: need a checkpoint or --random-weights\n");
            return kExitUsage;
        }
        Checkpoint ck = load_checkpoint(config.paths.checkpoint);
        Model trained(ck.config.model);
        worst = measure_equivariance(trained, ck.params, ck.bn_states, probes,
                                     config.verify.angles_deg);
    }

    write_equivariance_csv(worst, (out_dir / "equivariance.csv").string());
    update_manifest(out_dir, "equivariance.csv", false);

    // invariance table when a generated upright split is reachable
    const std::string data_dir = resolve(config.paths.data_dir, env_data_dir());
    const std::string valid_path = data_dir + "/" + config.data.variant + "-valid.hnxd";
    if (!random_weights && fs::exists(valid_path)) {
        Checkpoint ck = load_checkpoint(config.paths.checkpoint);
        Model trained(ck.config.model);
        const RotatedDataset valid_split = read_dataset_archive(valid_path);
        InvarianceReport inv = fixed_angle_table(trained, ck.params, ck.bn_states, valid_split,
                                                 fixed_eval_angles(), config.train.eval_subset);
        write_invariance_csv(inv, (out_dir / "invariance.csv").string());
        update_manifest(out_dir, "invariance.csv", false);
    }

    const double threshold = config.verify.max_residual;
    bool pass = true;
    for (const EquivarianceRow& row : worst.rows)
        if (row.abs_residual >= threshold) pass = false;
    std::printf("equivariance residual max %.3e (threshold %.3e): %s\n",
                worst.max_abs_residual(), threshold, pass ? "PASS" : "FAIL");
    return pass ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"h-next: roto-translation invariant network toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    bool random_weights = false;

    app.add_option("--config", config_path, "run configuration (json)")->required();
    app.add_option("--out", out_dir, "output directory (overrides paths.out_dir)");
    app.add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; },
           "seed override for the subcommand");
    app.add_flag("--force", force, "overwrite existing generated archives");
    app.add_flag("--random-weights", random_weights, "verify with seeded random parameters");

    CLI::App* generate = app.add_subcommand("generate", "write dataset archives");
    CLI::App* train_cmd = app.add_subcommand("train", "train a model from generated archives");
    CLI::App* eval_cmd = app.add_subcommand("eval", "fixed-angle evaluation of a checkpoint");
    CLI::App* verify = app.add_subcommand("verify", "equivariance/invariance verification");
    for (CLI::App* sub : {generate, train_cmd, eval_cmd, verify}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig config = load_run_config(config_path);
        if (seed_set) {
            config.data.seed = seed;
            config.train.seed = seed;
            config.verify.seed = seed;
        }
        if (generate->parsed()) return cmd_generate(config, out_dir, force);
        if (train_cmd->parsed()) return cmd_train(config, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(config, out_dir);
        if (verify->parsed()) return cmd_verify(config, out_dir, random_weights);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
