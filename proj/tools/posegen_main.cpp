// Command-line entry point: dataset generation, training, evaluation and
// micro-benchmarks over the posegen library.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "posegen/config.hpp"
#include "posegen/data.hpp"
#include "posegen/icp.hpp"
#include "posegen/losses.hpp"
#include "posegen/manifest.hpp"
#include "posegen/metrics.hpp"
#include "posegen/model.hpp"
#include "posegen/trainer.hpp"

namespace {

using TrainScalar = float;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct GenDataArgs {
    std::string shapes = "cube,l_block,cylinder,sphere";
    std::size_t samples_per_object = 100;
    double noise = 0.0;
    double occlusion = 0.0;
    bool cull = false;
    std::uint64_t seed = 1;
    std::string out;
    std::size_t object_points = 512;
    double scale = 0.1;
    double rot_bound = M_PI / 6.0;
    double xy_range = 0.08;
    double z_min = 0.5;
    double z_max = 1.5;
    int model_sample_count = 512;
};

int run_gen_data(const GenDataArgs& args) {
    posegen::DatasetSpec spec;
    spec.shapes = split_csv(args.shapes);
    spec.samples_per_object = args.samples_per_object;
    spec.object_points = args.object_points;
    spec.object_scale = args.scale;
    spec.view.noise_sigma = args.noise;
    spec.view.occlusion_fraction = args.occlusion;
    spec.view.cull = args.cull;
    spec.view.model_sample_count = args.model_sample_count;
    spec.pose_sampling.rot_bound = args.rot_bound;
    spec.pose_sampling.xy_range = args.xy_range;
    spec.pose_sampling.z_min = args.z_min;
    spec.pose_sampling.z_max = args.z_max;
    spec.seed = args.seed;
    const auto manifest = posegen::generate_dataset(args.out, spec);
    std::cout << "wrote " << manifest.samples.size() << " samples for " << manifest.objects.size()
              << " objects to " << args.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string config_path;
    std::string data;
    std::string out_checkpoint;
    std::string loss_log;
    bool no_generation = false;
    bool no_pointfusion = false;
    std::vector<std::string> overrides;
    bool quiet = false;
};

int run_train(const TrainArgs& args) {
    posegen::RunConfig cfg;
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (args.no_generation) {
        cfg.set("loss.lambda2", "0");
        cfg.set("loss.lambda3", "0");
    }

    const posegen::Dataset data = posegen::load_dataset(args.data);
    if (data.samples.empty()) throw std::runtime_error("train: dataset has no samples");
    const int appearance_dim = static_cast<int>(data.samples.front().appearance().cols());

    posegen::ModelConfig model_cfg = cfg.model_config(appearance_dim);
    model_cfg.pointfusion = !args.no_pointfusion;
    posegen::Model<TrainScalar> model(model_cfg,
                                      static_cast<std::uint64_t>(cfg.integer("train.weight_seed")));

    const posegen::TrainConfig train_cfg = cfg.train_config();
    const auto logs = posegen::train_model(model, data, train_cfg,
                                           args.quiet ? nullptr : &std::cerr);

    model.save(args.out_checkpoint);
    {
        // Record the resolved run settings next to the weights.
        std::ifstream sidecar_in(args.out_checkpoint + ".json");
        nlohmann::json sidecar = nlohmann::json::parse(sidecar_in);
        sidecar["run_config"] = cfg.to_json();
        sidecar["ablations"] = {{"no_generation", args.no_generation},
                                {"no_pointfusion", args.no_pointfusion}};
        std::ofstream sidecar_out(args.out_checkpoint + ".json");
        sidecar_out << sidecar.dump(2) << "\n";
    }

    const std::string log_path =
        args.loss_log.empty() ? args.out_checkpoint + ".losses.csv" : args.loss_log;
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("train: cannot open " + log_path);
    log << "# " << cfg.provenance() << "\n";
    log << "epoch,pose_loss,cd_cano,cd_gt,total\n";
    char buf[160];
    for (const auto& e : logs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g", e.epoch, e.pose_loss, e.cd_cano,
                      e.cd_gt, e.total);
        log << buf << "\n";
    }
    std::cout << "checkpoint " << args.out_checkpoint << " loss-log " << log_path << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string report;
    bool with_icp = false;
    bool inject_gt = false;
    int icp_iterations = 50;
    double icp_tol = 1e-9;
    double icp_max_corr = 0.05;
    std::vector<std::string> overrides;
};

int run_eval(const EvalArgs& args) {
    posegen::RunConfig cfg;
    for (const auto& o : args.overrides) cfg.apply_override(o);
    const posegen::Dataset data = posegen::load_dataset(args.data);
    if (data.samples.empty()) throw std::runtime_error("eval: dataset has no samples");

    posegen::Model<TrainScalar> model = args.inject_gt
                                            ? posegen::Model<TrainScalar>(posegen::ModelConfig{}, 1)
                                            : posegen::Model<TrainScalar>::load(args.checkpoint);

    posegen::IcpConfig icp_cfg;
    icp_cfg.max_iterations = args.icp_iterations;
    icp_cfg.convergence_tol = args.icp_tol;
    icp_cfg.max_correspondence_dist = args.icp_max_corr;

    const std::uint64_t eval_seed = static_cast<std::uint64_t>(cfg.integer("eval.seed"));
    std::vector<posegen::EvalRecord> records;
    std::map<std::string, double> diameters;
    for (const auto& [id, obj] : data.objects) diameters[id] = obj.diameter;

    std::ofstream raw(args.report + ".records.csv");
    if (!raw) throw std::runtime_error("eval: cannot open " + args.report + ".records.csv");
    raw << "# " << cfg.provenance() << "\n";
    raw << "sample,object,add,adds,symmetric\n";

    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& sample = data.samples[i];
        const auto& obj = data.objects.at(sample.object_id);
        posegen::RigidTransform est;
        if (args.inject_gt) {
            est = sample.pose_gt;
        } else {
            const auto pred = posegen::infer(model, sample, posegen::Rng::mix(eval_seed, i));
            est = posegen::select_final(pred);
        }
        if (args.with_icp) {
            est = posegen::icp_refine(est, sample.observed, obj.cloud_cano, icp_cfg).pose;
        }
        posegen::EvalRecord rec;
        rec.object_id = sample.object_id;
        rec.add_distance = posegen::add_distance(sample.pose_gt, est, obj.cloud_cano);
        rec.adds_distance = posegen::adds_distance(sample.pose_gt, est, obj.cloud_cano);
        rec.symmetric = obj.symmetric;
        records.push_back(rec);
        char buf[192];
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.9g,%.9g,%d", i, rec.object_id.c_str(),
                      rec.add_distance, rec.adds_distance, rec.symmetric ? 1 : 0);
        raw << buf << "\n";
    }

    posegen::ReportOptions opts;
    opts.auc_max_threshold = cfg.number("eval.auc_max_threshold");
    opts.two_cm_threshold = cfg.number("eval.two_cm_threshold");
    opts.add_diameter_factor = cfg.number("eval.add_diameter_factor");
    const auto rows = posegen::per_object_report(records, diameters, opts);
    posegen::write_report_csv(args.report + ".csv", rows, cfg.provenance());
    posegen::write_report_json(args.report + ".json", rows, cfg.to_json());
    for (const auto& r : rows) {
        std::printf("%-10s auc %.4f  <2cm %.4f  add %.4f\n", r.object_id.c_str(), r.auc, r.acc_2cm,
                    r.acc_add);
    }
    return 0;
}

struct BenchArgs {
    std::string op = "chamfer";
    std::string sizes = "512";
    int repeats = 10;
    std::uint64_t seed = 1;
};

posegen::PointCloud random_cloud(std::size_t n, posegen::Rng& rng) {
    posegen::PointCloud pc;
    pc.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        pc.points.emplace_back(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    }
    return pc;
}

int run_bench(const BenchArgs& args) {
    posegen::Rng rng(args.seed);
    std::cout << "op,size,metric,seconds\n";
    for (const std::string& size_str : split_csv(args.sizes)) {
        const std::size_t size = static_cast<std::size_t>(std::stoul(size_str));
        std::vector<double> times;
        for (int rep = 0; rep < args.repeats; ++rep) {
            double t0 = 0.0, t1 = 0.0;
            if (args.op == "chamfer" || args.op == "chamfer-brute") {
                const auto a = random_cloud(size, rng);
                const auto b = random_cloud(size, rng);
                t0 = now_seconds();
                volatile double v = args.op == "chamfer" ? posegen::chamfer_kdtree(a, b)
                                                         : posegen::chamfer_brute(a, b);
                (void)v;
                t1 = now_seconds();
            } else if (args.op == "icp") {
                const auto model = random_cloud(size, rng);
                const auto pose = posegen::random_pose(0.15, 0.02, rng.next_u64());
                const auto observed = posegen::transform_points(pose, model);
                posegen::IcpConfig cfg;
                cfg.max_correspondence_dist = 0.3;
                t0 = now_seconds();
                auto result = posegen::icp_refine(posegen::RigidTransform::identity(), observed,
                                                  model, cfg);
                (void)result;
                t1 = now_seconds();
            } else if (args.op == "forward") {
                posegen::ModelConfig mc;
                mc.n_points = static_cast<int>(size);
                mc.appearance_dim = posegen::kAppearanceDim;
                posegen::Model<TrainScalar> model(mc, 1);
                auto obj = posegen::make_object("cube", std::max<std::size_t>(size, 64), 0.1,
                                                rng.next_u64());
                auto pose = posegen::sample_dataset_pose(posegen::PoseSampling{}, rng);
                auto sample = posegen::render_sample(obj, pose, posegen::CameraIntrinsics{},
                                                     posegen::ViewParams{}, rng.next_u64());
                t0 = now_seconds();
                auto pred = posegen::infer(model, sample, rng.next_u64());
                (void)pred;
                t1 = now_seconds();
            } else {
                throw CLI::ValidationError("--op", "unknown op '" + args.op + "'");
            }
            times.push_back(t1 - t0);
            std::printf("%s,%zu,run%d,%.9f\n", args.op.c_str(), size, rep, times.back());
        }
        std::vector<double> sorted = times;
        std::sort(sorted.begin(), sorted.end());
        std::printf("%s,%zu,min,%.9f\n", args.op.c_str(), size, sorted.front());
        std::printf("%s,%zu,median,%.9f\n", args.op.c_str(), size, sorted[sorted.size() / 2]);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"6-DoF pose estimation by point cloud generation"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--shapes", gen_args.shapes, "Comma list: cube,l_block,cylinder,sphere");
    gen->add_option("--samples-per-object", gen_args.samples_per_object)
        ->check(CLI::PositiveNumber);
    gen->add_option("--noise", gen_args.noise, "Gaussian sigma, meters")->check(CLI::NonNegativeNumber);
    gen->add_option("--occlusion", gen_args.occlusion, "Occluded fraction")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_flag("--cull", gen_args.cull, "Drop the back-facing hemisphere");
    gen->add_option("--seed", gen_args.seed);
    gen->add_option("--out", gen_args.out)->required();
    gen->add_option("--object-points", gen_args.object_points)->check(CLI::PositiveNumber);
    gen->add_option("--scale", gen_args.scale)->check(CLI::PositiveNumber);
    gen->add_option("--rot-bound", gen_args.rot_bound, "Max rotation angle, radians");
    gen->add_option("--xy-range", gen_args.xy_range);
    gen->add_option("--z-min", gen_args.z_min);
    gen->add_option("--z-max", gen_args.z_max);
    gen->add_option("--model-sample-count", gen_args.model_sample_count)->check(CLI::PositiveNumber);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train the pose model");
    train->add_option("--config", train_args.config_path, "key=value settings file");
    train->add_option("--data", train_args.data)->required();
    train->add_option("--out-checkpoint", train_args.out_checkpoint)->required();
    train->add_option("--loss-log", train_args.loss_log, "CSV path (default <ckpt>.losses.csv)");
    train->add_flag("--no-generation", train_args.no_generation,
                    "Disable the generation objectives (lambda2 = lambda3 = 0)");
    train->add_flag("--no-pointfusion", train_args.no_pointfusion,
                    "Plain per-point MLP branches instead of point-fusion blocks");
    train->add_option("--set", train_args.overrides, "Override: key=value")->take_all();
    train->add_flag("--quiet", train_args.quiet);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_args.checkpoint);
    eval->add_option("--data", eval_args.data)->required();
    eval->add_option("--report", eval_args.report, "Output prefix: .csv/.json/.records.csv")
        ->required();
    eval->add_flag("--with-icp", eval_args.with_icp, "Refine each estimate with ICP");
    eval->add_flag("--inject-gt", eval_args.inject_gt,
                   "Use ground-truth poses as predictions (metrics smoke path)");
    eval->add_option("--icp-iterations", eval_args.icp_iterations)->check(CLI::PositiveNumber);
    eval->add_option("--icp-tol", eval_args.icp_tol)->check(CLI::NonNegativeNumber);
    eval->add_option("--icp-max-corr", eval_args.icp_max_corr)->check(CLI::PositiveNumber);
    eval->add_option("--set", eval_args.overrides, "Override: key=value")->take_all();

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Micro-benchmarks");
    bench->add_option("--op", bench_args.op, "chamfer | chamfer-brute | icp | forward");
    bench->add_option("--sizes", bench_args.sizes, "Comma list of point counts");
    bench->add_option("--repeats", bench_args.repeats)->check(CLI::PositiveNumber);
    bench->add_option("--seed", bench_args.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args);
        if (train->parsed()) return run_train(train_args);
        if (eval->parsed()) {
            if (!eval_args.inject_gt && eval_args.checkpoint.empty()) {
                std::cerr << "eval: --checkpoint is required unless --inject-gt is set\n";
                return 2;
            }
            return run_eval(eval_args);
        }
        if (bench->parsed()) return run_bench(bench_args);
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
