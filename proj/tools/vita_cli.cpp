#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vita/container.hpp"
#include "vita/error.hpp"
#include "vita/harness.hpp"
#include "vita/report.hpp"
#include "vita/vit.hpp"

namespace fs = std::filesystem;
using namespace vita;

namespace {

struct Common {
    std::string weights;
    std::string model = "vit_base_patch16_224";
    std::vector<std::string> cams;
    std::vector<std::string> metrics;
    std::string astro;
    std::string target = "predicted";
    std::string out;
    std::size_t workers = 1;
    std::string ssim_mode = "windowed";
    std::size_t resolution = 224;
    bool no_renormalize = false;
};

VitModel load_model(const Common& c) {
    const VitConfig cfg = resolve_config(c.model);
    return VitModel(cfg, load_weights(c.weights, cfg));
}

std::vector<CamMethod> cam_list(const Common& c) {
    if (c.cams.empty()) return {CamMethod::GradCam, CamMethod::GradCamPlusPlus};
    std::vector<CamMethod> out;
    for (const auto& s : c.cams) out.push_back(parse_cam_method(s));
    return out;
}

std::vector<Metric> metric_list(const Common& c) {
    if (c.metrics.empty()) return {Metric::Spearman, Metric::Dsc, Metric::Ssim};
    std::vector<Metric> out;
    for (const auto& s : c.metrics) out.push_back(parse_metric(s));
    return out;
}

std::optional<AstroParams> astro_of(const Common& c) {
    if (c.astro.empty()) return std::nullopt;
    return parse_astro_params(c.astro);
}

MetricConfig metric_cfg(const Common& c) {
    MetricConfig m;
    m.ssim_mode = parse_ssim_mode(c.ssim_mode);
    m.comparison_resolution = c.resolution;
    m.renormalize_upsampled = !c.no_renormalize;
    m.validate();
    return m;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw LoadError("cannot open " + p.string() + " for writing");
    return f;
}

void add_common(CLI::App* app, Common& c, bool needs_manifest_opts) {
    app->add_option("--weights", c.weights, "Weights container (.vita)")->required();
    app->add_option("--model", c.model, "Model preset name or JSON config path")->capture_default_str();
    app->add_option("--astro", c.astro, "Astrocyte parameters k,tau,phi,alpha,beta");
    app->add_option("--target-class", c.target, "Class explained by the CAM")
        ->check(CLI::IsMember({"predicted", "label"}))
        ->capture_default_str();
    app->add_option("--resolution", c.resolution, "Comparison / output resolution")->capture_default_str();
    app->add_flag("--no-renormalize", c.no_renormalize, "Skip min-max rescaling after upsampling");
    if (needs_manifest_opts) {
        app->add_option("--metric", c.metrics, "Metric(s), repeatable or comma separated")
            ->delimiter(',')
            ->check(CLI::IsMember({"spearman", "dsc", "ssim"}));
        app->add_option("--workers", c.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--ssim-mode", c.ssim_mode, "windowed or global")
            ->check(CLI::IsMember({"windowed", "global"}))
            ->capture_default_str();
    }
}

// Turns {"key": value, ...} into "--key value" tokens for every key not
// already present on the command line.
std::vector<std::string> config_tokens(const fs::path& path, const std::vector<std::string>& argv) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("config " + path.string() + ": expected a JSON object");

    auto scalar = [](const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    };
    std::vector<std::string> out;
    for (const auto& [key, value] : j.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (flag == "--config") continue;
        const bool given = std::any_of(argv.begin(), argv.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
        if (given) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                out.push_back(flag);
                out.push_back(scalar(v));
            }
        } else if (flag == "--astro" && value.is_object()) {
            out.push_back(flag);
            out.push_back(AstroParams{value.at("k").get<int>(), value.at("tau").get<int>(), value.at("phi").get<double>(),
                                      value.at("alpha").get<double>(), value.at("beta").get<double>()}
                              .to_string());
        } else if (!value.is_null()) {
            out.push_back(flag);
            out.push_back(scalar(value));
        }
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Astrocyte-modulated ViT explanations: evaluation, grid search, heatmaps and statistics"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON file mirroring the command-line flags");

    Common c;
    std::string manifest, grid, image, records, trace;
    std::optional<std::size_t> label;
    std::uint64_t seed = 7;
    double scale = 0.3;

    auto* eval = app.add_subcommand("eval", "Baseline vs astrocytic CAM alignment over a manifest");
    add_common(eval, c, true);
    eval->add_option("--manifest", manifest, "Manifest CSV (image,heatmap,label)")->required();
    eval->add_option("--cam", c.cams, "CAM method(s)")->delimiter(',')->check(CLI::IsMember({"gradcam", "gradcampp"}));
    eval->add_option("--out", c.out, "Output directory for records.csv and summary.json")->required();
    eval->add_option("--config", config_path, "JSON file mirroring the command-line flags");

    auto* gs = app.add_subcommand("gridsearch", "Rank astrocyte parameter combinations");
    add_common(gs, c, true);
    gs->add_option("--manifest", manifest, "Manifest CSV")->required();
    gs->add_option("--cam", c.cams, "CAM method")->check(CLI::IsMember({"gradcam", "gradcampp"}));
    gs->add_option("--grid", grid, "JSON grid space; defaults to the standard 405-combination space");
    gs->add_option("--out", c.out, "Ranked grid CSV")->required();
    gs->add_option("--config", config_path, "JSON file mirroring the command-line flags");

    auto* ex = app.add_subcommand("explain", "Write a CAM heatmap for one image");
    add_common(ex, c, false);
    ex->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
    ex->add_option("--cam", c.cams, "CAM method")->check(CLI::IsMember({"gradcam", "gradcampp"}));
    ex->add_option("--label", label, "Class index used with --target-class label");
    ex->add_option("--trace", trace, "Write the astrocyte iteration trace as JSON lines");
    ex->add_option("--out", c.out, "Output prefix; writes .pgm, .f32 and .json")->required();
    ex->add_option("--config", config_path, "JSON file mirroring the command-line flags");

    auto* st = app.add_subcommand("stats", "Summary statistics and one-tailed rank-sum tests over records");
    st->add_option("--records", records, "records.csv from eval")->required()->check(CLI::ExistingFile);
    st->add_option("--out", c.out, "Summary JSON path (stdout when omitted)");
    st->add_option("--config", config_path, "JSON file mirroring the command-line flags");

    auto* toy = app.add_subcommand("toy-weights", "Write small random weights and their config for trials");
    toy->add_option("--out", c.out, "Output prefix; writes .vita and .json")->required();
    toy->add_option("--seed", seed, "RNG seed")->capture_default_str();
    toy->add_option("--scale", scale, "Weight standard deviation")->capture_default_str();
    toy->add_option("--config", config_path, "JSON file mirroring the command-line flags");

    // Config values become extra arguments, appended after the subcommand.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
        if (path.empty()) continue;
        const auto extra = config_tokens(path, args);
        args.insert(args.end(), extra.begin(), extra.end());
        break;
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (*toy) {
        VitConfig cfg;
        cfg.image_size = 32;
        cfg.patch_size = 8;
        cfg.embed_dim = 16;
        cfg.num_heads = 2;
        cfg.num_blocks = 2;
        cfg.mlp_ratio = 2.0;
        cfg.num_classes = 10;
        write_container(c.out + ".vita", weights_to_entries(random_weights(cfg, seed, scale), cfg));
        open_out(c.out + ".json") << config_to_json(cfg) << '\n';
        std::cout << "wrote " << c.out << ".vita and " << c.out << ".json\n";
        return 0;
    }

    if (*st) {
        std::ifstream in(records);
        const auto recs = read_records_csv(in);
        const std::string json = summary_json(stats_report(recs), 0);
        if (c.out.empty()) {
            std::cout << json << '\n';
        } else {
            open_out(c.out) << json << '\n';
        }
        return 0;
    }

    const VitModel model = load_model(c);
    const TargetClass target = parse_target_class(c.target);

    if (*ex) {
        ExplainOptions opt;
        opt.astro = astro_of(c);
        const auto cams = cam_list(c);
        if (cams.size() != 1 && !c.cams.empty()) throw UsageError("explain takes a single --cam");
        opt.method = cams.front();
        opt.target = target;
        opt.label = label;
        opt.resolution = c.resolution;
        opt.renormalize = !c.no_renormalize;
        if (!trace.empty()) opt.trace_path = trace;
        const ExplainOutput out = explain_single(model, image, opt, c.out);
        std::cout << "predicted " << out.predicted_class << ", explained " << out.target_class << "\n"
                  << out.pgm.string() << "\n" << out.raw.string() << "\n" << out.sidecar.string() << "\n";
        return 0;
    }

    const auto entries = load_manifest(manifest, model.config().num_classes);

    if (*eval) {
        EvalOptions opt;
        opt.astro = astro_of(c);
        opt.methods = cam_list(c);
        opt.metrics = metric_list(c);
        opt.metric_cfg = metric_cfg(c);
        opt.target = target;
        opt.workers = c.workers;
        const EvalResult result = run_eval(model, entries, opt);
        for (const auto& f : result.failures) std::cerr << "skipped " << f.image_id << ": " << f.message << '\n';

        const fs::path dir(c.out);
        fs::create_directories(dir);
        {
            auto f = open_out(dir / "records.csv");
            write_records_csv(f, result.records);
        }
        std::vector<StatsRow> rows;
        try {
            rows = stats_report(result.records);
        } catch (const NumericError& e) {
            std::cerr << "summary: " << e.what() << '\n';
        }
        open_out(dir / "summary.json") << summary_json(rows, result.failures.size()) << '\n';
        std::cout << result.records.size() << " records, " << result.failures.size() << " failures -> "
                  << dir.string() << '\n';
        return 0;
    }

    if (*gs) {
        GridOptions opt;
        const auto cams = cam_list(c);
        if (!c.cams.empty() && cams.size() != 1) throw UsageError("gridsearch takes a single --cam");
        opt.method = c.cams.empty() ? CamMethod::GradCam : cams.front();
        const auto metrics = metric_list(c);
        if (!c.metrics.empty() && metrics.size() != 1) throw UsageError("gridsearch takes a single --metric");
        opt.metric = c.metrics.empty() ? Metric::Ssim : metrics.front();
        opt.metric_cfg = metric_cfg(c);
        opt.target = target;
        opt.workers = c.workers;
        GridSpace space = GridSpace::standard();
        if (!grid.empty()) {
            std::ifstream in(grid);
            if (!in) throw ParseError("cannot open grid file " + grid);
            std::stringstream ss;
            ss << in.rdbuf();
            space = parse_grid_space(ss.str());
        }
        const auto rows = grid_search(model, entries, space, opt);
        auto f = open_out(c.out);
        write_grid_csv(f, rows);
        if (!rows.empty()) {
            std::cout << rows.size() << " combinations; best " << rows.front().params.to_string() << " mean "
                      << format_real(rows.front().mean) << '\n';
        }
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
