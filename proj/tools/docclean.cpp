// docclean: synth | learn | match | clean | eval | inspect

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "docclean/docclean.hpp"
#include "docclean/report_io.hpp"

namespace fs = std::filesystem;
using namespace docclean;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2 };

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw FormatError(what + " not found: " + p.string());
}

void require_writable_dir(const fs::path& p) {
    const auto dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    if (!fs::is_directory(dir)) throw FormatError("output directory does not exist: " + dir.string());
}

// Accepts "HxW" or two separate values.
GridShape shape_of(const std::vector<std::string>& v, const std::string& what) {
    std::vector<std::string> parts = v;
    if (parts.size() == 1) {
        const auto x = parts[0].find('x');
        if (x == std::string::npos) throw std::invalid_argument(what + " needs HxW or two values");
        parts = {parts[0].substr(0, x), parts[0].substr(x + 1)};
    }
    if (parts.size() != 2) throw std::invalid_argument(what + " needs HxW or two values");
    GridShape g;
    try {
        std::size_t used0 = 0, used1 = 0;
        g = {std::stoul(parts[0], &used0), std::stoul(parts[1], &used1)};
        if (used0 != parts[0].size() || used1 != parts[1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw std::invalid_argument(what + ": not a size: " + parts[0] + "x" + parts[1]);
    }
    return g;
}

const CLI::Validator kSize(
    [](std::string& v) {
        const auto ok = [](const std::string& t) { return !t.empty() && t.find_first_not_of("0123456789") == std::string::npos; };
        const auto x = v.find('x');
        if (x == std::string::npos ? ok(v) : ok(v.substr(0, x)) && ok(v.substr(x + 1))) return std::string();
        return "expected a count or HxW, got " + v;
    },
    "SIZE");

// ---------------------------------------------------------------- synth

DocumentSpec parse_document_spec(const fs::path& path) {
    namespace pt = boost::property_tree;
    // Inline comments: drop "; ..." or "# ..." after whitespace.
    std::ifstream file(path);
    std::stringstream text;
    for (std::string line; std::getline(file, line);) {
        for (std::size_t k = 1; k < line.size(); ++k) {
            if ((line[k] == ';' || line[k] == '#') && std::isspace(static_cast<unsigned char>(line[k - 1]))) {
                line.resize(k);
                break;
            }
        }
        text << line << "\n";
    }
    pt::ptree tree;
    try {
        pt::read_ini(text, tree);
    } catch (const pt::ini_parser_error& e) {
        throw FormatError(std::string("document spec: ") + e.what());
    }
    DocumentSpec spec;
    try {
        spec.width = tree.get<std::size_t>("page.width", spec.width);
        spec.height = tree.get<std::size_t>("page.height", spec.height);
        spec.margin = tree.get<std::size_t>("page.margin", spec.margin);
        spec.slot_height = tree.get<std::size_t>("page.slot_height", spec.slot_height);
        spec.slot_width = tree.get<std::size_t>("page.slot_width", spec.slot_width);
        spec.ink = tree.get<double>("page.ink", spec.ink);
        spec.paper = tree.get<double>("page.paper", spec.paper);
        spec.noise_sigma = tree.get<double>("page.noise", spec.noise_sigma);
        const auto placement = tree.get<std::string>("page.placement", "grid");
        if (placement == "grid") {
            spec.placement = Placement::grid;
        } else if (placement == "jittered") {
            spec.placement = Placement::jittered;
        } else {
            throw FormatError("document spec: placement must be grid or jittered");
        }
        spec.jitter = tree.get<std::size_t>("page.jitter", spec.jitter);
        spec.seed = tree.get<std::uint64_t>("page.seed", spec.seed);
        spec.instances_per_glyph = tree.get<std::size_t>("glyphs.instances", spec.instances_per_glyph);
        const auto scale = tree.get<std::size_t>("glyphs.scale", 1);
        const auto names = tree.get<std::string>("glyphs.set", "");
        std::vector<Glyph> chosen;
        for (const auto& g : builtin_glyphs()) {
            if (names.empty() || ("," + names + ",").find("," + g.name + ",") != std::string::npos)
                chosen.push_back(scale_glyph(g, scale));
        }
        if (chosen.empty()) throw FormatError("document spec: glyphs.set selects no builtin glyph");
        spec.glyphs = std::move(chosen);
        for (const auto& [section, body] : tree) {
            if (section.rfind("stroke", 0) == 0) {
                StrokeDirt s;
                s.count = body.get<std::size_t>("count", 0);
                s.length_min = body.get<double>("length_min", s.length_min);
                s.length_max = body.get<double>("length_max", s.length_max);
                s.thickness_min = body.get<double>("thickness_min", s.thickness_min);
                s.thickness_max = body.get<double>("thickness_max", s.thickness_max);
                s.angle_min = body.get<double>("angle_min", s.angle_min);
                s.angle_max = body.get<double>("angle_max", s.angle_max);
                spec.strokes.push_back(s);
            } else if (section.rfind("spot", 0) == 0) {
                SpotDirt s;
                s.count = body.get<std::size_t>("count", 0);
                s.radius_min = body.get<double>("radius_min", s.radius_min);
                s.radius_max = body.get<double>("radius_max", s.radius_max);
                s.intensity_min = body.get<double>("intensity_min", s.intensity_min);
                s.intensity_max = body.get<double>("intensity_max", s.intensity_max);
                spec.spots.push_back(s);
            } else if (section != "page" && section != "glyphs") {
                throw FormatError("document spec: unknown section [" + section + "]");
            }
        }
    } catch (const pt::ptree_bad_data& e) {
        throw FormatError(std::string("document spec: ") + e.what());
    }
    return spec;
}

// ---------------------------------------------------------------- pipeline options

struct PipelineOptions {
    std::string features = "gabor";
    std::vector<std::string> patch{"120", "165"};
    std::vector<std::string> stride{"0", "0"};
    std::size_t subsample = 3;
    std::size_t orientations = 8;
    std::size_t scales = 5;
    std::size_t kernel = 21;
    double wavelength = 3.0;
    std::string response = "magnitude";

    void add(CLI::App& app) {
        app.add_option("--features", features, "Feature transform")->check(CLI::IsMember({"gabor", "color"}));
        app.add_option("--patch-size", patch, "Patch size in pixels, HxW or rows cols")->expected(1, 2)->check(kSize);
        app.add_option("--stride", stride, "Patch stride in pixels, HxW or rows cols; 0x0 = half the pattern")->expected(1, 2)->check(kSize);
        app.add_option("--subsample", subsample, "Gabor sampling step in pixels");
        app.add_option("--orientations,--gabor-orientations", orientations, "Gabor orientations");
        app.add_option("--scales,--gabor-scales", scales, "Gabor scales");
        app.add_option("--kernel", kernel, "Gabor kernel size (odd)");
        app.add_option("--wavelength", wavelength, "Wavelength of the finest Gabor scale");
        app.add_option("--response", response, "Gabor response")->check(CLI::IsMember({"magnitude", "real"}));
    }

    FeaturePipeline build() const {
        FeaturePipeline p;
        p.kind = features == "color" ? FeatureKind::color : FeatureKind::gabor;
        p.patch_size = shape_of(patch, "--patch-size");
        p.stride = shape_of(stride, "--stride");
        p.subsample = subsample;
        p.gabor = {orientations, scales, kernel, wavelength,
                   response == "real" ? GaborResponse::real : GaborResponse::magnitude};
        return p;
    }
};

std::vector<FeatureGrid> load_dataset(const std::vector<std::string>& pages, const FeaturePipeline& pipe, GridShape pattern,
                                      unsigned threads) {
    std::vector<FeatureGrid> data;
    for (const auto& p : pages) {
        const auto page = read_image(p);
        auto grids = page_features(page, pipe, pipe.effective_stride(pattern), threads);
        std::move(grids.begin(), grids.end(), std::back_inserter(data));
    }
    if (data.empty()) throw FormatError("no patches could be cut from the input pages");
    return data;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Translation-invariant pattern learning and document cleaning"};
    app.set_config("--config", "", "INI config; [section] names match subcommands, flags win");
    app.require_subcommand(1);
    unsigned threads = 1;
    app.add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 1024u));

    // synth
    auto* synth = app.add_subcommand("synth", "Render a corrupted document with ground truth");
    std::string spec_path, page_out, truth_out;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--spec", spec_path, "Document spec (INI)")->required();
    synth->add_option("--seed", synth_seed, "Overrides page.seed");
    synth->add_option("--page", page_out, "Output page image (.png/.pgm)")->required();
    synth->add_option("--truth", truth_out, "Output truth manifest (.json)")->required();

    // learn
    auto* learn = app.add_subcommand("learn", "Fit the pattern model to one or more pages");
    std::vector<std::string> learn_pages;
    std::string model_out, trace_out;
    LearnConfig lc;
    std::vector<std::string> pattern{"30", "40"};
    std::size_t bins = kDefaultBins;
    std::string init = "segments";
    PipelineOptions learn_pipe;
    learn->add_option("--page", learn_pages, "Training page image(s)")->required();
    learn->add_option("--out", model_out, "Output model file")->required();
    learn->add_option("--trace", trace_out, "EM trace (JSON lines)");
    learn->add_option("--classes", lc.num_classes, "Number of classes");
    learn->add_option("--pattern-size", pattern, "Pattern size in cells, HxW or rows cols")->expected(1, 2)->check(kSize);
    learn->add_option("--max-iters", lc.max_iters, "EM iterations per restart");
    learn->add_option("--restarts", lc.restarts, "Independent EM runs");
    learn->add_option("--seed", lc.rng_seed, "RNG seed");
    learn->add_option("--convergence", lc.convergence, "Relative free-energy change threshold");
    learn->add_option("--lambda", lc.selection.lambda, "Reliable cells per class in the selection function");
    learn->add_option("--truncation,--trunc-K", lc.selection.truncation, "Fraction K of the joint space kept");
    learn->add_option("--bins", bins, "Background histogram bins");
    learn->add_option("--init", init, "Mean initialization")->check(CLI::IsMember({"segments", "cube"}));
    learn->add_option("--snapshot-every", lc.snapshot_every, "Record π and mean α every k iterations");
    bool exact = false;
    learn->add_flag("--exact", exact, "Exact E-step (K = 1, all cells selected)");
    learn_pipe.add(*learn);

    // match
    auto* match = app.add_subcommand("match", "MAP match and quality for every patch of a page");
    std::string model_in, page_in, match_out;
    double gamma = kDefaultGamma;
    SelectionConfig match_sel;
    match->add_option("--model", model_in, "Model file")->required();
    match->add_option("--page", page_in, "Page image")->required();
    match->add_option("--out", match_out, "Output JSON lines (default: stdout)");
    match->add_option("--gamma", gamma, "Quality weighting exponent");
    match->add_option("--lambda", match_sel.lambda, "Reliable cells per class");
    match->add_option("--truncation,--trunc-K", match_sel.truncation, "Fraction K of the joint space kept");
    match->add_flag("--exact", exact, "Exact posterior (K = 1, all cells selected)");

    // clean
    auto* clean = app.add_subcommand("clean", "Paint-and-blank reconstruction of a page");
    std::string clean_out, report_out;
    CleanConfig cc;
    clean->add_option("--model", model_in, "Model file")->required();
    clean->add_option("--page", page_in, "Page image")->required();
    clean->add_option("--out", clean_out, "Reconstructed page image")->required();
    clean->add_option("--report", report_out, "Cleaning report (.json)")->required();
    clean->add_option("--q-threshold", cc.q_threshold, "Acceptance threshold on Q");
    clean->add_option("--max-passes", cc.max_passes, "Pass limit");
    clean->add_option("--gamma", cc.gamma, "Quality weighting exponent");
    clean->add_option("--lambda", cc.selection.lambda, "Reliable cells per class");
    clean->add_option("--truncation,--trunc-K", cc.selection.truncation, "Fraction K of the joint space kept");
    clean->add_flag("--exact", exact, "Exact posterior (K = 1, all cells selected)");

    // eval
    auto* eval = app.add_subcommand("eval", "Score a cleaning report or match records against a truth manifest");
    std::string eval_report, eval_matches, truth_in, eval_out;
    std::optional<double> tolerance;
    std::size_t eval_subsample = 3;
    double eval_q = 0.5;
    auto* rep_opt = eval->add_option("--report", eval_report, "Cleaning report (.json)");
    eval->add_option("--matches", eval_matches, "Match records (.jsonl); scored as accepted when fully visible and Q >= --q-threshold")
        ->excludes(rep_opt);
    eval->add_option("--model", model_in, "Model file (required with --matches)");
    eval->add_option("--truth", truth_in, "Truth manifest (.json)")->required();
    eval->add_option("--tolerance", tolerance, "Position tolerance in pixels (default 3 x subsample)");
    eval->add_option("--subsample", eval_subsample, "Feature subsample for the default tolerance");
    eval->add_option("--q-threshold", eval_q, "Acceptance threshold for --matches");
    eval->add_option("--out", eval_out, "Write the score JSON here as well as to stdout");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Print model dimensions, π and per-class mask strength");
    inspect->add_option("model", model_in, "Model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e, std::cerr, std::cerr);
        return kUsage;
    }

    try {
        if (*synth) {
            require_file(spec_path, "document spec");
            require_writable_dir(page_out);
            require_writable_dir(truth_out);
            auto spec = parse_document_spec(spec_path);
            if (synth_seed) spec.seed = *synth_seed;
            const auto [page, truth] = render_document(spec);
            write_image(page, page_out);
            write_json(to_json(truth, page.width, page.height), truth_out);
            std::cerr << "synth: " << truth.instances.size() << " glyphs, dirt/ink " << truth.dirt_to_ink_ratio() << "\n";
        } else if (*learn) {
            for (const auto& p : learn_pages) require_file(p, "page");
            require_writable_dir(model_out);
            if (!trace_out.empty()) require_writable_dir(trace_out);
            lc.pattern_dims = shape_of(pattern, "--pattern-size");
            if (exact) lc.selection = {lc.pattern_dims.size(), 1.0};
            lc.init = init == "cube" ? InitMode::uniform_cube : InitMode::patch_segments;
            lc.threads = threads;
            lc.validate();
            const auto pipe = learn_pipe.build();
            const auto data = load_dataset(learn_pages, pipe, lc.pattern_dims, threads);
            const auto bg = fit_background(data, bins);
            std::ofstream trace;
            if (!trace_out.empty()) trace.open(trace_out);
            const auto result = multi_restart(data, lc, bg, {}, [&](const IterationRecord& r) {
                if (trace.is_open()) trace << to_json(r).dump() << "\n";
                std::cerr << "restart " << r.restart << " iter " << r.iteration << " F " << r.free_energy << "\n";
            });
            if (trace.is_open())
                trace << json{{"event", "selected"},
                              {"restart", result.best_index},
                              {"characters_per_restart", result.characters_per_restart},
                              {"free_energy_per_restart", result.free_energy_per_restart}}
                             .dump()
                      << "\n";
            FeaturePipeline stored = pipe;
            stored.stride = pipe.effective_stride(lc.pattern_dims);
            save_model({result.best.params, bg, stored}, model_out);
            std::cerr << "learn: " << data.size() << " patches, restart " << result.best_index << " selected with "
                      << result.characters_per_restart[result.best_index] << " character classes\n";
        } else if (*match) {
            require_file(model_in, "model");
            require_file(page_in, "page");
            if (!match_out.empty()) require_writable_dir(match_out);
            const auto bundle = load_model(model_in);
            const auto page = read_image(page_in);
            CleanConfig mc;
            mc.gamma = gamma;
            mc.selection = exact ? SelectionConfig::exact(bundle.params) : match_sel;
            mc.threads = threads;
            mc.validate();
            mc.selection.validate(bundle.params);
            const auto matches = match_page(page, bundle.params, bundle.background, bundle.pipeline,
                                            bundle.pipeline.effective_stride(bundle.params.pattern_dims), mc);
            std::ofstream file;
            if (!match_out.empty()) file.open(match_out);
            std::ostream& out = match_out.empty() ? std::cout : file;
            for (const auto& m : matches) out << to_json(m).dump() << "\n";
        } else if (*clean) {
            require_file(model_in, "model");
            require_file(page_in, "page");
            require_writable_dir(clean_out);
            require_writable_dir(report_out);
            const auto bundle = load_model(model_in);
            const auto page = read_image(page_in);
            cc.threads = threads;
            if (exact) cc.selection = SelectionConfig::exact(bundle.params);
            const auto [recon, report] = clean_document(page, bundle.params, bundle.background, bundle.pipeline, cc);
            write_image(recon, clean_out);
            write_json(to_json(report), report_out);
            std::cerr << "clean: " << report.accepted.size() << " matches accepted in " << report.passes << " passes\n";
        } else if (*eval) {
            require_file(truth_in, "truth manifest");
            const auto truth = truth_from_json(read_json(truth_in));
            std::vector<Detection> dets;
            std::size_t num_classes = 0;
            if (!eval_report.empty()) {
                require_file(eval_report, "report");
                const auto report = report_from_json(read_json(eval_report));
                dets = detections_from(report);
                num_classes = report.per_class.size();
            } else if (!eval_matches.empty()) {
                require_file(eval_matches, "match records");
                if (model_in.empty()) throw std::invalid_argument("--matches needs --model for the pattern geometry");
                const auto bundle = load_model(model_in);
                const std::size_t cs = bundle.pipeline.cell_stride();
                num_classes = bundle.params.num_classes;
                std::ifstream in(eval_matches);
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    json j;
                    try {
                        j = json::parse(line);
                    } catch (const json::parse_error& e) {
                        throw FormatError(std::string("match records: ") + e.what());
                    }
                    const auto m = match_from_json(j);
                    if (!m.match.fully_visible || m.match.quality < eval_q) continue;
                    const auto box = mask_box(bundle.params, m.match.class_index, 0.5);
                    if (!box) continue;
                    const auto px = match_box(*box, cs, m);
                    dets.push_back({m.match.class_index, double(px.row) + 0.5 * double(px.height),
                                    double(px.col) + 0.5 * double(px.width)});
                }
            } else {
                throw std::invalid_argument("eval needs --report or --matches");
            }
            const double tol = tolerance ? *tolerance : 3.0 * static_cast<double>(eval_subsample);
            const auto mapping = align_classes(dets, truth, num_classes, tol);
            for (auto& d : dets) d.class_index = mapping[d.class_index];
            const auto score = score_cleaning(dets, truth, tol);
            json out = to_json(score);
            out["tolerance"] = tol;
            out["class_to_glyph"] = mapping;
            std::cout << out.dump(1) << "\n";
            if (!eval_out.empty()) write_json(out, eval_out);
        } else if (*inspect) {
            require_file(model_in, "model");
            const auto bundle = load_model(model_in);
            const auto& p = bundle.params;
            const auto report = classify_classes(p);
            json classes = json::array();
            for (std::size_t c = 0; c < p.num_classes; ++c)
                classes.push_back({{"class", c},
                                   {"pi", p.pi[c]},
                                   {"mean_mask", report.classes[c].mean_mask},
                                   {"is_character", report.classes[c].is_character}});
            std::cout << json{{"classes", p.num_classes},
                              {"patch_dims", {p.patch_dims.rows, p.patch_dims.cols}},
                              {"pattern_dims", {p.pattern_dims.rows, p.pattern_dims.cols}},
                              {"feature_dim", p.feature_dim},
                              {"features", bundle.pipeline.kind == FeatureKind::gabor ? "gabor" : "color"},
                              {"per_class", classes}}
                             .dump(1)
                      << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kOk;
}
