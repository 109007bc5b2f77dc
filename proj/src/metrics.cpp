#include "nerfba/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "nerfba/errors.hpp"
#include "nerfba/optimizer.hpp"

namespace nerfba {

double psnr(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw ValidationError("psnr: image size mismatch");
    if (a.rgb.empty()) throw ValidationError("psnr: empty image");
    double mse = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = a.rgb[i] - b.rgb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> luma(const Image& img) {
    std::vector<double> g(img.pixel_count());
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] = 0.299 * img.rgb[3 * i] + 0.587 * img.rgb[3 * i + 1] + 0.114 * img.rgb[3 * i + 2];
    }
    return g;
}

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        double d = i - (kWin - 1) / 2.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-mode Gaussian filter: output is (w - 10) x (h - 10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h) {
    const auto k = gaussian_kernel();
    const int ow = w - kWin + 1, oh = h - kWin + 1;
    std::vector<double> rows(static_cast<size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[i] * in[static_cast<size_t>(y) * w + x + i];
            rows[static_cast<size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[i] * rows[static_cast<size_t>(y + i) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw ValidationError("ssim: image size mismatch");
    if (a.width < kWin || a.height < kWin) {
        throw ValidationError("ssim: image smaller than the 11x11 window");
    }
    const int w = a.width, h = a.height;
    auto ga = luma(a), gb = luma(b);
    std::vector<double> ga2(ga.size()), gb2(ga.size()), gab(ga.size());
    for (size_t i = 0; i < ga.size(); ++i) {
        ga2[i] = ga[i] * ga[i];
        gb2[i] = gb[i] * gb[i];
        gab[i] = ga[i] * gb[i];
    }
    auto mu_a = filter_valid(ga, w, h);
    auto mu_b = filter_valid(gb, w, h);
    auto m_a2 = filter_valid(ga2, w, h);
    auto m_b2 = filter_valid(gb2, w, h);
    auto m_ab = filter_valid(gab, w, h);

    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        double va = m_a2[i] - mu_a[i] * mu_a[i];
        double vb = m_b2[i] - mu_b[i] * mu_b[i];
        double cab = m_ab[i] - mu_a[i] * mu_b[i];
        double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cab + kC2);
        double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_a.size());
}

std::string record_to_csv_row(const ExperimentRecord& r) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s", r.iter,
                  r.wall_seconds, r.rot_err_deg, r.trans_err, r.train_psnr, r.test_psnr,
                  r.test_ssim, r.mode.c_str());
    return buf;
}

std::string records_to_csv(std::span<const ExperimentRecord> records) {
    std::string out = kRecordsCsvHeader;
    out += "\n";
    for (const auto& r : records) {
        out += record_to_csv_row(r);
        out += "\n";
    }
    return out;
}

std::vector<ExperimentRecord> parse_records_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("records csv: empty input");
    if (line != kRecordsCsvHeader) throw ParseError("records csv: unexpected header: " + line);
    std::vector<ExperimentRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 8) throw ParseError("records csv: expected 8 fields in: " + line);
        ExperimentRecord r;
        r.iter = std::stoi(fields[0]);
        r.wall_seconds = std::strtod(fields[1].c_str(), nullptr);
        r.rot_err_deg = std::strtod(fields[2].c_str(), nullptr);
        r.trans_err = std::strtod(fields[3].c_str(), nullptr);
        r.train_psnr = std::strtod(fields[4].c_str(), nullptr);
        r.test_psnr = std::strtod(fields[5].c_str(), nullptr);
        r.test_ssim = std::strtod(fields[6].c_str(), nullptr);
        r.mode = fields[7];
        records.push_back(std::move(r));
    }
    return records;
}

void write_records_csv(std::span<const ExperimentRecord> records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << records_to_csv(records);
    if (!out) throw IoError("short write: " + path);
}

std::vector<ExperimentRecord> load_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_records_csv(buf.str());
}

std::optional<std::pair<int, double>> time_to_threshold(std::span<const ExperimentRecord> records,
                                                        RecordMetric metric, double threshold) {
    for (const auto& r : records) {
        double v = metric == RecordMetric::rot_err_deg ? r.rot_err_deg : r.trans_err;
        if (v < threshold) return std::make_pair(r.iter, r.wall_seconds);
    }
    return std::nullopt;
}

PoseSE3 testtime_pose_refine(const FieldModel& model, const Image& target,
                             const Intrinsics& intrinsics, const PoseSE3& init,
                             const RefinePoseOptions& options) {
    RenderEngine engine(options.workers);

    // Local correction around the fixed initial pose; xi = 0 initially.
    Vec6 xi = Vec6::Zero();
    std::vector<RayJob> jobs;
    jobs.reserve(target.pixel_count());
    const double footprint = (1.0 / std::abs(intrinsics.fx)) * 2.0 / std::sqrt(12.0);
    DepthSamples depths =
        stratified_depths(options.render.near, options.render.far, options.render.samples_per_ray, nullptr);
    for (int y = 0; y < target.height; ++y) {
        for (int x = 0; x < target.width; ++x) {
            RayJob job;
            job.view = 0;
            job.d_c = camera_dir(intrinsics, Eigen::Vector2d(x, y));
            job.footprint_radius = footprint;
            job.target = Vec3(target.at(x, y, 0), target.at(x, y, 1), target.at(x, y, 2));
            job.depths = depths;
            jobs.push_back(std::move(job));
        }
    }

    AdamBuf adam;
    Vec6 best_xi = xi;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int step = 0; step < options.steps; ++step) {
        ViewContext vc;
        vc.pose = compose(exp_map(xi), init);
        vc.chain = local_chain(xi, init);
        BatchGradResult g = engine.loss_and_grads(model, std::span<const ViewContext>(&vc, 1),
                                                  jobs, options.render);
        if (g.loss < best_loss) {
            best_loss = g.loss;
            best_xi = xi;
        }
        adam_step(xi.data(), g.pose_grads[0].data(), 6, adam, options.lr);
    }
    if (options.steps > 0) {
        // Score the final iterate as well.
        ViewContext vc;
        vc.pose = compose(exp_map(xi), init);
        vc.chain = local_chain(xi, init);
        std::vector<Vec3> colors;
        engine.render_rays(model, std::span<const ViewContext>(&vc, 1), jobs, options.render,
                           colors, nullptr);
        double loss = 0.0;
        for (size_t i = 0; i < jobs.size(); ++i) loss += (colors[i] - jobs[i].target).squaredNorm();
        loss /= static_cast<double>(jobs.size());
        if (loss < best_loss) {
            best_loss = loss;
            best_xi = xi;
        }
    }
    return compose(exp_map(best_xi), init);
}

void emit_report(std::span<const ExperimentRecord> records, const std::string& out_dir) {
    if (records.empty()) throw ValidationError("emit_report: no records");
    std::filesystem::create_directories(out_dir);
    write_records_csv(records, (std::filesystem::path(out_dir) / "records.csv").string());

    // Group records by mode tag, preserving first-seen order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<ExperimentRecord>> by_mode;
    for (const auto& r : records) {
        if (!by_mode.count(r.mode)) order.push_back(r.mode);
        by_mode[r.mode].push_back(r);
    }

    std::ofstream out(std::filesystem::path(out_dir) / "summary.txt");
    if (!out) throw IoError("cannot write summary in " + out_dir);
    struct Threshold {
        RecordMetric metric;
        double value;
        const char* label;
    };
    const Threshold thresholds[] = {
        {RecordMetric::rot_err_deg, 0.29, "rotation error < 0.29 deg"},
        {RecordMetric::rot_err_deg, 1.0, "rotation error < 1 deg"},
        {RecordMetric::trans_err, 5e-3, "translation error < 0.005"},
        {RecordMetric::trans_err, 1e-2, "translation error < 0.01"},
        {RecordMetric::trans_err, 2e-2, "translation error < 0.02"},
    };
    for (const auto& mode : order) {
        const auto& rs = by_mode[mode];
        const auto& last = rs.back();
        out << "mode " << mode << ": final iter " << last.iter << ", rot_err_deg " << last.rot_err_deg
            << ", trans_err " << last.trans_err << ", train_psnr " << last.train_psnr
            << ", test_psnr " << last.test_psnr << ", test_ssim " << last.test_ssim << "\n";
        for (const auto& th : thresholds) {
            auto hit = time_to_threshold(rs, th.metric, th.value);
            if (hit) {
                out << "  " << th.label << " at iter " << hit->first << " (wall " << hit->second
                    << " s)\n";
            } else {
                out << "  " << th.label << ": not reached\n";
            }
        }
    }
    if (!out) throw IoError("short write of summary in " + out_dir);
}

}  // namespace nerfba
