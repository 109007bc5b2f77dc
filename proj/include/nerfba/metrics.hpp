#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nerfba/image.hpp"
#include "nerfba/renderer.hpp"
#include "nerfba/scene.hpp"

namespace nerfba {

// 10*log10(1/MSE) on [0,1] images; identical images give +infinity.
double psnr(const Image& a, const Image& b);

// Mean local SSIM on the luma channel (BT.601 weights), 11x11 Gaussian
// window sigma = 1.5, C1 = 0.01^2, C2 = 0.03^2, valid-window borders.
double ssim(const Image& a, const Image& b);

struct ExperimentRecord {
    int iter = 0;
    double wall_seconds = 0.0;
    double rot_err_deg = 0.0;
    double trans_err = 0.0;
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
    std::string mode;
};

inline const char* kRecordsCsvHeader =
    "iter,wall_seconds,rot_err_deg,trans_err,train_psnr,test_psnr,test_ssim,mode";

std::string record_to_csv_row(const ExperimentRecord& r);
std::string records_to_csv(std::span<const ExperimentRecord> records);
std::vector<ExperimentRecord> parse_records_csv(const std::string& text);
void write_records_csv(std::span<const ExperimentRecord> records, const std::string& path);
std::vector<ExperimentRecord> load_records_csv(const std::string& path);

enum class RecordMetric { rot_err_deg, trans_err };

// First record with metric strictly below the threshold: (iter, wall_seconds).
std::optional<std::pair<int, double>> time_to_threshold(std::span<const ExperimentRecord> records,
                                                        RecordMetric metric, double threshold);

struct RefinePoseOptions {
    int steps = 40;
    double lr = 3e-3;
    RenderOptions render;
    int workers = 1;
};

// Photometric pose refinement against a frozen model: optimizes a local
// SE(3) correction of the initial pose with Adam on the full-image loss and
// returns the best-loss pose seen.
PoseSE3 testtime_pose_refine(const FieldModel& model, const Image& target,
                             const Intrinsics& intrinsics, const PoseSE3& init,
                             const RefinePoseOptions& options);

// records.csv plus a plain-text summary (final metrics and threshold
// crossings per mode tag) under out_dir.
void emit_report(std::span<const ExperimentRecord> records, const std::string& out_dir);

}  // namespace nerfba
