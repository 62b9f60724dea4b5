#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/geometry.hpp"
#include "posegen/losses.hpp"

#include "json.hpp"

namespace posegen {

struct EvalRecord {
    std::string object_id;
    double add_distance = 0.0;
    double adds_distance = 0.0;
    bool symmetric = false;
};

// Same math as the corresponding losses, under the metric names.
inline double add_distance(const RigidTransform& gt, const RigidTransform& est,
                           const PointCloud& model_points) {
    return pose_loss(gt, est, model_points);
}

inline double adds_distance(const RigidTransform& gt, const RigidTransform& est,
                            const PointCloud& model_points) {
    return sym_pose_loss(gt, est, model_points);
}

// Governing distance of a record. With use_symmetric_rule the per-object
// symmetric flag selects ADD vs ADD-S (LineMOD-style ADD(-S) protocol);
// without it ADD-S governs every record (YCB-style ADD-S protocol).
inline double governing_distance(const EvalRecord& r, bool use_symmetric_rule) {
    if (use_symmetric_rule) return r.symmetric ? r.adds_distance : r.add_distance;
    return r.adds_distance;
}

// Fraction of records whose governing distance is strictly below threshold.
inline double accuracy_at(const std::vector<EvalRecord>& records, double threshold,
                          bool use_symmetric_rule) {
    if (records.empty()) throw std::invalid_argument("accuracy_at: no records");
    if (threshold <= 0.0) throw std::invalid_argument("accuracy_at: threshold must be > 0");
    std::size_t hits = 0;
    for (const auto& r : records) {
        if (governing_distance(r, use_symmetric_rule) < threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

// Exact area under the accuracy-vs-threshold step curve on [0, max_threshold],
// normalized to [0, 1]: (1/(n*tau)) * sum_i max(0, tau - d_i).
inline double auc(const std::vector<EvalRecord>& records, double max_threshold,
                  bool use_symmetric_rule = false) {
    if (records.empty()) throw std::invalid_argument("auc: no records");
    if (max_threshold <= 0.0) throw std::invalid_argument("auc: max_threshold must be > 0");
    double area = 0.0;
    for (const auto& r : records) {
        area += std::max(0.0, max_threshold - governing_distance(r, use_symmetric_rule));
    }
    return area / (static_cast<double>(records.size()) * max_threshold);
}

struct ReportOptions {
    double auc_max_threshold = 0.1;   // meters (PoseCNN convention)
    double two_cm_threshold = 0.02;   // meters
    double add_diameter_factor = 0.1; // LineMOD-style ADD threshold = factor * diameter
};

struct ReportRow {
    std::string object_id;  // "MEAN" for the summary row
    double auc = 0.0;
    double acc_2cm = 0.0;
    double acc_add = 0.0;
};

// One row per object plus an unweighted MEAN row (last). acc_add uses the
// per-object symmetric rule and a diameter-scaled threshold; auc and acc_2cm
// use the ADD-S protocol.
inline std::vector<ReportRow> per_object_report(const std::vector<EvalRecord>& records,
                                                const std::map<std::string, double>& diameters,
                                                const ReportOptions& opt = {}) {
    if (records.empty()) throw std::invalid_argument("per_object_report: no records");
    std::map<std::string, std::vector<EvalRecord>> grouped;
    for (const auto& r : records) grouped[r.object_id].push_back(r);
    std::vector<ReportRow> rows;
    ReportRow mean{"MEAN", 0.0, 0.0, 0.0};
    for (const auto& [object_id, group] : grouped) {
        auto it = diameters.find(object_id);
        if (it == diameters.end()) {
            throw std::invalid_argument("per_object_report: no diameter for object '" + object_id + "'");
        }
        ReportRow row;
        row.object_id = object_id;
        row.auc = auc(group, opt.auc_max_threshold, false);
        row.acc_2cm = accuracy_at(group, opt.two_cm_threshold, false);
        row.acc_add = accuracy_at(group, opt.add_diameter_factor * it->second, true);
        mean.auc += row.auc;
        mean.acc_2cm += row.acc_2cm;
        mean.acc_add += row.acc_add;
        rows.push_back(row);
    }
    const double n = static_cast<double>(rows.size());
    mean.auc /= n;
    mean.acc_2cm /= n;
    mean.acc_add /= n;
    rows.push_back(mean);
    return rows;
}

inline void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows,
                             const std::string& provenance = "") {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
    if (!provenance.empty()) out << "# " << provenance << "\n";
    out << "object,auc,acc_2cm,acc_add\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f", r.object_id.c_str(), r.auc, r.acc_2cm,
                      r.acc_add);
        out << buf << "\n";
    }
}

inline void write_report_json(const std::string& path, const std::vector<ReportRow>& rows,
                              const nlohmann::json& provenance = {}) {
    nlohmann::json j;
    if (!provenance.empty()) j["config"] = provenance;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"object", r.object_id},
                             {"auc", r.auc},
                             {"acc_2cm", r.acc_2cm},
                             {"acc_add", r.acc_add}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_report_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

}  // namespace posegen
