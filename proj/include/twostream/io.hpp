#pragma once

// Serialization of metrics logs and retrieval reports. The metrics log is
// line-delimited JSON, one record per training step; doubles use shortest
// round-trip formatting so identical runs write identical bytes.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostream/errors.hpp"
#include "twostream/eval.hpp"
#include "twostream/trainer.hpp"

namespace twostream {

inline nlohmann::json metrics_record_to_json(const MetricsRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    if (r.skipped) {
        for (const char* key : {"l_i2t", "l_t2i", "l_inst", "l_task", "l_cmvm", "l_cmlm",
                                "l_token", "total"})
            j[key] = nullptr;
    } else {
        j["l_i2t"] = r.breakdown.l_i2t;
        j["l_t2i"] = r.breakdown.l_t2i;
        j["l_inst"] = r.breakdown.l_inst;
        j["l_task"] = r.breakdown.l_task;
        j["l_cmvm"] = r.breakdown.l_cmvm;
        j["l_cmlm"] = r.breakdown.l_cmlm;
        j["l_token"] = r.breakdown.l_token;
        j["total"] = r.breakdown.total;
    }
    j["kept_fraction"] = r.breakdown.kept_fraction;
    j["queue_len"] = r.queue_len;
    if (r.amf) {
        j["amf_mu"] = r.amf->mu;
        j["amf_sigma"] = r.amf->sigma;
        j["amf_threshold"] = r.amf->threshold;
    } else {
        j["amf_mu"] = nullptr;
        j["amf_sigma"] = nullptr;
        j["amf_threshold"] = nullptr;
    }
    j["skipped"] = r.skipped;
    j["dropped_ids"] = r.dropped_ids;
    return j;
}

inline void write_metrics_jsonl(const std::string& path,
                                const std::vector<MetricsRecord>& records) {
    std::ofstream out(path);
    if (!out) throw FileError("metrics: cannot open " + path + " for writing");
    for (const auto& r : records) out << metrics_record_to_json(r).dump() << '\n';
    if (!out) throw FileError("metrics: write failure on " + path);
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["direction"] = r.direction;
    nlohmann::json rk = nlohmann::json::object();
    for (const auto& [k, v] : r.r_at) rk[std::to_string(k)] = v;
    j["r_at"] = rk;
    j["median_rank"] = r.median_rank;
    j["n_queries"] = r.n_queries;
    j["wall_times"] = r.wall_times;
    return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw FileError("write failure on " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw FileError("write failure on " + path);
}

}  // namespace twostream
