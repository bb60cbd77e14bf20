// The annotation-inspection-correction state machine. Each sample iterates
// annotate -> inspect for up to max_rounds; a set is accepted only when the
// inspector matches the answer key on all 8 judgments, otherwise the whole
// set is rejected and regenerated. Exhausted samples go to the human queue,
// a batch JSONL file whose corrections are revalidated by the oracle on
// import.
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pis/agents.hpp"
#include "pis/dataset.hpp"
#include "pis/instructions.hpp"

namespace pis {

enum class SampleStatus { Pending, Accepted, HumanQueue, Discarded };

inline const char* sample_status_name(SampleStatus s) {
    switch (s) {
        case SampleStatus::Pending: return "pending";
        case SampleStatus::Accepted: return "accepted";
        case SampleStatus::HumanQueue: return "human_queue";
        case SampleStatus::Discarded: return "discarded";
    }
    throw std::invalid_argument("unknown sample status");
}

struct EngineSample {
    int id = 0;
    DatasetRecord record;  // latest candidate (or the accepted set)
    int round = 0;
    SampleStatus status = SampleStatus::Pending;
    uint64_t seed = 0;
    std::vector<std::string> failure_history;
};

struct EngineStats {
    int accepted = 0;
    int queued = 0;
    int discarded = 0;
    std::map<int, int> round_histogram;  // accepting round -> count
    int agent_failures = 0;
};

// One sample through the loop. Agent errors (remote transport/schema) burn
// the round and the loop continues; nothing is ever dropped.
inline EngineSample run_loop(EngineSample sample, Annotator& annotator, Inspector& inspector, int max_rounds = 10,
                             EngineStats* stats = nullptr) {
    if (sample.status != SampleStatus::Pending)
        throw std::invalid_argument("run_loop: sample " + std::to_string(sample.id) + " is not pending");
    Rng rng(sample.seed);
    for (int round = 1; round <= max_rounds; ++round) {
        sample.round = round;
        const uint64_t round_seed = rng.next_u64();
        try {
            DatasetRecord candidate = annotator.annotate(sample.record, round_seed);
            const InspectionTask task = make_inspection_task(candidate, round_seed ^ 0x7a5cULL);
            const auto outcome = judge_selection(task, inspector.inspect(task, round_seed));
            if (outcome.accepted) {
                sample.record = candidate;
                sample.status = SampleStatus::Accepted;
                if (stats) {
                    ++stats->accepted;
                    ++stats->round_histogram[round];
                }
                return sample;
            }
            sample.failure_history.push_back("round " + std::to_string(round) + ": " +
                                             std::to_string(outcome.wrong_indices.size()) + " wrong judgments");
        } catch (const AgentError& e) {
            sample.failure_history.push_back("round " + std::to_string(round) + ": agent failure: " + e.what());
            if (stats) ++stats->agent_failures;
        }
    }
    sample.status = SampleStatus::HumanQueue;
    if (stats) ++stats->queued;
    return sample;
}

inline std::vector<EngineSample> run_engine(std::vector<EngineSample> samples, Annotator& annotator,
                                            Inspector& inspector, int max_rounds, EngineStats& stats) {
    for (auto& s : samples) s = run_loop(std::move(s), annotator, inspector, max_rounds, &stats);
    return samples;
}

// ---- human correction queue ----

inline json to_json(const EngineSample& s) {
    return json{{"id", s.id},
                {"status", sample_status_name(s.status)},
                {"round", s.round},
                {"seed", s.seed},
                {"record", to_json(s.record)},
                {"failure_history", s.failure_history}};
}

// Writes the HumanQueue samples as JSONL with full candidate and history.
inline int export_human_queue(const std::vector<EngineSample>& samples, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("export_human_queue: cannot open " + path);
    int n = 0;
    for (const auto& s : samples) {
        if (s.status != SampleStatus::HumanQueue) continue;
        f << to_json(s).dump() << "\n";
        ++n;
    }
    return n;
}

struct ImportOutcome {
    int accepted = 0;
    int discarded = 0;
    std::vector<std::string> rejected;  // "id: reason" for failed imports
};

inline bool validate_correction(const DatasetRecord& rec, std::string& reason) {
    if (rec.positives.size() != 4 || rec.negatives.size() != 4) {
        reason = "needs exactly 4 positives and 4 negatives";
        return false;
    }
    if (rec.concept_np.empty()) {
        reason = "missing concept NP";
        return false;
    }
    for (const auto& ins : rec.positives)
        if (!instruction_aligned(rec.scene, rec.target_id, ins)) {
            reason = "positive does not uniquely describe the target: \"" + ins.text + "\"";
            return false;
        }
    for (const auto& ins : rec.negatives)
        if (instruction_aligned(rec.scene, rec.target_id, ins)) {
            reason = "negative actually describes the target: \"" + ins.text + "\"";
            return false;
        }
    return true;
}

// Applies a corrections file: each line carries {"id": N, "discard": true}
// or {"id": N, "record": {...}}. Edited records are revalidated by the
// oracle inspector (every positive must uniquely describe the target, every
// negative must be misaligned); failures leave the sample queued.
inline ImportOutcome import_corrections(std::vector<EngineSample>& samples, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("import_corrections: cannot open " + path);
    std::map<int, EngineSample*> by_id;
    for (auto& s : samples) by_id[s.id] = &s;

    ImportOutcome out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const int id = j.at("id").get<int>();
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            out.rejected.push_back(std::to_string(id) + ": unknown sample id");
            continue;
        }
        EngineSample& s = *it->second;
        if (s.status != SampleStatus::HumanQueue) {
            out.rejected.push_back(std::to_string(id) + ": sample not in human queue");
            continue;
        }
        if (j.value("discard", false)) {
            s.status = SampleStatus::Discarded;
            ++out.discarded;
            continue;
        }
        if (!j.contains("record")) {
            out.rejected.push_back(std::to_string(id) + ": neither record nor discard marker");
            continue;
        }
        DatasetRecord rec;
        try {
            rec = record_from_json(j.at("record"));
        } catch (const std::exception& e) {
            out.rejected.push_back(std::to_string(id) + ": malformed record: " + e.what());
            continue;
        }
        rec.scene = s.record.scene;  // corrections edit instructions, not the scene
        rec.target_id = s.record.target_id;
        std::string reason;
        if (!validate_correction(rec, reason)) {
            out.rejected.push_back(std::to_string(id) + ": " + reason);
            continue;
        }
        s.record = rec;
        s.status = SampleStatus::Accepted;
        ++out.accepted;
    }
    return out;
}

}  // namespace pis
