// Annotator and inspector agents: oracle (rule-based, scene-graph-backed),
// noisy (oracle with independent corruption/flip probability), and remote
// (HTTP, so a real MLLM can be plugged in without code changes). Remote
// replies are schema-validated, never trusted.
#pragma once

#include <cstdlib>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pis/base64.hpp"
#include "pis/dataset.hpp"
#include "pis/instructions.hpp"
#include "pis/rng.hpp"
#include "pis/scene.hpp"

namespace pis {

// External-agent failure after retries; mapped to exit code 3 by the CLI.
struct AgentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AgentEndpointSpec {
    enum class Kind { Oracle, Noisy, Remote };
    Kind kind = Kind::Oracle;
    double epsilon = 0.0;  // noisy only, in [0, 1]
    std::string url;       // remote only
    double timeout_s = 30.0;
    int retries = 2;

    // "oracle" | "noisy:EPS" | "remote:URL"; PIS_REMOTE_TIMEOUT overrides
    // the remote timeout.
    static AgentEndpointSpec parse(const std::string& s) {
        AgentEndpointSpec spec;
        if (const char* t = std::getenv("PIS_REMOTE_TIMEOUT")) spec.timeout_s = std::atof(t);
        if (s == "oracle") {
            spec.kind = Kind::Oracle;
        } else if (s.rfind("noisy:", 0) == 0) {
            spec.kind = Kind::Noisy;
            spec.epsilon = std::atof(s.c_str() + 6);
            if (spec.epsilon < 0.0 || spec.epsilon > 1.0)
                throw std::invalid_argument("agents: noisy epsilon must be in [0,1]: " + s);
        } else if (s.rfind("remote:", 0) == 0) {
            spec.kind = Kind::Remote;
            spec.url = s.substr(7);
            if (spec.url.empty()) throw std::invalid_argument("agents: remote url missing: " + s);
        } else {
            throw std::invalid_argument("agents: unknown agent spec: " + s);
        }
        return spec;
    }
};

// The multiple-choice verification task: all 8 positive+negative candidates
// shuffled together; the answer key is the positive subset. The scene graph
// rides along for oracle evaluation; remote inspectors only see the wire
// fields (image, mask, choice texts).
struct InspectionTask {
    std::string image_ref;
    std::string mask_ref;
    std::vector<Instruction> choices;  // exactly 8
    std::set<int> answer_key;          // exactly 4 indices
    Scene scene;
    int target_id = -1;
};

inline InspectionTask make_inspection_task(const DatasetRecord& candidate, uint64_t seed) {
    if (candidate.positives.size() != 4 || candidate.negatives.size() != 4)
        throw std::invalid_argument("inspection task needs 4 positives and 4 negatives");
    InspectionTask task;
    task.image_ref = candidate.image_path;
    task.mask_ref = candidate.mask_path;
    task.scene = candidate.scene;
    task.target_id = candidate.target_id;
    std::vector<std::pair<Instruction, bool>> all;
    for (const auto& i : candidate.positives) all.emplace_back(i, true);
    for (const auto& i : candidate.negatives) all.emplace_back(i, false);
    Rng rng(seed);
    rng.shuffle(all);
    for (size_t i = 0; i < all.size(); ++i) {
        task.choices.push_back(all[i].first);
        if (all[i].second) task.answer_key.insert(static_cast<int>(i));
    }
    return task;
}

class Annotator {
public:
    virtual ~Annotator() = default;
    // Produces a fresh instruction-set candidate for the sample's target.
    virtual DatasetRecord annotate(const DatasetRecord& base, uint64_t seed) = 0;
};

class Inspector {
public:
    virtual ~Inspector() = default;
    // Returns the indices the agent believes are the positives.
    virtual std::set<int> inspect(const InspectionTask& task, uint64_t seed) = 0;
};

struct InspectOutcome {
    bool accepted = false;
    std::vector<int> wrong_indices;  // symmetric difference vs the key
};

// Accept only on 100% agreement with the answer key across all 8 judgments.
inline InspectOutcome judge_selection(const InspectionTask& task, const std::set<int>& selected) {
    InspectOutcome out;
    for (int i = 0; i < static_cast<int>(task.choices.size()); ++i) {
        const bool truth = task.answer_key.count(i) != 0;
        const bool said = selected.count(i) != 0;
        if (truth != said) out.wrong_indices.push_back(i);
    }
    out.accepted = out.wrong_indices.empty();
    return out;
}

// ---- oracle agents ----

class OracleAnnotator : public Annotator {
public:
    DatasetRecord annotate(const DatasetRecord& base, uint64_t seed) override {
        DatasetRecord rec = instructions_for(base.scene, base.target_id, seed);
        rec.image_path = base.image_path;
        rec.mask_path = base.mask_path;
        rec.concept_mask_path = base.concept_mask_path;
        return rec;
    }
};

class OracleInspector : public Inspector {
public:
    std::set<int> inspect(const InspectionTask& task, uint64_t) override {
        std::set<int> sel;
        for (size_t i = 0; i < task.choices.size(); ++i)
            if (instruction_aligned(task.scene, task.target_id, task.choices[i])) sel.insert(static_cast<int>(i));
        return sel;
    }
};

// ---- noisy agents ----

// Oracle output with each instruction's semantics corrupted independently
// with probability epsilon (one predicate contradicted, text re-rendered via
// the negative-construction machinery).
class NoisyAnnotator : public Annotator {
public:
    explicit NoisyAnnotator(double epsilon) : epsilon_(epsilon) {}

    DatasetRecord annotate(const DatasetRecord& base, uint64_t seed) override {
        OracleAnnotator oracle;
        DatasetRecord rec = oracle.annotate(base, seed);
        Rng rng(seed ^ 0x5eed5eedULL);
        for (auto* list : {&rec.positives, &rec.negatives})
            for (auto& ins : *list)
                if (rng.next_bool(epsilon_)) corrupt(ins, rec.scene, rng);
        return rec;
    }

private:
    static void corrupt(Instruction& ins, const Scene& scene, Rng& rng) {
        detail::InstrDraft d;
        d.level = ins.level;
        d.form = ins.form;
        d.preds = ins.semantics;
        if (detail::find_pred(d.preds, PredKind::Adjacent)) d.variant = 2;
        detail::InstrDraft flipped = detail::flip_one(d, scene, rng);
        ins.semantics = flipped.preds;
        ins.text = detail::render_text(flipped, scene);
    }

    double epsilon_;
};

// Oracle judgments with each of the 8 binary decisions flipped independently
// with probability epsilon.
class NoisyInspector : public Inspector {
public:
    explicit NoisyInspector(double epsilon) : epsilon_(epsilon) {}

    std::set<int> inspect(const InspectionTask& task, uint64_t seed) override {
        OracleInspector oracle;
        std::set<int> sel = oracle.inspect(task, seed);
        Rng rng(seed ^ 0xf11bf11bULL);
        for (int i = 0; i < static_cast<int>(task.choices.size()); ++i)
            if (rng.next_bool(epsilon_)) {
                if (sel.count(i))
                    sel.erase(i);
                else
                    sel.insert(i);
            }
        return sel;
    }

private:
    double epsilon_;
};

// Always rejects; handy for driving samples into the human queue.
class RejectingInspector : public Inspector {
public:
    std::set<int> inspect(const InspectionTask&, uint64_t) override { return {}; }
};

struct AgentPair {
    std::unique_ptr<Annotator> annotator;
    std::unique_ptr<Inspector> inspector;
};

}  // namespace pis
