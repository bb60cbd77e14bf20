// Evaluation: IoU against ground truth, gIoU (mean per-image IoU), P@50
// (fraction reaching IoU >= 0.5), per-level model evaluation, and the
// NP-collapse baseline that rewrites instructions into bare noun phrases and
// runs the concept branch.
#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pis/config.hpp"
#include "pis/dataset.hpp"
#include "pis/instructions.hpp"
#include "pis/model.hpp"
#include "pis/text_encoder.hpp"

namespace pis {

// Threshold ties count as foreground ("at least" reading).
inline Mask binarize(const Tensor& p, float threshold = 0.5f) {
    if (p.ndim() != 2) throw std::invalid_argument("binarize: need 2-d probabilities, got " + shape_str(p.shape()));
    Mask m;
    m.h = p.dim(0);
    m.w = p.dim(1);
    m.v.resize(p.data().size());
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = p.data()[i] >= threshold ? 1 : 0;
    return m;
}

// |a n b| / |a u b|; two empty masks count as a perfect match (1.0).
inline double iou(const Mask& a, const Mask& b) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument("iou: mask " + std::to_string(a.w) + "x" + std::to_string(a.h) + " vs " +
                                    std::to_string(b.w) + "x" + std::to_string(b.h));
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        inter += a.v[i] && b.v[i];
        uni += a.v[i] || b.v[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double giou_metric(const std::vector<double>& ious) {
    if (ious.empty()) throw std::invalid_argument("giou_metric: empty list");
    double s = 0;
    for (double v : ious) s += v;
    return s / static_cast<double>(ious.size());
}

// Percentage of samples with IoU >= 0.5, threshold inclusive.
inline double p_at_50(const std::vector<double>& ious) {
    if (ious.empty()) throw std::invalid_argument("p_at_50: empty list");
    int n = 0;
    for (double v : ious) n += v >= 0.5 ? 1 : 0;
    return 100.0 * static_cast<double>(n) / static_cast<double>(ious.size());
}

struct EvalResult {
    Level level = Level::Concept;
    double giou = 0.0;    // in [0, 1]; reported x100
    double p_at_50 = 0.0; // in [0, 100]
    int n_samples = 0;
};

// probs = predictor(example, instruction); instruction.level selects routing.
using MaskPredictor = std::function<Tensor(const LoadedExample&, const Instruction&)>;

// Per-level evaluation: every positive instruction at the level is one
// sample (concept level uses the concept NP against the union-of-instances
// mask; simple/complex score against the single target mask).
inline EvalResult evaluate(const std::vector<LoadedExample>& examples, Level level, const MaskPredictor& predictor) {
    if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<double> ious;
    for (const auto& ex : examples) {
        std::vector<Instruction> instrs;
        if (level == Level::Concept) {
            Instruction c;
            c.text = ex.record.concept_np;
            c.level = Level::Concept;
            c.target_id = ex.record.target_id;
            instrs.push_back(c);
        } else {
            for (const auto& ins : ex.record.positives)
                if (ins.level == level) instrs.push_back(ins);
        }
        if (instrs.empty())
            throw std::invalid_argument("evaluate: record lacks instructions at level " +
                                        std::string(routing_mode_name(level)));
        const Mask& gt = level == Level::Concept ? ex.concept_mask : ex.target_mask;
        for (const auto& ins : instrs) ious.push_back(iou(binarize(predictor(ex, ins)), gt));
    }
    EvalResult r;
    r.level = level;
    r.giou = giou_metric(ious);
    r.p_at_50 = p_at_50(ious);
    r.n_samples = static_cast<int>(ious.size());
    return r;
}

inline MaskPredictor model_predictor(ParameterGroup& pg, const ModelConfig& cfg, const Vocab& vocab) {
    return [&pg, &cfg, &vocab](const LoadedExample& ex, const Instruction& ins) {
        return model_forward(image_tensor(ex.image), tokenize(ins.text, vocab, cfg.max_len), ins.level, pg, cfg);
    };
}

// Agent-pipeline stand-in: collapse the instruction to a bare NP and query
// the concept branch with it.
inline MaskPredictor np_collapse_predictor(ParameterGroup& pg, const ModelConfig& cfg, const Vocab& vocab) {
    return [&pg, &cfg, &vocab](const LoadedExample& ex, const Instruction& ins) {
        const std::string np = np_extract_baseline(ins);
        return model_forward(image_tensor(ex.image), tokenize(np, vocab, cfg.max_len), RoutingMode::Concept, pg, cfg);
    };
}

inline EvalResult evaluate_model(ParameterGroup& pg, const ModelConfig& cfg, const Vocab& vocab,
                                 const std::vector<LoadedExample>& examples, Level level) {
    return evaluate(examples, level, model_predictor(pg, cfg, vocab));
}

inline EvalResult evaluate_np_baseline(ParameterGroup& pg, const ModelConfig& cfg, const Vocab& vocab,
                                       const std::vector<LoadedExample>& examples, Level level) {
    return evaluate(examples, level, np_collapse_predictor(pg, cfg, vocab));
}

// ---- reporting ----

struct EvalRow {
    std::string model_tag;
    EvalResult result;
};

// CSV columns: level, n, giou (x100, one decimal), p_at_50, model_tag.
inline void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path);
    f << "level,n,giou,p_at_50,model_tag\n";
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%d,%.1f,%.1f,%s\n", routing_mode_name(r.result.level),
                      r.result.n_samples, r.result.giou * 100.0, r.result.p_at_50, r.model_tag.c_str());
        f << buf;
    }
}

inline std::string format_eval_line(const EvalRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %-8s n=%-5d gIoU=%5.1f  P@50=%5.1f", r.model_tag.c_str(),
                  routing_mode_name(r.result.level), r.result.n_samples, r.result.giou * 100.0, r.result.p_at_50);
    return buf;
}

}  // namespace pis
