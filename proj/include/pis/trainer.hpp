// Three-stage curriculum on top of stage-0 concept pretraining. Stage 0
// trains the toy backbone on concept prompts and is then frozen, standing in
// for the pretrained frozen backbone; stage 1 trains the S-adapters on
// simple instructions, stage 2 inherits the C-adapters from S and trains
// them on complex instructions, stage 3 jointly fine-tunes all adapters with
// the alignment objectives.
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pis/dataset.hpp"
#include "pis/losses.hpp"
#include "pis/model.hpp"
#include "pis/params.hpp"
#include "pis/rng.hpp"
#include "pis/text_encoder.hpp"

namespace pis {

struct LossFlags {
    bool align = true;
    bool hard = true;
};

// Stage defaults that train well at this scale: the C-only stage needs the
// larger rate to converge, and the joint stage is a short harmonization pass
// so that its refinements ride on top of the dedicated stages instead of
// redoing them.
inline int default_stage_steps(int stage) {
    constexpr int steps[4] = {300, 500, 800, 150};
    return steps[stage];
}

inline float default_stage_lr(int stage) {
    constexpr float lr[4] = {1e-3f, 1e-3f, 3e-3f, 1e-3f};
    return lr[stage];
}

struct StageConfig {
    int stage = 0;  // 0 = concept pretraining, 1..3 = curriculum
    int steps = 200;
    float lr = 1e-3f;
    int batch_size = 8;
    uint64_t seed = 0;
    LossFlags loss_flags;        // honored in stage 3
    bool stage2_train_s = false; // alternate reading: S keeps training in stage 2
    // The joint stage aligns with the simple branch as a fixed teacher by
    // default: bidirectional KL drags the stronger branch toward the weaker
    // one at this scale (measured on held-out scenes), while teacher-mode
    // alignment transfers simple-branch grounding into the complex branch.
    AlignOptions align_opt{.detach_simple = true};
    HardRegionOptions hard_opt;

    static StageConfig defaults_for(int stage, uint64_t seed) {
        StageConfig c;
        c.stage = stage;
        c.steps = default_stage_steps(stage);
        c.lr = default_stage_lr(stage);
        c.seed = seed;
        return c;
    }
};

// Trainable names per stage. Everything outside the returned set stays
// bitwise frozen through the stage.
inline std::set<std::string> trainable_set(int stage, const ParameterGroup& pg, bool stage2_train_s = false) {
    std::set<std::string> out;
    for (const auto& [name, t] : pg.entries) {
        const bool adapter = is_adapter_param(name);
        const bool s_adapter = name.rfind("text.S.", 0) == 0 || name.rfind("head.S.", 0) == 0;
        const bool c_adapter = name.rfind("text.C.", 0) == 0 || name.rfind("head.C.", 0) == 0;
        switch (stage) {
            case 0:
                if (!adapter) out.insert(name);
                break;
            case 1:
                if (s_adapter) out.insert(name);
                break;
            case 2:
                if (c_adapter || (stage2_train_s && s_adapter)) out.insert(name);
                break;
            case 3:
                if (adapter) out.insert(name);
                break;
            default:
                throw std::invalid_argument("trainable_set: stage must be 0..3");
        }
    }
    return out;
}

// Adaptive-moment optimizer over the group's trainable set.
class Adam {
public:
    Adam(ParameterGroup& pg, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : pg_(&pg), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step() {
        ++t_;
        const float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
        const float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
        for (const auto& name : pg_->trainable) {
            Tensor& p = pg_->at(name);
            auto& g = p.grad();
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != g.size()) m.assign(g.size(), 0.0f);
            if (v.size() != g.size()) v.assign(g.size(), 0.0f);
            auto& data = p.data();
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = b1_ * m[i] + (1.0f - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0f - b2_) * g[i] * g[i];
                const float mhat = m[i] / bc1;
                const float vhat = v[i] / bc2;
                data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    ParameterGroup* pg_;
    float lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::map<std::string, std::vector<float>> m_, v_;
};

// Deterministic reshuffled-epoch index stream.
class BatchSampler {
public:
    BatchSampler(size_t n, uint64_t seed) : n_(n), rng_(seed) { refill(); }

    std::vector<size_t> next(int batch_size) {
        std::vector<size_t> out;
        for (int i = 0; i < batch_size; ++i) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(n_);
        for (size_t i = 0; i < n_; ++i) order_[i] = i;
        rng_.shuffle(order_);
        pos_ = 0;
    }

    size_t n_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t pos_ = 0;
};

namespace detail {

inline const Instruction& pick_positive(const DatasetRecord& rec, Level level, Rng& rng) {
    std::vector<const Instruction*> opts;
    for (const auto& ins : rec.positives)
        if (ins.level == level) opts.push_back(&ins);
    if (opts.empty())
        throw std::invalid_argument("batch record has no positive at level " +
                                    std::string(routing_mode_name(level)));
    return *opts[rng.next_below(opts.size())];
}

}  // namespace detail

// One optimizer step over a batch. Stages 0-2 apply the segmentation loss on
// the stage's branch; stage 3 averages both branches' segmentation losses
// and adds the alignment terms. Gradients are zeroed after the update.
inline LossBreakdown train_step(const std::vector<const LoadedExample*>& batch, const StageConfig& cfg,
                                ParameterGroup& pg, const ModelConfig& mcfg, const Vocab& vocab, Adam& opt,
                                Rng& pick_rng) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const float inv_b = 1.0f / static_cast<float>(batch.size());

    Tensor total;
    LossBreakdown parts;
    for (const LoadedExample* ex : batch) {
        Tensor item;
        if (cfg.stage <= 2) {
            RoutingMode mode = RoutingMode::Concept;
            std::string text = ex->record.concept_np;
            const Mask* gt = &ex->concept_mask;
            if (cfg.stage == 1) {
                mode = RoutingMode::Simple;
                text = detail::pick_positive(ex->record, Level::Simple, pick_rng).text;
                gt = &ex->target_mask;
            } else if (cfg.stage == 2) {
                mode = RoutingMode::Complex;
                text = detail::pick_positive(ex->record, Level::Complex, pick_rng).text;
                gt = &ex->target_mask;
            }
            Tensor probs = model_forward(image_tensor(ex->image), tokenize(text, vocab, mcfg.max_len), mode, pg, mcfg);
            item = seg_loss(probs, mask_tensor(*gt));
            parts.l_seg += static_cast<double>(item.value());
        } else {
            const auto& simple = detail::pick_positive(ex->record, Level::Simple, pick_rng);
            const auto& complex_ins = detail::pick_positive(ex->record, Level::Complex, pick_rng);
            Tensor img = image_tensor(ex->image);
            Tensor gt = mask_tensor(ex->target_mask);
            Tensor p_s = model_forward(img, tokenize(simple.text, vocab, mcfg.max_len), RoutingMode::Simple, pg, mcfg);
            Tensor p_c =
                model_forward(img, tokenize(complex_ins.text, vocab, mcfg.max_len), RoutingMode::Complex, pg, mcfg);
            Tensor seg = scale(add(seg_loss(p_s, gt), seg_loss(p_c, gt)), 0.5f);
            parts.l_seg += static_cast<double>(seg.value());
            item = seg;
            if (cfg.loss_flags.align) {
                Tensor al = kl_align(p_s, p_c, cfg.align_opt);
                parts.l_align += static_cast<double>(al.value());
                item = add(item, al);
            }
            if (cfg.loss_flags.hard) {
                Tensor hd = hard_region_loss(p_s, p_c, cfg.hard_opt);
                parts.l_hard += static_cast<double>(hd.value());
                item = add(item, hd);
            }
        }
        total = total.defined() ? add(total, item) : item;
    }

    backward(scale(total, inv_b));
    opt.step();
    pg.zero_grad();

    parts.l_seg *= inv_b;
    parts.l_align *= inv_b;
    parts.l_hard *= inv_b;
    parts.l_train = parts.l_seg + parts.l_align + parts.l_hard;
    return parts;
}

// Appends "step,stage,l_seg,l_align,l_hard,l_train" rows.
class TrainLog {
public:
    TrainLog() = default;
    explicit TrainLog(const std::string& path) : path_(path) {
        std::ofstream f(path_, std::ios::trunc);
        if (!f) throw std::runtime_error("train log: cannot open " + path_);
        f << "step,stage,l_seg,l_align,l_hard,l_train\n";
    }

    void append(int step, int stage, const LossBreakdown& b) {
        rows_.push_back({step, stage, b});
        if (path_.empty()) return;
        std::ofstream f(path_, std::ios::app);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%.6f,%.6f\n", step, stage, b.l_seg, b.l_align, b.l_hard,
                      b.l_train);
        f << buf;
    }

    struct Row {
        int step;
        int stage;
        LossBreakdown parts;
    };
    const std::vector<Row>& rows() const { return rows_; }

private:
    std::string path_;
    std::vector<Row> rows_;
};

// Runs one stage: sets the freeze schedule (stage 2 first inherits C from S;
// stage 3 inherits only when stage 2 was skipped), then steps the optimizer.
inline void run_stage(const StageConfig& cfg, const std::vector<LoadedExample>& dataset, ParameterGroup& pg,
                      const ModelConfig& mcfg, const Vocab& vocab, TrainLog& log, bool inherit_at_start = false) {
    if (dataset.empty()) throw std::invalid_argument("run_stage: empty dataset");
    if (cfg.stage == 2 || inherit_at_start) inherit_c_from_s(pg);
    pg.set_trainable(trainable_set(cfg.stage, pg, cfg.stage2_train_s));

    Adam opt(pg, cfg.lr);
    BatchSampler sampler(dataset.size(), cfg.seed ^ (0x51a9e00dULL + static_cast<uint64_t>(cfg.stage)));
    Rng pick_rng(cfg.seed ^ (0x9c0ffeeULL * (static_cast<uint64_t>(cfg.stage) + 1)));
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<const LoadedExample*> batch;
        for (size_t idx : sampler.next(cfg.batch_size)) batch.push_back(&dataset[idx]);
        const LossBreakdown parts = train_step(batch, cfg, pg, mcfg, vocab, opt, pick_rng);
        log.append(step, cfg.stage, parts);
    }
}

struct CurriculumOptions {
    bool skip_stage1 = false;
    bool skip_stage2 = false;
    LossFlags loss_flags;
    bool stage2_train_s = false;
};

// Full chain 0 -> 1 -> 2 -> 3 honoring skip flags; stage configs indexed by
// stage number. Returns the per-stage checkpoint snapshots.
inline std::map<int, ParameterGroup> run_curriculum(const std::map<int, StageConfig>& stage_cfgs,
                                                    const std::vector<LoadedExample>& dataset, ParameterGroup& pg,
                                                    const ModelConfig& mcfg, const Vocab& vocab, TrainLog& log,
                                                    const CurriculumOptions& opts = {}) {
    std::map<int, ParameterGroup> snapshots;
    for (int stage = 0; stage <= 3; ++stage) {
        if ((stage == 1 && opts.skip_stage1) || (stage == 2 && opts.skip_stage2)) continue;
        StageConfig cfg = stage_cfgs.at(stage);
        cfg.stage = stage;
        cfg.loss_flags = opts.loss_flags;
        cfg.stage2_train_s = opts.stage2_train_s;
        const bool inherit = stage == 3 && opts.skip_stage2;
        run_stage(cfg, dataset, pg, mcfg, vocab, log, inherit);
        ParameterGroup snap;
        for (const auto& [name, t] : pg.entries) snap.add(name, t.clone());
        snapshots.emplace(stage, std::move(snap));
    }
    return snapshots;
}

}  // namespace pis
