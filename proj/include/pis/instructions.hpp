// Instruction taxonomy over generated scenes: concept NPs, simple referring
// instructions (explicit shape noun + attribute/spatial conditions), complex
// instructions (role or relational phrasing, no target shape noun), and
// contrastive negatives built by contradicting exactly one predicate.
#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pis/config.hpp"
#include "pis/rng.hpp"
#include "pis/scene.hpp"

namespace pis {

using Level = RoutingMode;  // instruction level doubles as the routing mode

enum class Form { Declarative, Question };
enum class Polarity { Positive, Negative };

inline const char* form_name(Form f) { return f == Form::Declarative ? "declarative" : "question"; }
inline const char* polarity_name(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

enum class PredKind { Color, Shape, Size, Quadrant, Role, Adjacent };

inline const char* pred_kind_name(PredKind k) {
    switch (k) {
        case PredKind::Color: return "color";
        case PredKind::Shape: return "shape";
        case PredKind::Size: return "size";
        case PredKind::Quadrant: return "quadrant";
        case PredKind::Role: return "role";
        case PredKind::Adjacent: return "adjacent";
    }
    throw std::invalid_argument("unknown predicate kind");
}

inline PredKind pred_kind_from(const std::string& s) {
    for (PredKind k : {PredKind::Color, PredKind::Shape, PredKind::Size, PredKind::Quadrant, PredKind::Role,
                       PredKind::Adjacent})
        if (s == pred_kind_name(k)) return k;
    throw std::invalid_argument("unknown predicate kind: " + s);
}

// One atomic condition; Adjacent carries the reference object id and a
// direction value ("left of", "right of", "above", "below").
struct Predicate {
    PredKind kind;
    std::string value;
    int ref_id = -1;

    bool operator==(const Predicate& o) const { return kind == o.kind && value == o.value && ref_id == o.ref_id; }
};

inline bool satisfies(const Scene& scene, const SceneObject& obj, const Predicate& p) {
    switch (p.kind) {
        case PredKind::Color: return obj.color_name() == p.value;
        case PredKind::Shape: return obj.shape_name() == p.value;
        case PredKind::Size: return obj.size_name() == p.value;
        case PredKind::Quadrant: return quadrant_of(obj) == p.value;
        case PredKind::Role: return obj.role == p.value;
        case PredKind::Adjacent: {
            const SceneObject& ref = scene.object(p.ref_id);
            if (p.value == "left of") return obj.row == ref.row && obj.col + 1 == ref.col;
            if (p.value == "right of") return obj.row == ref.row && obj.col == ref.col + 1;
            if (p.value == "above") return obj.col == ref.col && obj.row + 1 == ref.row;
            if (p.value == "below") return obj.col == ref.col && obj.row == ref.row + 1;
            throw std::invalid_argument("unknown adjacency direction: " + p.value);
        }
    }
    throw std::invalid_argument("unknown predicate kind");
}

inline std::vector<int> match_set(const Scene& scene, const std::vector<Predicate>& preds) {
    std::vector<int> out;
    for (const auto& o : scene.objects) {
        bool all = true;
        for (const auto& p : preds)
            if (!satisfies(scene, o, p)) {
                all = false;
                break;
            }
        if (all) out.push_back(o.id);
    }
    return out;
}

// True when the predicates pick out exactly the target instance.
inline bool uniquely_identifies(const Scene& scene, const std::vector<Predicate>& preds, int target_id) {
    const auto m = match_set(scene, preds);
    return m.size() == 1 && m[0] == target_id;
}

struct Instruction {
    std::string text;
    Level level = Level::Simple;
    Form form = Form::Declarative;
    Polarity polarity = Polarity::Positive;
    int target_id = -1;
    std::vector<Predicate> semantics;
};

// One target instance with its full instruction set: 4 positives
// (simple/complex x declarative/question), 4 negatives, 1 concept NP.
struct DatasetRecord {
    std::string image_path;
    std::string mask_path;          // target instance mask (PGM P5)
    std::string concept_mask_path;  // union of all instances matching the concept NP
    std::string class_label;
    std::string concept_np;
    std::vector<Instruction> positives;
    std::vector<Instruction> negatives;
    Scene scene;  // scene graph; the oracle side of annotation and inspection
    int target_id = -1;
};

// Raised when a target admits no uniquely-identifying instruction; callers
// resample the scene.
struct AmbiguityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string pred_value(const std::vector<Predicate>& preds, PredKind kind) {
    for (const auto& p : preds)
        if (p.kind == kind) return p.value;
    return {};
}

inline const Predicate* find_pred(const std::vector<Predicate>& preds, PredKind kind) {
    for (const auto& p : preds)
        if (p.kind == kind) return &p;
    return nullptr;
}

// Template selector for rendering; variant meanings depend on level/form.
struct InstrDraft {
    Level level;
    Form form;
    int variant = 0;
    std::vector<Predicate> preds;
};

inline std::string render_text(const InstrDraft& d, const Scene& scene) {
    const std::string color = pred_value(d.preds, PredKind::Color);
    const std::string shape = pred_value(d.preds, PredKind::Shape);
    const std::string size = pred_value(d.preds, PredKind::Size);
    const std::string quad = pred_value(d.preds, PredKind::Quadrant);

    if (d.level == Level::Concept) return color + " " + shape;

    if (d.level == Level::Simple) {
        const bool has_size = !size.empty(), has_quad = !quad.empty();
        if (d.form == Form::Declarative) {
            if (has_size && !has_quad) return "select the " + size + " " + color + " " + shape + " on the board";
            if (!has_size && has_quad)
                return "segment the " + color + " " + shape + " in the " + quad + " part of the board";
            return "select the " + size + " " + color + " " + shape + " in the " + quad + " part of the board";
        }
        if (has_size && !has_quad) return "which " + shape + " is the " + size + " " + color + " one on the board?";
        if (!has_size && has_quad)
            return "can you find the " + color + " " + shape + " in the " + quad + " part of the scene?";
        return "can you find the " + size + " " + color + " " + shape + " in the " + quad + " part of the scene?";
    }

    // Complex: role phrasing, or relational phrasing for variant 2 questions.
    if (const Predicate* adj = find_pred(d.preds, PredKind::Adjacent)) {
        const SceneObject& ref = scene.object(adj->ref_id);
        return "which object sits directly " + adj->value + " the " + ref.color_name() + " " + ref.shape_name() +
               "?";
    }
    const std::string role = pred_value(d.preds, PredKind::Role);
    const int ri = role_index(role);
    if (ri < 0) throw std::invalid_argument("render_text: unknown role " + role);
    const std::string vp = kRoleLexicon[static_cast<size_t>(ri)].verb_phrase;
    if (d.form == Form::Question) return "which item in this scene could be used to " + vp + "?";
    if (d.variant == 1) return "find the one thing here that can " + vp;
    return "segment the item that is used to " + vp;
}

// Contradict exactly one predicate; the flipped value is drawn away from the
// target's true value so the target always violates the result.
inline InstrDraft flip_one(const InstrDraft& d, const Scene& scene, Rng& rng) {
    InstrDraft out = d;
    std::vector<size_t> flippable;
    for (size_t i = 0; i < out.preds.size(); ++i) flippable.push_back(i);
    const size_t pick = flippable[rng.next_below(flippable.size())];
    Predicate& p = out.preds[pick];
    auto pick_other = [&rng](const std::string& current, const auto& names) {
        std::vector<std::string> alts;
        for (const auto* n : names)
            if (current != n) alts.emplace_back(n);
        return alts[rng.next_below(alts.size())];
    };
    switch (p.kind) {
        case PredKind::Color: p.value = pick_other(p.value, kColorNames); break;
        case PredKind::Shape: p.value = pick_other(p.value, kShapeNames); break;
        case PredKind::Size: p.value = p.value == "small" ? "large" : "small"; break;
        case PredKind::Quadrant: p.value = pick_other(p.value, kQuadrantNames); break;
        case PredKind::Role: {
            std::vector<std::string> alts;
            for (const auto& r : kRoleLexicon)
                if (p.value != r.name) alts.emplace_back(r.name);
            p.value = alts[rng.next_below(alts.size())];
            break;
        }
        case PredKind::Adjacent: {
            if (p.value == "left of") p.value = "right of";
            else if (p.value == "right of") p.value = "left of";
            else if (p.value == "above") p.value = "below";
            else p.value = "above";
            break;
        }
    }
    (void)scene;
    return out;
}

inline Instruction finish(const InstrDraft& d, const Scene& scene, Polarity pol, int target_id) {
    Instruction ins;
    ins.text = render_text(d, scene);
    ins.level = d.level;
    ins.form = d.form;
    ins.polarity = pol;
    ins.target_id = target_id;
    ins.semantics = d.preds;
    return ins;
}

}  // namespace detail

// Valid relational descriptions of the target: the target sits directly
// <dir> of a reference object that has a different shape noun and is itself
// uniquely identified by color+shape.
inline std::vector<Predicate> relational_options(const Scene& scene, int target_id) {
    const SceneObject& t = scene.object(target_id);
    std::vector<Predicate> out;
    for (const auto& ref : scene.objects) {
        if (ref.id == target_id || ref.shape == t.shape) continue;
        const std::vector<Predicate> ref_np = {{PredKind::Color, ref.color_name()},
                                               {PredKind::Shape, ref.shape_name()}};
        if (!uniquely_identifies(scene, ref_np, ref.id)) continue;
        for (const char* dir : {"left of", "right of", "above", "below"}) {
            Predicate p{PredKind::Adjacent, dir, ref.id};
            if (satisfies(scene, t, p)) out.push_back(p);
        }
    }
    return out;
}

// Builds the full 4+4+1 instruction set for one target. Throws
// AmbiguityError when no simple predicate combination uniquely identifies
// the target (callers regenerate the scene).
inline DatasetRecord instructions_for(const Scene& scene, int target_id, uint64_t seed) {
    const SceneObject& target = scene.object(target_id);
    Rng rng(seed);

    const Predicate color{PredKind::Color, target.color_name()};
    const Predicate shape{PredKind::Shape, target.shape_name()};
    const Predicate size{PredKind::Size, target.size_name()};
    const Predicate quad{PredKind::Quadrant, quadrant_of(target)};

    // Simple candidates: NP plus at least one extra referring condition.
    std::vector<std::vector<Predicate>> simple_sets;
    for (const auto& preds : std::vector<std::vector<Predicate>>{
             {size, color, shape}, {color, shape, quad}, {size, color, shape, quad}})
        if (uniquely_identifies(scene, preds, target_id)) simple_sets.push_back(preds);
    if (simple_sets.empty())
        throw AmbiguityError("target " + std::to_string(target_id) + " has no unique simple description (seed " +
                             std::to_string(scene.seed) + ")");

    detail::InstrDraft simple_decl{Level::Simple, Form::Declarative, 0,
                                   simple_sets[rng.next_below(simple_sets.size())]};
    detail::InstrDraft simple_quest{Level::Simple, Form::Question, 0,
                                    simple_sets[rng.next_below(simple_sets.size())]};

    const Predicate role{PredKind::Role, target.role};
    if (!uniquely_identifies(scene, {role}, target_id))
        throw AmbiguityError("role not unique in scene " + std::to_string(scene.seed));
    detail::InstrDraft complex_decl{Level::Complex, Form::Declarative, rng.next_int(0, 1), {role}};

    detail::InstrDraft complex_quest{Level::Complex, Form::Question, 0, {role}};
    const auto rels = relational_options(scene, target_id);
    if (!rels.empty() && rng.next_bool(0.6)) {
        complex_quest.preds = {rels[rng.next_below(rels.size())]};
        complex_quest.variant = 2;
    }

    DatasetRecord rec;
    rec.scene = scene;
    rec.target_id = target_id;
    rec.class_label = target.shape_name();
    rec.concept_np = target.color_name() + " " + target.shape_name();

    for (const auto& d : {simple_decl, simple_quest, complex_decl, complex_quest}) {
        rec.positives.push_back(detail::finish(d, scene, Polarity::Positive, target_id));
        // Negative counterpart: same template, one contradicted predicate.
        detail::InstrDraft neg = detail::flip_one(d, scene, rng);
        for (int attempt = 0; attempt < 8; ++attempt) {
            bool violated = false;
            for (const auto& p : neg.preds)
                if (!satisfies(scene, target, p)) violated = true;
            if (violated) break;
            neg = detail::flip_one(d, scene, rng);
        }
        rec.negatives.push_back(detail::finish(neg, scene, Polarity::Negative, target_id));
    }
    return rec;
}

// Oracle judgment used by inspection: does this instruction correctly and
// uniquely describe the target instance?
inline bool instruction_aligned(const Scene& scene, int target_id, const Instruction& ins) {
    if (ins.semantics.empty()) return false;
    return uniquely_identifies(scene, ins.semantics, target_id);
}

// Rule-based NP collapse mirroring an agent that rewrites instructions into
// bare noun phrases: simple instructions keep the head shape noun and its
// directly attached attribute adjectives, complex instructions (no NP
// present) fall back to "object", concept NPs pass through.
inline std::string np_extract_baseline(const Instruction& ins) {
    if (ins.level == Level::Concept) return ins.text;
    if (ins.level == Level::Complex) return "object";

    std::vector<std::string> words;
    std::string w;
    for (char c : ins.text) {
        if (c == ' ') {
            if (!w.empty()) words.push_back(w);
            w.clear();
        } else if (c != '?') {
            w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!w.empty()) words.push_back(w);

    const std::set<std::string> shapes(kShapeNames.begin(), kShapeNames.end());
    const std::set<std::string> adjectives = {"small", "large", "red", "green", "blue", "yellow"};
    for (size_t i = 0; i < words.size(); ++i) {
        if (!shapes.count(words[i])) continue;
        size_t start = i;
        while (start > 0 && adjectives.count(words[start - 1])) --start;
        std::string out;
        for (size_t j = start; j <= i; ++j) {
            if (!out.empty()) out += " ";
            out += words[j];
        }
        return out;
    }
    return "object";
}

// Every word the template grammar can emit; the vocabulary is built from
// this closed set so generated instructions tokenize without UNK.
inline std::set<std::string> grammar_words() {
    std::set<std::string> w = {
        // template glue
        "select", "the", "on", "board", "segment", "in", "part", "of", "which", "is", "one", "can", "you",
        "find", "scene", "item", "that", "used", "to", "thing", "here", "could", "be", "this", "object",
        "sits", "directly",
        // attributes
        "small", "large", "red", "green", "blue", "yellow", "circle", "square", "triangle",
        // quadrants and relations
        "top", "bottom", "left", "right", "above", "below",
    };
    for (const auto& r : kRoleLexicon) {
        std::string word;
        for (const char* p = r.verb_phrase;; ++p) {
            if (*p == ' ' || *p == '\0') {
                if (!word.empty()) w.insert(word);
                word.clear();
                if (*p == '\0') break;
            } else {
                word.push_back(*p);
            }
        }
    }
    return w;
}

}  // namespace pis
