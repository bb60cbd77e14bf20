// File formats and dataset assembly: PPM P6 images, PGM P5 masks, JSONL
// dataset records, and in-memory examples for training and evaluation.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pis/instructions.hpp"
#include "pis/scene.hpp"
#include "pis/tensor.hpp"

namespace pis {

using nlohmann::json;

// ---- PPM / PGM ----

inline uint8_t to_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> bytes;
    bytes.reserve(img.rgb.size());
    for (float v : img.rgb) bytes.push_back(to_byte(v));
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write_ppm: write failed " + path);
}

inline void write_pgm(const Mask& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    f << "P5\n" << m.w << " " << m.h << "\n255\n";
    std::vector<uint8_t> bytes;
    bytes.reserve(m.v.size());
    for (uint8_t v : m.v) bytes.push_back(v ? 255 : 0);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write_pgm: write failed " + path);
}

namespace detail {

inline void read_pnm_header(std::ifstream& f, const std::string& path, const char* magic, int& w, int& h) {
    std::string m;
    f >> m;
    if (m != magic) throw std::runtime_error("read " + path + ": expected " + magic + " header, got " + m);
    int maxval;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("read " + path + ": bad header");
    f.get();  // single whitespace before payload
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    Image img;
    detail::read_pnm_header(f, path, "P6", img.w, img.h);
    std::vector<uint8_t> bytes(static_cast<size_t>(img.w) * img.h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("read_ppm: truncated " + path);
    img.rgb.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

inline Mask read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
    Mask m;
    detail::read_pnm_header(f, path, "P5", m.w, m.h);
    std::vector<uint8_t> bytes(static_cast<size_t>(m.w) * m.h);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("read_pgm: truncated " + path);
    m.v.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) m.v[i] = bytes[i] >= 128 ? 1 : 0;
    return m;
}

// Figure-style overlay: mask pixels blend half image, half overlay color.
inline Image render_overlay(const Image& img, const Mask& mask,
                            std::array<float, 3> color = {1.0f, 0.0f, 0.0f}) {
    if (img.h != mask.h || img.w != mask.w)
        throw std::invalid_argument("render_overlay: image " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                                    " vs mask " + std::to_string(mask.w) + "x" + std::to_string(mask.h));
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            if (mask.at(y, x))
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.5f * img.at(y, x, c) + 0.5f * color[static_cast<size_t>(c)];
    return out;
}

// Crop to the mask's bounding box (used for annotation visual prompts).
inline Image crop_to_mask(const Image& img, const Mask& mask) {
    int y0 = mask.h, y1 = -1, x0 = mask.w, x1 = -1;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) return img;  // empty mask: no crop
    Image out;
    out.h = y1 - y0 + 1;
    out.w = x1 - x0 + 1;
    out.rgb.resize(static_cast<size_t>(out.h) * out.w * 3);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

// ---- JSON (de)serialization ----

inline json to_json(const Predicate& p) {
    json j{{"kind", pred_kind_name(p.kind)}, {"value", p.value}};
    if (p.ref_id >= 0) j["ref"] = p.ref_id;
    return j;
}

inline Predicate predicate_from_json(const json& j) {
    Predicate p;
    p.kind = pred_kind_from(j.at("kind").get<std::string>());
    p.value = j.at("value").get<std::string>();
    p.ref_id = j.value("ref", -1);
    return p;
}

inline json to_json(const Instruction& ins) {
    json sem = json::array();
    for (const auto& p : ins.semantics) sem.push_back(to_json(p));
    return json{{"text", ins.text},
                {"level", routing_mode_name(ins.level)},
                {"form", form_name(ins.form)},
                {"polarity", polarity_name(ins.polarity)},
                {"semantics", sem}};
}

inline Instruction instruction_from_json(const json& j, int target_id) {
    Instruction ins;
    ins.text = j.at("text").get<std::string>();
    ins.level = routing_mode_from(j.at("level").get<std::string>());
    const std::string form = j.at("form").get<std::string>();
    ins.form = form == "question" ? Form::Question : Form::Declarative;
    const std::string pol = j.at("polarity").get<std::string>();
    ins.polarity = pol == "negative" ? Polarity::Negative : Polarity::Positive;
    ins.target_id = target_id;
    for (const auto& pj : j.value("semantics", json::array())) ins.semantics.push_back(predicate_from_json(pj));
    return ins;
}

inline json to_json(const Scene& s) {
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back(json{{"id", o.id},
                            {"shape", o.shape_name()},
                            {"color", o.color_name()},
                            {"size", o.size_name()},
                            {"row", o.row},
                            {"col", o.col},
                            {"slot", o.slot},
                            {"role", o.role}});
    return json{{"seed", s.seed}, {"objects", objs}};
}

inline Scene scene_from_json(const json& j) {
    Scene s;
    s.seed = j.at("seed").get<uint64_t>();
    for (const auto& oj : j.at("objects")) {
        SceneObject o;
        o.id = oj.at("id").get<int>();
        const std::string sh = oj.at("shape").get<std::string>();
        for (size_t i = 0; i < kShapeNames.size(); ++i)
            if (sh == kShapeNames[i]) o.shape = static_cast<Shape>(i);
        const std::string co = oj.at("color").get<std::string>();
        for (size_t i = 0; i < kColorNames.size(); ++i)
            if (co == kColorNames[i]) o.color = static_cast<ColorName>(i);
        o.size = oj.at("size").get<std::string>() == "small" ? SizeClass::Small : SizeClass::Large;
        o.row = oj.at("row").get<int>();
        o.col = oj.at("col").get<int>();
        o.slot = oj.at("slot").get<int>();
        o.role = oj.at("role").get<std::string>();
        s.objects.push_back(o);
    }
    return s;
}

inline json to_json(const DatasetRecord& r) {
    json pos = json::array(), neg = json::array();
    for (const auto& i : r.positives) pos.push_back(to_json(i));
    for (const auto& i : r.negatives) neg.push_back(to_json(i));
    return json{{"image_path", r.image_path},
                {"mask_path", r.mask_path},
                {"concept_mask_path", r.concept_mask_path},
                {"class_label", r.class_label},
                {"concept_np", r.concept_np},
                {"positives", pos},
                {"negatives", neg},
                {"scene", to_json(r.scene)},
                {"target_id", r.target_id}};
}

inline DatasetRecord record_from_json(const json& j) {
    DatasetRecord r;
    r.image_path = j.value("image_path", "");
    r.mask_path = j.value("mask_path", "");
    r.concept_mask_path = j.value("concept_mask_path", "");
    r.class_label = j.at("class_label").get<std::string>();
    r.concept_np = j.at("concept_np").get<std::string>();
    r.target_id = j.value("target_id", -1);
    if (j.contains("scene")) r.scene = scene_from_json(j.at("scene"));
    for (const auto& ij : j.at("positives")) r.positives.push_back(instruction_from_json(ij, r.target_id));
    for (const auto& ij : j.at("negatives")) r.negatives.push_back(instruction_from_json(ij, r.target_id));
    return r;
}

inline void save_jsonl(const std::vector<DatasetRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_jsonl: cannot open " + path);
    for (const auto& r : records) f << to_json(r).dump() << "\n";
    if (!f) throw std::runtime_error("save_jsonl: write failed " + path);
}

inline std::vector<DatasetRecord> load_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_jsonl: cannot open " + path);
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(json::parse(line)));
    }
    return out;
}

// ---- record generation and in-memory examples ----

// Union of the masks of every instance matching the record's concept NP.
inline Mask concept_union_mask(const DatasetRecord& rec) {
    const SceneObject& t = rec.scene.object(rec.target_id);
    Mask m;
    m.h = m.w = kSceneSize;
    m.v.assign(static_cast<size_t>(kSceneSize) * kSceneSize, 0);
    for (const auto& o : rec.scene.objects) {
        if (o.shape != t.shape || o.color != t.color) continue;
        const Mask om = object_mask(o);
        for (size_t i = 0; i < m.v.size(); ++i) m.v[i] |= om.v[i];
    }
    return m;
}

// Scene + target + instruction set, resampling on ambiguous targets.
inline DatasetRecord generate_record(uint64_t seed, const SceneConfig& scfg, int max_attempts = 100) {
    Rng rng(seed);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const Scene scene = generate_scene(rng.next_u64(), scfg);
        std::vector<int> order;
        for (const auto& o : scene.objects) order.push_back(o.id);
        rng.shuffle(order);
        for (int id : order) {
            try {
                return instructions_for(scene, id, rng.next_u64());
            } catch (const AmbiguityError&) {
                continue;
            }
        }
    }
    throw std::runtime_error("generate_record: no unambiguous target after " + std::to_string(max_attempts) +
                             " attempts");
}

// A record plus its rendered pixels, ready for training or evaluation.
struct LoadedExample {
    DatasetRecord record;
    Image image;
    Mask target_mask;
    Mask concept_mask;
};

inline LoadedExample materialize(const DatasetRecord& rec) {
    LoadedExample ex;
    ex.record = rec;
    ex.image = render(rec.scene);
    ex.target_mask = object_mask(rec.scene.object(rec.target_id));
    ex.concept_mask = concept_union_mask(rec);
    return ex;
}

inline std::vector<LoadedExample> make_examples(uint64_t seed, int count, const SceneConfig& scfg) {
    Rng rng(seed);
    std::vector<LoadedExample> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(materialize(generate_record(rng.next_u64(), scfg)));
    return out;
}

// Loads a datagen output directory (dataset.jsonl plus image/mask files,
// paths relative to the directory).
inline std::vector<LoadedExample> load_examples(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto records = load_jsonl((fs::path(dir) / "dataset.jsonl").string());
    std::vector<LoadedExample> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        LoadedExample ex;
        ex.record = rec;
        ex.image = read_ppm((fs::path(dir) / rec.image_path).string());
        ex.target_mask = read_pgm((fs::path(dir) / rec.mask_path).string());
        ex.concept_mask = read_pgm((fs::path(dir) / rec.concept_mask_path).string());
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- tensor bridges ----

template <class T = float>
TensorT<T> image_tensor(const Image& img) {
    std::vector<T> data(img.rgb.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(img.rgb[i]);
    return TensorT<T>::from({img.h, img.w, 3}, std::move(data));
}

template <class T = float>
TensorT<T> mask_tensor(const Mask& m) {
    std::vector<T> data(m.v.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(m.v[i]);
    return TensorT<T>::from({m.h, m.w}, std::move(data));
}

}  // namespace pis
