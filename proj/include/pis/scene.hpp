// Procedural scene generator. Objects live on a 4x4 placement grid of 8x8
// pixel cells inside a 32x32 canvas. Every object paints a full block of
// pixels (8x8 for large, one 4x4 sub-block for small) and the shape shows as
// an interior texture: squares fill the block solid, circles carry a bright
// disk, triangles a bright wedge, with the rest of the block dimmed. Masks
// are therefore exact pixel blocks aligned to the model's 4x4 patch lattice.
#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "pis/rng.hpp"

namespace pis {

inline constexpr int kSceneSize = 32;
inline constexpr int kGrid = 4;       // placement grid is kGrid x kGrid cells
inline constexpr int kCell = kSceneSize / kGrid;

enum class Shape { Circle, Square, Triangle };
enum class ColorName { Red, Green, Blue, Yellow };
enum class SizeClass { Small, Large };

inline const std::array<const char*, 3> kShapeNames = {"circle", "square", "triangle"};
inline const std::array<const char*, 4> kColorNames = {"red", "green", "blue", "yellow"};
inline const std::array<const char*, 2> kSizeNames = {"small", "large"};

// Fixed functional role lexicon; roles are unique within a scene, which makes
// role-based instructions unambiguous by construction.
struct RoleEntry {
    const char* name;
    const char* verb_phrase;  // "... used to <vp>"
};
inline const std::array<RoleEntry, 8> kRoleLexicon = {{
    {"container", "hold water for the camp"},
    {"blocker", "block the narrow path"},
    {"marker", "mark the meeting spot"},
    {"anchor", "keep the raft from drifting"},
    {"beacon", "light the way after dark"},
    {"wedge", "prop the heavy door open"},
    {"weight", "press the papers flat"},
    {"patch", "cover the hole in the fence"},
}};

inline int role_index(const std::string& name) {
    for (size_t i = 0; i < kRoleLexicon.size(); ++i)
        if (name == kRoleLexicon[i].name) return static_cast<int>(i);
    return -1;
}

// An object's function follows its visible kind, the way real affordances
// do: the role is a fixed mapping of (shape, color, size), so role-based
// instructions are groundable from pixels on unseen scenes. Flipping the
// size always flips the role (offset 4 of 8), which keeps the roles of a
// duplicated shape+color pair distinct.
inline int role_index_for(Shape shape, ColorName color, SizeClass size) {
    const int base = 4 * static_cast<int>(shape) + static_cast<int>(color);
    return (base + (size == SizeClass::Small ? 4 : 0)) % static_cast<int>(kRoleLexicon.size());
}

// All (shape, color, size) triples whose role is the given index.
inline std::vector<std::array<int, 3>> role_fiber(int role_idx) {
    std::vector<std::array<int, 3>> out;
    for (int s = 0; s < 3; ++s)
        for (int c = 0; c < 4; ++c)
            for (int z = 0; z < 2; ++z)
                if (role_index_for(static_cast<Shape>(s), static_cast<ColorName>(c), static_cast<SizeClass>(z)) ==
                    role_idx)
                    out.push_back({s, c, z});
    return out;
}

struct SceneObject {
    int id = 0;
    Shape shape = Shape::Square;
    ColorName color = ColorName::Red;
    SizeClass size = SizeClass::Large;
    int row = 0, col = 0;  // cell on the placement grid
    int slot = 0;          // sub-block (0..3) used by small objects
    std::string role;      // entry from kRoleLexicon

    std::string shape_name() const { return kShapeNames[static_cast<size_t>(shape)]; }
    std::string color_name() const { return kColorNames[static_cast<size_t>(color)]; }
    std::string size_name() const { return kSizeNames[static_cast<size_t>(size)]; }
};

struct Scene {
    uint64_t seed = 0;
    std::vector<SceneObject> objects;

    const SceneObject& object(int id) const {
        for (const auto& o : objects)
            if (o.id == id) return o;
        throw std::invalid_argument("scene: no object with id " + std::to_string(id));
    }
};

// "top left" .. "bottom right"; the grid splits evenly into 2x2 quadrants.
inline std::string quadrant_of(int row, int col) {
    std::string q = row < kGrid / 2 ? "top" : "bottom";
    q += col < kGrid / 2 ? " left" : " right";
    return q;
}

inline std::string quadrant_of(const SceneObject& o) { return quadrant_of(o.row, o.col); }

inline const std::array<const char*, 4> kQuadrantNames = {"top left", "top right", "bottom left", "bottom right"};

struct Image {
    int h = 0, w = 0;
    std::vector<float> rgb;  // row-major, 3 channels, values in [0, 1]

    float& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    float at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;  // 0 or 1

    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    int area() const {
        int a = 0;
        for (uint8_t b : v) a += b;
        return a;
    }
};

inline std::array<float, 3> color_rgb(ColorName c) {
    switch (c) {
        case ColorName::Red: return {1.0f, 0.0f, 0.0f};
        case ColorName::Green: return {0.0f, 1.0f, 0.0f};
        case ColorName::Blue: return {0.0f, 0.0f, 1.0f};
        case ColorName::Yellow: return {1.0f, 1.0f, 0.0f};
    }
    throw std::invalid_argument("unknown color");
}

namespace detail {

// Block origin and edge length in pixels.
inline void object_block(const SceneObject& o, int& y0, int& x0, int& edge) {
    y0 = o.row * kCell;
    x0 = o.col * kCell;
    if (o.size == SizeClass::Large) {
        edge = kCell;
    } else {
        edge = kCell / 2;
        y0 += (o.slot / 2) * edge;
        x0 += (o.slot % 2) * edge;
    }
}

// Shape texture: 1 = full color, 0 = dimmed fill. All block pixels belong to
// the object either way.
inline bool bright_pixel(Shape shape, int dy, int dx, int edge) {
    const double cy = edge / 2.0, cx = edge / 2.0;
    const double py = dy + 0.5, px = dx + 0.5;
    switch (shape) {
        case Shape::Square: return true;
        case Shape::Circle: {
            const double r = edge / 2.0;
            return (py - cy) * (py - cy) + (px - cx) * (px - cx) <= r * r;
        }
        case Shape::Triangle:
            return std::abs(px - cx) <= py / 2.0;
    }
    return true;
}

}  // namespace detail

inline Mask object_mask(const SceneObject& o) {
    Mask m;
    m.h = m.w = kSceneSize;
    m.v.assign(static_cast<size_t>(kSceneSize) * kSceneSize, 0);
    int y0, x0, edge;
    detail::object_block(o, y0, x0, edge);
    for (int dy = 0; dy < edge; ++dy)
        for (int dx = 0; dx < edge; ++dx) m.v[static_cast<size_t>(y0 + dy) * kSceneSize + (x0 + dx)] = 1;
    return m;
}

inline std::vector<Mask> scene_masks(const Scene& scene) {
    std::vector<Mask> out;
    out.reserve(scene.objects.size());
    for (const auto& o : scene.objects) out.push_back(object_mask(o));
    return out;
}

inline Image render(const Scene& scene) {
    Image img;
    img.h = img.w = kSceneSize;
    img.rgb.assign(static_cast<size_t>(kSceneSize) * kSceneSize * 3, 0.08f);
    for (const auto& o : scene.objects) {
        int y0, x0, edge;
        detail::object_block(o, y0, x0, edge);
        const auto rgb = color_rgb(o.color);
        for (int dy = 0; dy < edge; ++dy)
            for (int dx = 0; dx < edge; ++dx) {
                const float f = detail::bright_pixel(o.shape, dy, dx, edge) ? 1.0f : 0.35f;
                for (int c = 0; c < 3; ++c) img.at(y0 + dy, x0 + dx, c) = rgb[static_cast<size_t>(c)] * f;
            }
    }
    return img;
}

struct SceneConfig {
    int num_objects = 4;                     // in [2, 8]
    bool ensure_duplicate_concepts = false;  // force two objects to share shape+color
};

// Seed-deterministic scene. Roles are drawn pairwise distinct and the
// attributes of each object are sampled from its role's fiber, so the role
// stays a pure function of what is visible. When ensure_duplicate_concepts
// is set the first two objects share shape and color (differing in size, so
// their roles differ) and sit in different quadrants: an NP-only prompt is
// ambiguous there while size or quadrant wording is not.
inline Scene generate_scene(uint64_t seed, const SceneConfig& cfg = {}) {
    if (cfg.num_objects < 2 || cfg.num_objects > 8)
        throw std::invalid_argument("generate_scene: num_objects must be in [2, 8], got " +
                                    std::to_string(cfg.num_objects));
    Rng rng(seed);
    Scene scene;
    scene.seed = seed;

    std::vector<int> cells(static_cast<size_t>(kGrid) * kGrid);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells);

    std::vector<int> role_ids;
    if (cfg.ensure_duplicate_concepts) {
        const int r0 = rng.next_int(0, static_cast<int>(kRoleLexicon.size()) - 1);
        role_ids.push_back(r0);
        role_ids.push_back((r0 + 4) % static_cast<int>(kRoleLexicon.size()));  // the size-flipped twin
        std::vector<int> rest;
        for (int r = 0; r < static_cast<int>(kRoleLexicon.size()); ++r)
            if (r != role_ids[0] && r != role_ids[1]) rest.push_back(r);
        rng.shuffle(rest);
        for (int i = 2; i < cfg.num_objects; ++i) role_ids.push_back(rest[static_cast<size_t>(i - 2)]);
    } else {
        std::vector<int> all(kRoleLexicon.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        rng.shuffle(all);
        role_ids.assign(all.begin(), all.begin() + cfg.num_objects);
    }

    for (int i = 0; i < cfg.num_objects; ++i) {
        SceneObject o;
        o.id = i;
        const auto fiber = role_fiber(role_ids[static_cast<size_t>(i)]);
        const auto attrs = fiber[rng.next_below(fiber.size())];
        o.shape = static_cast<Shape>(attrs[0]);
        o.color = static_cast<ColorName>(attrs[1]);
        o.size = static_cast<SizeClass>(attrs[2]);
        o.row = cells[static_cast<size_t>(i)] / kGrid;
        o.col = cells[static_cast<size_t>(i)] % kGrid;
        o.slot = rng.next_int(0, 3);
        o.role = kRoleLexicon[static_cast<size_t>(role_ids[static_cast<size_t>(i)])].name;
        scene.objects.push_back(o);
    }

    if (cfg.ensure_duplicate_concepts) {
        // Same shape and color as object 0, opposite size: same concept NP,
        // different role by construction.
        scene.objects[1].shape = scene.objects[0].shape;
        scene.objects[1].color = scene.objects[0].color;
        scene.objects[1].size =
            scene.objects[0].size == SizeClass::Small ? SizeClass::Large : SizeClass::Small;
        if (quadrant_of(scene.objects[0]) == quadrant_of(scene.objects[1])) {
            // Move the duplicate to a free cell in another quadrant.
            for (size_t c = static_cast<size_t>(cfg.num_objects); c < cells.size(); ++c) {
                const int row = cells[c] / kGrid, col = cells[c] % kGrid;
                if (quadrant_of(row, col) != quadrant_of(scene.objects[0])) {
                    scene.objects[1].row = row;
                    scene.objects[1].col = col;
                    break;
                }
            }
        }
    }

    for (auto& o : scene.objects) {
        if (o.role != kRoleLexicon[static_cast<size_t>(role_index_for(o.shape, o.color, o.size))].name)
            throw std::logic_error("generate_scene: role/attribute mapping out of sync");
    }
    return scene;
}

}  // namespace pis
