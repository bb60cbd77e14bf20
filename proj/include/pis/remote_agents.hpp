// HTTP-backed annotator/inspector speaking the wire contract:
//   POST /annotate {image_b64, overlay_b64, crop_b64, class_label, few_shot}
//     -> {concept_np, positives[4], negatives[4]}
//   POST /inspect {image_b64, mask_b64, choices[8]} -> {selected_indices}
// Payload images are PPM/PGM bytes, base64-encoded. Responses are
// schema-validated; any transport or schema failure after the configured
// retries raises AgentError and the engine counts the round as failed.
#pragma once

#include <memory>
#include <sstream>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "pis/agents.hpp"
#include "pis/base64.hpp"
#include "pis/dataset.hpp"

namespace pis {

namespace detail {

inline std::string ppm_bytes(const Image& img) {
    std::ostringstream ss;
    ss << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (float v : img.rgb) ss.put(static_cast<char>(to_byte(v)));
    return ss.str();
}

inline std::string pgm_bytes(const Mask& m) {
    std::ostringstream ss;
    ss << "P5\n" << m.w << " " << m.h << "\n255\n";
    for (uint8_t v : m.v) ss.put(static_cast<char>(v ? 255 : 0));
    return ss.str();
}

inline json post_json(const AgentEndpointSpec& spec, const std::string& path, const json& body) {
    httplib::Client cli(spec.url);
    cli.set_connection_timeout(static_cast<time_t>(spec.timeout_s), 0);
    cli.set_read_timeout(static_cast<time_t>(spec.timeout_s), 0);
    cli.set_write_timeout(static_cast<time_t>(spec.timeout_s), 0);
    std::string last_error;
    for (int attempt = 0; attempt <= spec.retries; ++attempt) {
        auto res = cli.Post(path, body.dump(), "application/json");
        if (res && res->status == 200) {
            try {
                return json::parse(res->body);
            } catch (const std::exception& e) {
                last_error = std::string("bad json: ") + e.what();
                continue;
            }
        }
        last_error = res ? "http status " + std::to_string(res->status) : "transport error";
    }
    throw AgentError("remote agent " + spec.url + path + " failed after " + std::to_string(spec.retries + 1) +
                     " attempts: " + last_error);
}

}  // namespace detail

class RemoteAnnotator : public Annotator {
public:
    explicit RemoteAnnotator(AgentEndpointSpec spec) : spec_(std::move(spec)) {}

    DatasetRecord annotate(const DatasetRecord& base, uint64_t seed) override {
        const Image img = render(base.scene);
        const Mask mask = object_mask(base.scene.object(base.target_id));
        json body{{"image_b64", base64_encode(detail::ppm_bytes(img))},
                  {"overlay_b64", base64_encode(detail::ppm_bytes(render_overlay(img, mask)))},
                  {"crop_b64", base64_encode(detail::ppm_bytes(crop_to_mask(img, mask)))},
                  {"class_label", base.class_label},
                  {"few_shot", json::array()},
                  {"seed", seed}};
        const json reply = detail::post_json(spec_, "/annotate", body);

        if (!reply.contains("concept_np") || !reply.contains("positives") || !reply.contains("negatives"))
            throw AgentError("remote annotate reply missing fields");
        if (!reply["positives"].is_array() || reply["positives"].size() != 4 || !reply["negatives"].is_array() ||
            reply["negatives"].size() != 4)
            throw AgentError("remote annotate reply must carry 4 positives and 4 negatives, got " +
                             std::to_string(reply.value("positives", json::array()).size()) + "+" +
                             std::to_string(reply.value("negatives", json::array()).size()));

        DatasetRecord rec = base;
        rec.positives.clear();
        rec.negatives.clear();
        rec.concept_np = reply.at("concept_np").get<std::string>();
        try {
            for (const auto& ij : reply["positives"]) rec.positives.push_back(instruction_from_json(ij, base.target_id));
            for (const auto& ij : reply["negatives"]) rec.negatives.push_back(instruction_from_json(ij, base.target_id));
        } catch (const std::exception& e) {
            throw AgentError(std::string("remote annotate reply malformed: ") + e.what());
        }
        return rec;
    }

private:
    AgentEndpointSpec spec_;
};

class RemoteInspector : public Inspector {
public:
    explicit RemoteInspector(AgentEndpointSpec spec) : spec_(std::move(spec)) {}

    std::set<int> inspect(const InspectionTask& task, uint64_t seed) override {
        const Image img = render(task.scene);
        const Mask mask = object_mask(task.scene.object(task.target_id));
        json choices = json::array();
        for (const auto& c : task.choices) choices.push_back(c.text);
        json body{{"image_b64", base64_encode(detail::ppm_bytes(img))},
                  {"mask_b64", base64_encode(detail::pgm_bytes(mask))},
                  {"choices", choices},
                  {"seed", seed}};
        const json reply = detail::post_json(spec_, "/inspect", body);
        if (!reply.contains("selected_indices") || !reply["selected_indices"].is_array())
            throw AgentError("remote inspect reply missing selected_indices");
        std::set<int> sel;
        for (const auto& v : reply["selected_indices"]) {
            const int i = v.get<int>();
            if (i < 0 || i >= static_cast<int>(task.choices.size()))
                throw AgentError("remote inspect index out of range: " + std::to_string(i));
            sel.insert(i);
        }
        return sel;
    }

private:
    AgentEndpointSpec spec_;
};

inline std::unique_ptr<Annotator> make_annotator(const AgentEndpointSpec& spec) {
    switch (spec.kind) {
        case AgentEndpointSpec::Kind::Oracle: return std::make_unique<OracleAnnotator>();
        case AgentEndpointSpec::Kind::Noisy: return std::make_unique<NoisyAnnotator>(spec.epsilon);
        case AgentEndpointSpec::Kind::Remote: return std::make_unique<RemoteAnnotator>(spec);
    }
    throw std::invalid_argument("unknown agent kind");
}

inline std::unique_ptr<Inspector> make_inspector(const AgentEndpointSpec& spec) {
    switch (spec.kind) {
        case AgentEndpointSpec::Kind::Oracle: return std::make_unique<OracleInspector>();
        case AgentEndpointSpec::Kind::Noisy: return std::make_unique<NoisyInspector>(spec.epsilon);
        case AgentEndpointSpec::Kind::Remote: return std::make_unique<RemoteInspector>(spec);
    }
    throw std::invalid_argument("unknown agent kind");
}

}  // namespace pis
