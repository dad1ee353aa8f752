#pragma once

// JSON encodings of cleaning reports, match records, ground-truth manifests and
// EM trace lines.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docclean/cleaning.hpp"
#include "docclean/common.hpp"
#include "docclean/learning.hpp"
#include "docclean/synthgen.hpp"

namespace docclean {

using nlohmann::json;

inline json box_json(const PixelBox& b) { return json::array({b.row, b.col, b.height, b.width}); }

inline PixelBox box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw FormatError("box must be [row, col, height, width]");
    return {j[0].get<std::ptrdiff_t>(), j[1].get<std::ptrdiff_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

inline json to_json(const CleaningReport& r) {
    json accepted = json::array();
    for (const auto& a : r.accepted)
        accepted.push_back({{"class", a.class_index},
                            {"patch", a.patch_id},
                            {"position", {a.position.row, a.position.col}},
                            {"box", box_json(a.box)},
                            {"quality", a.quality},
                            {"pass", a.pass},
                            {"center", {a.center_row, a.center_col}}});
    return {{"passes", r.passes},
            {"accepted_per_pass", r.accepted_per_pass},
            {"character_classes", r.character_classes},
            {"missing_exemplars", r.missing_exemplars},
            {"per_class", r.per_class},
            {"accepted", accepted}};
}

inline CleaningReport report_from_json(const json& j) {
    try {
        CleaningReport r;
        r.passes = j.at("passes").get<std::size_t>();
        r.accepted_per_pass = j.at("accepted_per_pass").get<std::vector<std::size_t>>();
        r.character_classes = j.at("character_classes").get<std::vector<std::size_t>>();
        r.missing_exemplars = j.at("missing_exemplars").get<std::vector<std::size_t>>();
        r.per_class = j.at("per_class").get<std::vector<std::size_t>>();
        for (const auto& a : j.at("accepted")) {
            AcceptedMatch m;
            m.class_index = a.at("class").get<std::size_t>();
            m.patch_id = a.at("patch").get<std::size_t>();
            m.position = {a.at("position")[0].get<std::size_t>(), a.at("position")[1].get<std::size_t>()};
            m.box = box_from_json(a.at("box"));
            m.quality = a.at("quality").get<double>();
            m.pass = a.at("pass").get<std::size_t>();
            m.center_row = a.at("center")[0].get<double>();
            m.center_col = a.at("center")[1].get<double>();
            r.accepted.push_back(m);
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed cleaning report: ") + e.what());
    }
}

inline json to_json(const PatchMatch& m) {
    return {{"patch", m.patch_id},
            {"origin", {m.origin_row, m.origin_col}},
            {"class", m.match.class_index},
            {"position", {m.match.position.row, m.match.position.col}},
            {"quality", m.match.quality},
            {"fully_visible", m.match.fully_visible}};
}

inline PatchMatch match_from_json(const json& j) {
    try {
        PatchMatch m;
        m.patch_id = j.at("patch").get<std::size_t>();
        m.origin_row = j.at("origin")[0].get<std::size_t>();
        m.origin_col = j.at("origin")[1].get<std::size_t>();
        m.match.class_index = j.at("class").get<std::size_t>();
        m.match.position = {j.at("position")[0].get<std::size_t>(), j.at("position")[1].get<std::size_t>()};
        m.match.quality = j.at("quality").get<double>();
        m.match.fully_visible = j.at("fully_visible").get<bool>();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed match record: ") + e.what());
    }
}

inline json to_json(const GroundTruth& t, std::size_t width, std::size_t height) {
    json inst = json::array();
    for (const auto& g : t.instances)
        inst.push_back({{"glyph", g.glyph_id},
                        {"name", t.glyph_names.at(g.glyph_id)},
                        {"box", box_json(g.box)},
                        {"center", {g.center_row, g.center_col}}});
    json dirt = json::array();
    for (const auto& d : t.dirt) dirt.push_back({{"kind", d.kind}, {"box", box_json(d.box)}});
    return {{"page", {{"width", width}, {"height", height}}},
            {"glyphs", t.glyph_names},
            {"instances", inst},
            {"dirt", dirt},
            {"ink_pixels", t.ink_pixels},
            {"dirt_pixels", t.dirt_pixels},
            {"dirt_to_ink", t.dirt_to_ink_ratio()}};
}

inline GroundTruth truth_from_json(const json& j) {
    try {
        GroundTruth t;
        t.glyph_names = j.at("glyphs").get<std::vector<std::string>>();
        for (const auto& g : j.at("instances"))
            t.instances.push_back({g.at("glyph").get<std::size_t>(), box_from_json(g.at("box")),
                                   g.at("center")[0].get<double>(), g.at("center")[1].get<double>()});
        for (const auto& d : j.at("dirt")) t.dirt.push_back({d.at("kind").get<std::string>(), box_from_json(d.at("box"))});
        t.ink_pixels = j.at("ink_pixels").get<std::size_t>();
        t.dirt_pixels = j.at("dirt_pixels").get<std::size_t>();
        return t;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed truth manifest: ") + e.what());
    }
}

inline json to_json(const IterationRecord& r) {
    json j = {{"restart", r.restart},
              {"iteration", r.iteration},
              {"free_energy", r.free_energy},
              {"joint_states", r.counters.joint_states},
              {"selection_states", r.counters.selection_states},
              {"cell_terms", r.counters.cell_terms},
              {"reinitialized", r.reinitialized}};
    if (!r.pi.empty()) j["pi"] = r.pi;
    if (!r.mean_mask.empty()) j["mean_mask"] = r.mean_mask;
    return j;
}

inline json to_json(const CleaningScore& s) {
    return {{"recall", s.recall},
            {"precision", s.precision},
            {"true_positives", s.true_positives},
            {"false_positives", s.false_positives},
            {"false_negatives", s.false_negatives}};
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_json(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << "\n";
}

/// Detections for scoring: accepted matches at their glyph centres.
inline std::vector<Detection> detections_from(const CleaningReport& r) {
    std::vector<Detection> out;
    for (const auto& a : r.accepted) out.push_back({a.class_index, a.center_row, a.center_col});
    return out;
}

}  // namespace docclean
