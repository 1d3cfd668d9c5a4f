#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hft/io.hpp"

namespace hft::io {

using nlohmann::json;

std::vector<NoteEvent> notes_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("note JSON: ") + e.what());
    }
    if (!j.is_array()) throw std::runtime_error("note JSON: expected a top-level array");
    std::vector<NoteEvent> notes;
    notes.reserve(j.size());
    for (const auto& item : j) {
        if (!item.is_object()) throw std::runtime_error("note JSON: expected note objects");
        NoteEvent n;  // unknown fields are ignored
        n.pitch = item.at("pitch").get<int>();
        n.onset_s = item.at("onset").get<double>();
        n.offset_s = item.at("offset").get<double>();
        n.velocity = item.at("velocity").get<int>();
        validate(n);
        notes.push_back(n);
    }
    return notes;
}

std::string notes_to_json(std::span<const NoteEvent> notes) {
    std::vector<NoteEvent> sorted(notes.begin(), notes.end());
    std::sort(sorted.begin(), sorted.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.pitch < b.pitch);
    });
    json j = json::array();
    for (const auto& n : sorted) {
        j.push_back({{"pitch", n.pitch},
                     {"onset", n.onset_s},
                     {"offset", n.offset_s},
                     {"velocity", n.velocity}});
    }
    return j.dump(2) + "\n";
}

std::vector<NoteEvent> read_notes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.size() >= 4 && text.compare(0, 4, "MThd") == 0) return read_midi(path);
    return notes_from_json(text);
}

void write_notes(std::span<const NoteEvent> notes, const std::string& path,
                 NoteFileFormat format) {
    if (format == NoteFileFormat::midi) {
        write_midi(notes, path);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << notes_to_json(notes);
}

}  // namespace hft::io
