#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <stdexcept>

#include "hft/common.hpp"
#include "hft/io.hpp"

namespace hft::io {

namespace {

constexpr uint32_t kDefaultTempo = 500000;  // microseconds per quarter
constexpr int kWriteDivision = 500;         // with 120 bpm: 1 tick = 1 ms

struct Cursor {
    const uint8_t* p;
    const uint8_t* end;
    std::string path;

    uint8_t u8() {
        if (p >= end) throw std::runtime_error(path + ": truncated MIDI data");
        return *p++;
    }
    uint16_t u16be() { return static_cast<uint16_t>((u8() << 8) | u8()); }
    uint32_t u32be() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
        return v;
    }
    uint32_t varint() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const uint8_t b = u8();
            v = (v << 7) | (b & 0x7f);
            if ((b & 0x80) == 0) return v;
        }
        throw std::runtime_error(path + ": bad variable-length quantity");
    }
    void skip(uint32_t n) {
        if (p + n > end) throw std::runtime_error(path + ": truncated MIDI data");
        p += n;
    }
};

struct RawNoteEvent {
    int64_t tick;
    int pitch;
    int velocity;  // 0 = off
    bool on;
};

/// Piecewise-linear tick clock over the tempo map.
class TempoMap {
public:
    explicit TempoMap(std::map<int64_t, uint32_t> changes, int division)
        : division_(division) {
        int64_t prev_tick = 0;
        uint32_t tempo = kDefaultTempo;
        double seconds = 0.0;
        segments_.push_back({0, 0.0, tempo});
        for (const auto& [tick, t] : changes) {
            seconds += ticks_to_s(tick - prev_tick, tempo);
            prev_tick = tick;
            tempo = t;
            segments_.push_back({tick, seconds, tempo});
        }
    }

    double seconds_at(int64_t tick) const {
        const Segment* seg = &segments_.front();
        for (const auto& s : segments_) {
            if (s.tick <= tick) seg = &s;
        }
        return seg->seconds + ticks_to_s(tick - seg->tick, seg->tempo);
    }

private:
    struct Segment {
        int64_t tick;
        double seconds;
        uint32_t tempo;
    };
    double ticks_to_s(int64_t ticks, uint32_t tempo) const {
        return static_cast<double>(ticks) * tempo / (division_ * 1e6);
    }
    std::vector<Segment> segments_;
    int division_;
};

void put_varint(std::string& out, uint32_t v) {
    uint8_t buf[4];
    int n = 0;
    buf[n++] = v & 0x7f;
    while ((v >>= 7) != 0) buf[n++] = (v & 0x7f) | 0x80;
    while (n > 0) out.push_back(static_cast<char>(buf[--n]));
}

void put_u32be(std::string& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16be(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace

std::vector<NoteEvent> read_midi(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 14 || std::memcmp(bytes.data(), "MThd", 4) != 0) {
        throw std::runtime_error(path + ": not a standard MIDI file");
    }
    Cursor c{bytes.data() + 4, bytes.data() + bytes.size(), path};
    const uint32_t header_len = c.u32be();
    if (header_len < 6) throw std::runtime_error(path + ": bad MThd length");
    const uint16_t format = c.u16be();
    const uint16_t n_tracks = c.u16be();
    const uint16_t division = c.u16be();
    c.skip(header_len - 6);
    if (format > 1) {
        throw std::runtime_error(path + ": MIDI format " + std::to_string(format) +
                                 " not supported (only 0 and 1)");
    }
    if (division & 0x8000) {
        throw std::runtime_error(path + ": SMPTE time division not supported");
    }

    std::vector<RawNoteEvent> raw;
    std::map<int64_t, uint32_t> tempo_changes;
    int64_t max_tick = 0;

    for (int track = 0; track < n_tracks; ++track) {
        if (c.p + 8 > c.end) throw std::runtime_error(path + ": truncated track header");
        if (std::memcmp(c.p, "MTrk", 4) != 0) {
            // unknown top-level chunk: skip it
            const std::string id(reinterpret_cast<const char*>(c.p), 4);
            c.skip(4);
            const uint32_t len = c.u32be();
            log_warn(path + ": skipping chunk '" + id + "'");
            c.skip(len);
            --track;
            continue;
        }
        c.skip(4);
        const uint32_t track_len = c.u32be();
        Cursor tc{c.p, c.p + track_len, path};
        c.skip(track_len);

        int64_t tick = 0;
        uint8_t running = 0;
        while (tc.p < tc.end) {
            tick += tc.varint();
            max_tick = std::max(max_tick, tick);
            uint8_t status = tc.u8();
            if (status < 0x80) {  // running status: byte already is data
                --tc.p;
                status = running;
                if (status < 0x80) throw std::runtime_error(path + ": dangling data byte");
            }
            if (status == 0xFF) {
                const uint8_t type = tc.u8();
                const uint32_t len = tc.varint();
                if (type == 0x51 && len == 3) {
                    uint32_t tempo = 0;
                    for (int i = 0; i < 3; ++i) tempo = (tempo << 8) | tc.u8();
                    tempo_changes[tick] = tempo;
                } else {
                    tc.skip(len);
                }
                continue;  // meta events clear no running status per SMF 1.0
            }
            if (status == 0xF0 || status == 0xF7) {
                tc.skip(tc.varint());
                continue;
            }
            running = status;
            const uint8_t kind = status & 0xF0;
            switch (kind) {
                case 0x80:
                case 0x90: {
                    const uint8_t pitch = tc.u8();
                    const uint8_t vel = tc.u8();
                    const bool on = kind == 0x90 && vel > 0;  // velocity 0 acts as note-off
                    raw.push_back({tick, pitch, vel, on});
                    break;
                }
                case 0xA0:
                case 0xB0:
                case 0xE0:
                    tc.skip(2);
                    break;
                case 0xC0:
                case 0xD0:
                    tc.skip(1);
                    break;
                default:
                    throw std::runtime_error(path + ": unexpected status byte " +
                                             std::to_string(status));
            }
        }
    }

    std::stable_sort(raw.begin(), raw.end(),
                     [](const RawNoteEvent& a, const RawNoteEvent& b) { return a.tick < b.tick; });
    const TempoMap clock(std::move(tempo_changes), division);

    std::vector<NoteEvent> notes;
    std::map<int, std::deque<std::pair<int64_t, int>>> open;  // pitch -> (tick, velocity)
    for (const auto& ev : raw) {
        if (ev.on) {
            open[ev.pitch].push_back({ev.tick, ev.velocity});
        } else {
            auto it = open.find(ev.pitch);
            if (it == open.end() || it->second.empty()) continue;  // stray note-off
            const auto [on_tick, velocity] = it->second.front();
            it->second.pop_front();
            if (ev.pitch < kPitchMin || ev.pitch > kPitchMax) {
                log_warn(path + ": skipping note with pitch " + std::to_string(ev.pitch));
                continue;
            }
            if (ev.tick <= on_tick) continue;  // zero length
            NoteEvent n;
            n.pitch = ev.pitch;
            n.onset_s = clock.seconds_at(on_tick);
            n.offset_s = clock.seconds_at(ev.tick);
            n.velocity = velocity;
            notes.push_back(n);
        }
    }
    // close anything left hanging at the end of the file
    for (auto& [pitch, queue] : open) {
        for (const auto& [on_tick, velocity] : queue) {
            if (pitch < kPitchMin || pitch > kPitchMax || on_tick >= max_tick) continue;
            log_warn(path + ": closing unterminated note at track end");
            NoteEvent n;
            n.pitch = pitch;
            n.onset_s = clock.seconds_at(on_tick);
            n.offset_s = clock.seconds_at(max_tick);
            n.velocity = velocity;
            notes.push_back(n);
        }
    }
    std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.pitch < b.pitch);
    });
    return notes;
}

void write_midi(std::span<const NoteEvent> notes, const std::string& path) {
    struct Event {
        int64_t tick;
        bool on;
        int pitch;
        int velocity;
    };
    std::vector<Event> events;
    events.reserve(notes.size() * 2);
    const double ticks_per_second = kWriteDivision * 1e6 / kDefaultTempo;  // = 1000
    for (const auto& n : notes) {
        validate(n);
        const int64_t on = std::llround(n.onset_s * ticks_per_second);
        int64_t off = std::llround(n.offset_s * ticks_per_second);
        if (off <= on) off = on + 1;
        const int vel = std::max(1, n.velocity);  // velocity 0 would read back as note-off
        events.push_back({on, true, n.pitch, vel});
        events.push_back({off, false, n.pitch, 0});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        if (a.on != b.on) return !a.on;  // offs first
        return a.pitch < b.pitch;
    });

    std::string track;
    // fixed-tempo map: 120 bpm
    put_varint(track, 0);
    track += '\xFF';
    track += '\x51';
    track += '\x03';
    for (int i = 2; i >= 0; --i) track.push_back(static_cast<char>((kDefaultTempo >> (8 * i)) & 0xff));

    int64_t prev = 0;
    for (const auto& ev : events) {
        put_varint(track, static_cast<uint32_t>(ev.tick - prev));
        prev = ev.tick;
        track.push_back(static_cast<char>(ev.on ? 0x90 : 0x80));
        track.push_back(static_cast<char>(ev.pitch));
        track.push_back(static_cast<char>(ev.on ? ev.velocity : 64));
    }
    put_varint(track, 0);
    track += '\xFF';
    track += '\x2F';
    track += '\x00';

    std::string out = "MThd";
    put_u32be(out, 6);
    put_u16be(out, 0);  // format 0
    put_u16be(out, 1);
    put_u16be(out, kWriteDivision);
    out += "MTrk";
    put_u32be(out, static_cast<uint32_t>(track.size()));
    out += track;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace hft::io
