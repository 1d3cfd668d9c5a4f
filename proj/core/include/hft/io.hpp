#pragma once

#include <string>
#include <vector>

#include "hft/dsp.hpp"
#include "hft/targets.hpp"

// File formats. All multi-byte binary values are little-endian.

namespace hft::io {

/// RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit, any channel count
/// (downmixed to mono) and sample rate. Unknown chunks are skipped with a
/// warning; malformed headers raise.
dsp::Waveform read_wav(const std::string& path);

/// PCM 16-bit mono writer.
void write_wav(const dsp::Waveform& w, const std::string& path);

enum class NoteFileFormat { json, midi };

/// Dispatches on content (MThd magic -> MIDI, otherwise JSON).
std::vector<NoteEvent> read_notes(const std::string& path);
void write_notes(std::span<const NoteEvent> notes, const std::string& path,
                 NoteFileFormat format);

/// Standard MIDI file, formats 0 and 1. Note-on/note-off with velocity;
/// the tempo map is honored when converting ticks to seconds; everything
/// else is skipped. Note-on with velocity 0 counts as note-off.
std::vector<NoteEvent> read_midi(const std::string& path);

/// Format 0, 500 ticks per quarter at a fixed 120 bpm (1 tick = 1 ms).
void write_midi(std::span<const NoteEvent> notes, const std::string& path);

std::vector<NoteEvent> notes_from_json(const std::string& text);
std::string notes_to_json(std::span<const NoteEvent> notes);

/// 16-byte header (magic "HFTF", u32 frames, u32 bins, u32 reserved) then
/// float32 data, frame-major.
void write_features(const dsp::LogMelSpectrogram& s, const std::string& path);
dsp::LogMelSpectrogram read_features(const std::string& path);

}  // namespace hft::io
