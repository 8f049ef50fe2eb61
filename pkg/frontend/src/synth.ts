// Clip assembly and a small deterministic polyphonic synth.
//
// A clip mixes the melody notes with one accompaniment's notes and carries a
// gain chosen so every clip of a trial plays at the same loudness proxy
// (energy per second). Rendering is a pure sine synth with a short envelope;
// the browser player wraps the rendered PCM in WebAudio for play/pause/seek.

import type { TimedNote } from "./smf.js";

export interface Clip {
  notes: TimedNote[];
  gain: number;
  duration: number; // seconds
}

const TARGET_RMS = 0.12;
const ATTACK = 0.01;
const RELEASE = 0.04;

/** Energy-per-second loudness proxy used for normalization. */
function loudnessProxy(notes: TimedNote[], duration: number): number {
  if (duration <= 0) return 0;
  let energy = 0;
  for (const note of notes) {
    const amplitude = note.velocity / 127;
    energy += amplitude * amplitude * note.duration;
  }
  return energy / duration;
}

/** Merge note streams (melody + accompaniment) into one normalized clip. */
export function buildClip(...parts: TimedNote[][]): Clip {
  const notes = parts.flat().slice().sort((a, b) => a.start - b.start || a.pitch - b.pitch);
  const duration = notes.reduce((end, n) => Math.max(end, n.start + n.duration), 0);
  const proxy = loudnessProxy(notes, duration);
  const gain = proxy > 0 ? Math.min(1, TARGET_RMS / Math.sqrt(proxy / 2)) : 1;
  return { notes, gain, duration };
}

function midiHz(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}

/** Deterministic offline render of a clip to mono PCM. */
export function renderPcm(clip: Clip, sampleRate = 22050): Float32Array {
  const samples = Math.max(1, Math.ceil((clip.duration + RELEASE) * sampleRate));
  const out = new Float32Array(samples);
  for (const note of clip.notes) {
    const freq = midiHz(note.pitch);
    const amplitude = (note.velocity / 127) * clip.gain;
    const start = Math.floor(note.start * sampleRate);
    const sustain = note.duration;
    const total = Math.min(samples - start, Math.ceil((sustain + RELEASE) * sampleRate));
    for (let i = 0; i < total; i++) {
      const t = i / sampleRate;
      let envelope: number;
      if (t < ATTACK) envelope = t / ATTACK;
      else if (t < sustain) envelope = 1;
      else envelope = Math.max(0, 1 - (t - sustain) / RELEASE);
      out[start + i] += amplitude * envelope * Math.sin(2 * Math.PI * freq * t);
    }
  }
  // defensive soft clamp; normalized clips stay well inside (-1, 1)
  for (let i = 0; i < samples; i++) out[i] = Math.max(-1, Math.min(1, out[i]));
  return out;
}

export interface Player {
  readonly duration: number;
  readonly playing: boolean;
  play(): void;
  pause(): void;
  seek(position: number): void;
  position(): number;
  dispose(): void;
}

export type PlayerFactory = (clip: Clip) => Player;

/** WebAudio-backed player over the offline-rendered PCM. */
export class WebAudioPlayer implements Player {
  readonly duration: number;
  playing = false;
  private context: AudioContext;
  private buffer: AudioBuffer;
  private source: AudioBufferSourceNode | null = null;
  private offset = 0;
  private startedAt = 0;

  constructor(clip: Clip, contextFactory: () => AudioContext = () => new AudioContext()) {
    this.context = contextFactory();
    const pcm = renderPcm(clip, this.context.sampleRate);
    this.buffer = this.context.createBuffer(1, pcm.length, this.context.sampleRate);
    this.buffer.copyToChannel(new Float32Array(pcm), 0);
    this.duration = clip.duration;
  }

  play(): void {
    if (this.playing) return;
    void this.context.resume();
    this.source = this.context.createBufferSource();
    this.source.buffer = this.buffer;
    this.source.connect(this.context.destination);
    this.source.onended = () => {
      if (this.playing) {
        this.playing = false;
        this.offset = 0;
      }
    };
    this.source.start(0, Math.min(this.offset, this.buffer.duration));
    this.startedAt = this.context.currentTime;
    this.playing = true;
  }

  pause(): void {
    if (!this.playing) return;
    this.offset = this.position();
    this.playing = false;
    this.source?.stop();
    this.source = null;
  }

  seek(position: number): void {
    const wasPlaying = this.playing;
    if (wasPlaying) this.pause();
    this.offset = Math.max(0, Math.min(position, this.duration));
    if (wasPlaying) this.play();
  }

  position(): number {
    if (!this.playing) return this.offset;
    return Math.min(this.offset + (this.context.currentTime - this.startedAt), this.duration);
  }

  dispose(): void {
    this.pause();
    void this.context.close();
  }
}

export const defaultPlayerFactory: PlayerFactory = (clip) => new WebAudioPlayer(clip);
