// Minimal Standard MIDI File decoder: enough to turn the service's SMF bytes
// into timed notes for client-side synthesis.

export class SmfError extends Error {}

export interface TimedNote {
  start: number; // seconds
  duration: number; // seconds
  pitch: number; // MIDI note number
  velocity: number; // 0..127
}

interface RawNote {
  tick: number;
  endTick: number;
  pitch: number;
  velocity: number;
}

class Reader {
  pos = 0;
  constructor(private data: Uint8Array) {}

  remaining(): number {
    return this.data.length - this.pos;
  }

  u8(): number {
    if (this.pos >= this.data.length) throw new SmfError("truncated file");
    return this.data[this.pos++];
  }

  u16(): number {
    return (this.u8() << 8) | this.u8();
  }

  u32(): number {
    return this.u16() * 0x10000 + this.u16();
  }

  bytes(n: number): Uint8Array {
    if (this.remaining() < n) throw new SmfError("truncated chunk");
    const out = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  vlq(): number {
    let value = 0;
    for (let i = 0; i < 4; i++) {
      const b = this.u8();
      value = (value << 7) | (b & 0x7f);
      if (!(b & 0x80)) return value;
    }
    throw new SmfError("overlong variable-length quantity");
  }
}

/** Decode SMF bytes into seconds-domain notes (fixed tempo from the file). */
export function decodeSmf(data: Uint8Array): TimedNote[] {
  const r = new Reader(data);
  const tag = String.fromCharCode(...r.bytes(4));
  if (tag !== "MThd") throw new SmfError("not an SMF file");
  const headerLen = r.u32();
  if (headerLen < 6) throw new SmfError("bad header length");
  const format = r.u16();
  if (format !== 0 && format !== 1) throw new SmfError(`unsupported format ${format}`);
  const nChunks = r.u16();
  const division = r.u16();
  if (division & 0x8000) throw new SmfError("SMPTE division unsupported");
  if (division === 0) throw new SmfError("zero division");
  r.bytes(headerLen - 6);

  let usPerQuarter = 500_000; // 120 BPM unless a tempo event says otherwise
  const notes: RawNote[] = [];

  for (let chunk = 0; chunk < nChunks; chunk++) {
    if (r.remaining() < 8) throw new SmfError("missing track chunk");
    const chunkTag = String.fromCharCode(...r.bytes(4));
    const length = r.u32();
    const body = new Reader(r.bytes(length));
    if (chunkTag !== "MTrk") continue;

    let tick = 0;
    let status = 0;
    const open = new Map<number, RawNote[]>(); // channel<<8 | pitch -> stack
    while (body.remaining() > 0) {
      tick += body.vlq();
      let b = body.u8();
      if (b === 0xff) {
        const metaType = body.u8();
        const len = body.vlq();
        const payload = body.bytes(len);
        if (metaType === 0x2f) break;
        if (metaType === 0x51 && len === 3) {
          usPerQuarter = (payload[0] << 16) | (payload[1] << 8) | payload[2];
        }
        continue;
      }
      if (b === 0xf0 || b === 0xf7) {
        body.bytes(body.vlq());
        continue;
      }
      let data1: number;
      if (b & 0x80) {
        status = b;
        data1 = body.u8();
      } else {
        if (!(status & 0x80)) throw new SmfError("dangling data byte");
        data1 = b;
      }
      const kind = status & 0xf0;
      const channel = status & 0x0f;
      if (kind === 0x90 || kind === 0x80 || kind === 0xa0 || kind === 0xb0 || kind === 0xe0) {
        const data2 = body.u8();
        const key = (channel << 8) | data1;
        if (kind === 0x90 && data2 > 0) {
          const note = { tick, endTick: -1, pitch: data1, velocity: data2 };
          notes.push(note);
          const stack = open.get(key) ?? [];
          stack.push(note);
          open.set(key, stack);
        } else if (kind === 0x80 || (kind === 0x90 && data2 === 0)) {
          const stack = open.get(key);
          const note = stack?.shift();
          if (note) note.endTick = tick;
        }
      }
      // 0xC0/0xD0 carry one data byte, already consumed as data1
    }
    for (const stack of open.values()) {
      for (const note of stack) if (note.endTick < 0) note.endTick = tick;
    }
  }

  const secondsPerTick = usPerQuarter / 1_000_000 / division;
  return notes
    .filter((n) => n.endTick > n.tick)
    .map((n) => ({
      start: n.tick * secondsPerTick,
      duration: (n.endTick - n.tick) * secondsPerTick,
      pitch: n.pitch,
      velocity: n.velocity,
    }))
    .sort((a, b) => a.start - b.start || a.pitch - b.pitch);
}
