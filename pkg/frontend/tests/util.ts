// Test doubles: an SMF byte builder and an in-memory fake of the experiment
// service speaking the exact wire format (blinded payloads, idempotency,
// cursor discipline) while holding model tags internally.

import type { ResultsPayload } from "../src/api.js";
import type { Player, PlayerFactory } from "../src/synth.js";

export interface TestNote {
  tick: number;
  durationTicks: number;
  pitch: number;
  velocity?: number;
}

function vlq(value: number): number[] {
  const out = [value & 0x7f];
  value >>= 7;
  while (value > 0) {
    out.unshift((value & 0x7f) | 0x80);
    value >>= 7;
  }
  return out;
}

export function buildSmf(notes: TestNote[], ppq = 24): Uint8Array {
  const events: { tick: number; order: number; bytes: number[] }[] = [];
  for (const note of notes) {
    const velocity = note.velocity ?? 80;
    events.push({ tick: note.tick, order: 1, bytes: [0x90, note.pitch, velocity] });
    events.push({ tick: note.tick + note.durationTicks, order: 0, bytes: [0x80, note.pitch, 0] });
  }
  events.sort((a, b) => a.tick - b.tick || a.order - b.order);
  const body: number[] = [];
  let last = 0;
  for (const event of events) {
    body.push(...vlq(event.tick - last), ...event.bytes);
    last = event.tick;
  }
  body.push(0x00, 0xff, 0x2f, 0x00);
  const header = [
    0x4d, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 0, 0, 1, (ppq >> 8) & 0xff, ppq & 0xff,
  ];
  const trackHeader = [
    0x4d, 0x54, 0x72, 0x6b,
    (body.length >> 24) & 0xff, (body.length >> 16) & 0xff, (body.length >> 8) & 0xff, body.length & 0xff,
  ];
  return new Uint8Array([...header, ...trackHeader, ...body]);
}

export interface FakeTrial {
  trial_id: string;
  melody_id: string;
  slot_a: string; // sample ids; fake-internal only
  slot_b: string;
  fp_in_slot_a: boolean;
}

export interface RecordedResponse {
  trial_id: string;
  choice: string;
  hard_errors_a: number;
  soft_errors_a: number;
  hard_errors_b: number;
  soft_errors_b: number;
  idempotency_key?: string;
}

export class FakeService {
  sessions = new Map<string, { evaluator: string; queue: FakeTrial[]; cursor: number }>();
  recorded: RecordedResponse[] = [];
  acks = new Map<string, { answered: number; total: number }>();
  postBodies: string[] = [];
  failNextSubmits = 0; // simulate network failures
  private sessionCounter = 0;

  constructor(
    public trials: FakeTrial[],
    public midi: Map<string, Uint8Array>, // ref -> bytes (refs are content hashes)
    public melodyRefs: Map<string, string>,
    public sampleRefs: Map<string, string>,
    public results: ResultsPayload | null = null,
  ) {}

  fetchFn = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const json = (body: unknown, status = 200) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "content-type": "application/json" },
      });

    let match = url.match(/\/experiments\/([^/]+)\/sessions$/);
    if (match && method === "POST") {
      const { evaluator } = JSON.parse(String(init?.body));
      const sessionId = `session-${++this.sessionCounter}`;
      this.sessions.set(sessionId, { evaluator, queue: this.trials, cursor: 0 });
      return json({
        session_id: sessionId,
        evaluator,
        total: this.trials.length,
        answered: 0,
      });
    }

    match = url.match(/\/sessions\/([^/]+)\/next$/);
    if (match) {
      const session = this.sessions.get(match[1]);
      if (!session) return json({ detail: "unknown session" }, 404);
      if (session.cursor >= session.queue.length) {
        return json({ done: true, answered: session.cursor, total: session.queue.length });
      }
      const trial = session.queue[session.cursor];
      return json({
        done: false,
        trial_id: trial.trial_id,
        melody: `/midi/${this.melodyRefs.get(trial.melody_id)}`,
        sample_a: `/midi/${this.sampleRefs.get(trial.slot_a)}`,
        sample_b: `/midi/${this.sampleRefs.get(trial.slot_b)}`,
        answered: session.cursor,
        total: session.queue.length,
      });
    }

    match = url.match(/\/sessions\/([^/]+)\/responses$/);
    if (match && method === "POST") {
      if (this.failNextSubmits > 0) {
        this.failNextSubmits -= 1;
        throw new TypeError("network failure (simulated)");
      }
      const session = this.sessions.get(match[1]);
      if (!session) return json({ detail: "unknown session" }, 404);
      const body = JSON.parse(String(init?.body)) as RecordedResponse;
      this.postBodies.push(String(init?.body));
      if (body.idempotency_key && this.acks.has(body.idempotency_key)) {
        return json(this.acks.get(body.idempotency_key));
      }
      const expected = session.queue[session.cursor]?.trial_id;
      if (body.trial_id !== expected) return json({ detail: "cursor conflict" }, 409);
      this.recorded.push(body);
      session.cursor += 1;
      const ack = { answered: session.cursor, total: session.queue.length };
      if (body.idempotency_key) this.acks.set(body.idempotency_key, ack);
      return json(ack);
    }

    match = url.match(/\/midi\/([^/]+)$/);
    if (match) {
      const bytes = this.midi.get(match[1]);
      if (!bytes) return json({ detail: "unknown ref" }, 404);
      return new Response(new Uint8Array(bytes).buffer, {
        status: 200,
        headers: { "content-type": "audio/midi" },
      });
    }

    match = url.match(/\/experiments\/([^/]+)\/results$/);
    if (match) {
      if (!this.results) return json({ detail: "no results" }, 404);
      return json(this.results);
    }
    return json({ detail: `unhandled ${method} ${url}` }, 500);
  };
}

export class SilentPlayer implements Player {
  playing = false;
  private pos = 0;
  constructor(readonly duration: number) {}
  play(): void {
    this.playing = true;
  }
  pause(): void {
    this.playing = false;
  }
  seek(position: number): void {
    this.pos = position;
  }
  position(): number {
    return this.pos;
  }
  dispose(): void {
    this.playing = false;
  }
}

export const silentPlayerFactory: PlayerFactory = (clip) => new SilentPlayer(clip.duration);

/** A trial roster shaped like the real study: tags only exist fake-side. */
export function makeFakeWorld(nTrials = 3): FakeService {
  const midi = new Map<string, Uint8Array>();
  const melodyRefs = new Map<string, string>();
  const sampleRefs = new Map<string, string>();
  const trials: FakeTrial[] = [];
  for (let i = 0; i < nTrials; i++) {
    const melodyId = `melody-${i}`;
    const melodyRef = `m${i}hash`;
    midi.set(melodyRef, buildSmf([{ tick: 0, durationTicks: 24, pitch: 72 }]));
    melodyRefs.set(melodyId, melodyRef);
    const fpSample = `${melodyId}:fp:0`;
    const baselineSample = `${melodyId}:baseline:0`;
    const fpRef = `a${i}hash`;
    const baselineRef = `b${i}hash`;
    midi.set(fpRef, buildSmf([{ tick: 0, durationTicks: 48, pitch: 52 + i }]));
    midi.set(baselineRef, buildSmf([{ tick: 0, durationTicks: 48, pitch: 40 + i }]));
    sampleRefs.set(fpSample, fpRef);
    sampleRefs.set(baselineSample, baselineRef);
    const fpInA = i % 2 === 0;
    trials.push({
      trial_id: `t-${i}`,
      melody_id: melodyId,
      slot_a: fpInA ? fpSample : baselineSample,
      slot_b: fpInA ? baselineSample : fpSample,
      fp_in_slot_a: fpInA,
    });
  }
  return new FakeService(trials, midi, melodyRefs, sampleRefs);
}

export function click(element: Element | null): void {
  if (!element) throw new Error("element not found");
  (element as HTMLElement).click();
}

export async function settle(): Promise<void> {
  // drain micro- and macrotasks so async click handlers finish
  for (let i = 0; i < 10; i++) await new Promise((resolve) => setTimeout(resolve, 0));
}
