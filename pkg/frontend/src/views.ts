// DOM building blocks. Everything evaluator-facing is blind: clips are only
// ever labeled A and B.

import type { ErrorRow, ResultsPayload, TypeRow } from "./api.js";
import type { Player } from "./synth.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

export interface ErrorCounts {
  hard: number;
  soft: number;
}

export interface StepperHandle {
  root: HTMLElement;
  value(): number;
}

/** Non-negative integer stepper; decrement is blocked at zero client-side. */
export function stepper(label: string, testId: string): StepperHandle {
  let value = 0;
  const display = el("span", { class: "stepper-value", "data-testid": testId }, ["0"]);
  const minus = el("button", { type: "button", "aria-label": `fewer ${label}` }, ["−"]);
  const plus = el("button", { type: "button", "aria-label": `more ${label}` }, ["+"]);
  minus.addEventListener("click", () => {
    if (value > 0) value -= 1;
    display.textContent = String(value);
  });
  plus.addEventListener("click", () => {
    value += 1;
    display.textContent = String(value);
  });
  const root = el("div", { class: "stepper" }, [
    el("span", { class: "stepper-label" }, [label]),
    minus,
    display,
    plus,
  ]);
  return { root, value: () => value };
}

export interface ClipCardHandle {
  root: HTMLElement;
  counts(): ErrorCounts;
  dispose(): void;
}

/** One playable clip with transport controls and error steppers. */
export function clipCard(
  slot: "A" | "B",
  player: Player | null,
  decodeError: string | null,
): ClipCardHandle {
  const hard = stepper("hard errors", `hard-${slot}`);
  const soft = stepper("soft errors", `soft-${slot}`);
  const children: (Node | string)[] = [el("h3", {}, [`Clip ${slot}`])];

  let timer: ReturnType<typeof setInterval> | null = null;
  if (player) {
    const toggle = el("button", { type: "button", "data-testid": `play-${slot}` }, ["Play"]);
    const seek = el("input", {
      type: "range",
      min: "0",
      max: String(Math.max(1, Math.round(player.duration * 100))),
      value: "0",
      "data-testid": `seek-${slot}`,
    });
    const clock = el("span", { class: "clock" }, [formatSeconds(0)]);
    toggle.addEventListener("click", () => {
      if (player.playing) {
        player.pause();
        toggle.textContent = "Play";
      } else {
        player.play();
        toggle.textContent = "Pause";
      }
    });
    seek.addEventListener("input", () => {
      player.seek(Number(seek.value) / 100);
    });
    timer = setInterval(() => {
      clock.textContent = formatSeconds(player.position());
      if (!player.playing) toggle.textContent = "Play";
    }, 250);
    children.push(
      el("div", { class: "transport" }, [
        toggle,
        seek,
        clock,
        el("span", { class: "duration", "data-testid": `duration-${slot}` }, [
          formatSeconds(player.duration),
        ]),
      ]),
    );
  } else {
    children.push(
      el("p", { class: "error-card", "data-testid": `clip-error-${slot}` }, [
        `This clip could not be decoded (${decodeError ?? "unknown error"}). You can skip the trial.`,
      ]),
    );
  }
  children.push(hard.root, soft.root);
  return {
    root: el("section", { class: "clip-card", "data-slot": slot }, children),
    counts: () => ({ hard: hard.value(), soft: soft.value() }),
    dispose: () => {
      if (timer) clearInterval(timer);
      player?.dispose();
    },
  };
}

export function formatSeconds(seconds: number): string {
  return `${seconds.toFixed(1)} s`;
}

export function progressLine(answered: number, total: number): HTMLElement {
  return el("p", { class: "progress", "data-testid": "progress" }, [
    `${answered} of ${total} trials answered`,
  ]);
}

export function renderResults(root: HTMLElement, results: ResultsPayload): void {
  root.replaceChildren();
  root.append(
    el("p", { class: "banner", "data-testid": "unblinded-banner" }, [
      "unblinded — post-experiment",
    ]),
  );
  if (results.total_trials === 0 && results.total_responses === 0) {
    root.append(el("p", { class: "empty", "data-testid": "results-empty" }, [
      "No experiment data yet.",
    ]));
    return;
  }
  const header = el("tr", {}, ["melody type", "n", "model wins", "missing", "p-value"].map(
    (text) => el("th", {}, [text]),
  ));
  const rows = results.per_type.map((row: TypeRow) =>
    el("tr", { "data-testid": `type-${row.melody_type}` }, [
      el("td", {}, [row.melody_type]),
      el("td", {}, [String(row.n)]),
      el("td", {}, [String(row.fp_wins)]),
      el("td", {}, [String(row.missing)]),
      el("td", {}, [row.p_value === null ? "—" : formatP(row.p_value)]),
    ]),
  );
  root.append(
    el("h2", {}, ["Preference results"]),
    el("table", { class: "results-table" }, [header, ...rows]),
  );

  const errorHeader = el("tr", {}, ["model", "hard errors", "soft errors", "% error-free"].map(
    (text) => el("th", {}, [text]),
  ));
  const errorRows = results.errors.map((row: ErrorRow) =>
    el("tr", { "data-testid": `errors-${row.model_tag}` }, [
      el("td", {}, [row.model_tag]),
      el("td", {}, [String(row.hard_errors)]),
      el("td", {}, [String(row.soft_errors)]),
      el("td", {}, [`${row.percent_error_free.toFixed(2)}%`]),
    ]),
  );
  root.append(
    el("h2", {}, ["Perceived errors"]),
    el("table", { class: "errors-table" }, [errorHeader, ...errorRows]),
  );
}

export function formatP(p: number): string {
  if (p < 0.001) return "<0.001";
  return p.toPrecision(2);
}
