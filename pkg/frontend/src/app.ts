// Session state machine: start -> trial loop -> done, plus the results view.
// The app always plays the trial the server returns next; it never reorders.

import { ApiClient, type TrialPayload } from "./api.js";
import { decodeSmf, SmfError, type TimedNote } from "./smf.js";
import { buildClip, defaultPlayerFactory, type PlayerFactory } from "./synth.js";
import { clipCard, el, progressLine, renderResults, type ClipCardHandle } from "./views.js";

export interface AppOptions {
  experimentId?: string;
  api?: ApiClient;
  playerFactory?: PlayerFactory;
}

export class App {
  private api: ApiClient;
  private playerFactory: PlayerFactory;
  private experimentId: string;
  private root!: HTMLElement;
  private sessionId: string | null = null;
  private submitted = 0;
  private skipped = 0;
  private cards: ClipCardHandle[] = [];

  constructor(options: AppOptions = {}) {
    this.api = options.api ?? new ApiClient();
    this.playerFactory = options.playerFactory ?? defaultPlayerFactory;
    this.experimentId = options.experimentId ?? "default";
  }

  mount(root: HTMLElement): void {
    this.root = root;
    this.renderStart();
  }

  private clearCards(): void {
    for (const card of this.cards) card.dispose();
    this.cards = [];
  }

  private renderStart(): void {
    this.clearCards();
    const input = el("input", {
      type: "text",
      placeholder: "evaluator id",
      "data-testid": "evaluator-input",
    });
    const start = el("button", { type: "button", "data-testid": "start-button" }, [
      "Start listening session",
    ]);
    const results = el("button", { type: "button", "data-testid": "results-link" }, [
      "Results (post-experiment)",
    ]);
    const status = el("p", { class: "status", "data-testid": "status" }, [""]);
    start.addEventListener("click", async () => {
      const evaluator = (input as HTMLInputElement).value.trim();
      if (!evaluator) {
        status.textContent = "Enter an evaluator id first.";
        return;
      }
      try {
        const session = await this.api.createSession(this.experimentId, evaluator);
        this.sessionId = session.session_id;
        this.submitted = 0;
        this.skipped = 0;
        await this.showNext();
      } catch (error) {
        status.textContent = `Could not start a session: ${String(error)}`;
      }
    });
    results.addEventListener("click", () => void this.renderResultsView());
    this.root.replaceChildren(
      el("h1", {}, ["Listening session"]),
      input,
      start,
      results,
      status,
    );
  }

  private async showNext(): Promise<void> {
    const trial = await this.api.nextTrial(this.sessionId!);
    if (trial.done) {
      this.renderDone(trial);
      return;
    }
    await this.renderTrial(trial);
  }

  private async loadClip(melody: TimedNote[], sampleRef: string): Promise<{
    player: ReturnType<PlayerFactory> | null;
    error: string | null;
  }> {
    try {
      const accompaniment = decodeSmf(await this.api.fetchMidi(sampleRef));
      // melody and accompaniment play together, one normalized clip
      return { player: this.playerFactory(buildClip(melody, accompaniment)), error: null };
    } catch (error) {
      if (error instanceof SmfError) return { player: null, error: error.message };
      throw error;
    }
  }

  private async renderTrial(trial: TrialPayload): Promise<void> {
    this.clearCards();
    let melody: TimedNote[] = [];
    if (trial.melody) {
      try {
        melody = decodeSmf(await this.api.fetchMidi(trial.melody));
      } catch {
        melody = []; // accompaniment alone is still playable
      }
    }
    const clipA = await this.loadClip(melody, trial.sample_a!);
    const clipB = await this.loadClip(melody, trial.sample_b!);
    const cardA = clipCard("A", clipA.player, clipA.error);
    const cardB = clipCard("B", clipB.player, clipB.error);
    this.cards = [cardA, cardB];

    const choices = el("fieldset", { class: "choice" }, [
      el("legend", {}, ["Which accompaniment better reflects the style?"]),
    ]);
    let choice: "A" | "B" | null = null;
    const submit = el("button", { type: "button", disabled: "", "data-testid": "submit-button" }, [
      "Submit",
    ]);
    for (const slot of ["A", "B"] as const) {
      const radio = el("input", {
        type: "radio",
        name: "choice",
        value: slot,
        "data-testid": `choose-${slot}`,
      });
      radio.addEventListener("change", () => {
        choice = slot;
        submit.removeAttribute("disabled");
      });
      choices.append(el("label", {}, [radio, `Clip ${slot}`]));
    }
    const skip = el("button", { type: "button", "data-testid": "skip-button" }, ["Skip trial"]);
    const status = el("p", { class: "status", "data-testid": "trial-status" }, [""]);

    const send = async (selected: "A" | "B" | "missing") => {
      submit.setAttribute("disabled", "");
      skip.setAttribute("disabled", "");
      const a = cardA.counts();
      const b = cardB.counts();
      try {
        await this.api.submitResponse(this.sessionId!, {
          trial_id: trial.trial_id!,
          choice: selected,
          hard_errors_a: a.hard,
          soft_errors_a: a.soft,
          hard_errors_b: b.hard,
          soft_errors_b: b.soft,
        });
        if (selected === "missing") this.skipped += 1;
        else this.submitted += 1;
        await this.showNext();
      } catch (error) {
        status.textContent = `Submission failed: ${String(error)}`;
        submit.removeAttribute("disabled");
        skip.removeAttribute("disabled");
      }
    };
    submit.addEventListener("click", () => {
      if (choice) void send(choice);
    });
    skip.addEventListener("click", () => void send("missing"));

    this.root.replaceChildren(
      el("h1", {}, ["Listening session"]),
      progressLine(trial.answered, trial.total),
      cardA.root,
      cardB.root,
      choices,
      el("div", { class: "actions" }, [submit, skip]),
      status,
    );
  }

  private renderDone(trial: TrialPayload): void {
    this.clearCards();
    this.root.replaceChildren(
      el("h1", {}, ["Session complete"]),
      el("p", { "data-testid": "done-accounting" }, [
        `${this.submitted} answered + ${this.skipped} skipped = ${trial.total} trials`,
      ]),
      el("p", {}, ["Thank you for listening."]),
    );
  }

  private async renderResultsView(): Promise<void> {
    this.clearCards();
    const container = el("div", { class: "results" });
    this.root.replaceChildren(el("h1", {}, ["Experiment results"]), container);
    try {
      renderResults(container, await this.api.fetchResults(this.experimentId));
    } catch (error) {
      container.replaceChildren(
        el("p", { class: "empty", "data-testid": "results-empty" }, [
          `No results available: ${String(error)}`,
        ]),
      );
    }
  }
}

export function bootstrap(): void {
  const root = document.getElementById("app");
  if (root) new App().mount(root);
}
