// Full-session flow against the fake service: blinding, value-exact
// round-trips, skip handling, server-order discipline, error cards.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import { click, makeFakeWorld, settle, silentPlayerFactory, type FakeService } from "./util.js";

const MODEL_TAG = /\b(fp|baseline)\b/i;

function q(selector: string): HTMLElement | null {
  return document.querySelector(selector);
}

async function startSession(world: FakeService, evaluator = "eval-a"): Promise<App> {
  document.body.innerHTML = '<div id="app"></div>';
  const app = new App({
    api: new ApiClient("", world.fetchFn),
    playerFactory: silentPlayerFactory,
  });
  app.mount(document.getElementById("app")!);
  (q('[data-testid="evaluator-input"]') as HTMLInputElement).value = evaluator;
  click(q('[data-testid="start-button"]'));
  await settle();
  return app;
}

function scanForTags(): void {
  expect(document.body.innerHTML).not.toMatch(MODEL_TAG);
}

describe("listening session", () => {
  let world: FakeService;

  beforeEach(() => {
    world = makeFakeWorld(3);
  });

  it("walks every trial in server order with no model tag in the DOM", async () => {
    await startSession(world);
    const seen: string[] = [];
    for (let i = 0; i < 3; i++) {
      scanForTags();
      expect(q('[data-testid="progress"]')!.textContent).toContain(`${i} of 3`);
      seen.push(world.trials[i].trial_id);
      click(q('[data-testid="choose-A"]'));
      click(q('[data-testid="submit-button"]'));
      await settle();
      scanForTags();
    }
    expect(q('[data-testid="done-accounting"]')!.textContent).toBe(
      "3 answered + 0 skipped = 3 trials",
    );
    expect(world.recorded.map((r) => r.trial_id)).toEqual(seen); // no reordering
  });

  it("round-trips error counts and choice value-exact", async () => {
    await startSession(world);
    // clip A: 1 hard; clip B: 2 soft — via the steppers, decrement floor at 0
    const hardAPlus = q('[data-slot="A"] .stepper button[aria-label="more hard errors"]')!;
    const hardAMinus = q('[data-slot="A"] .stepper button[aria-label="fewer hard errors"]')!;
    click(hardAMinus); // blocked at zero
    click(hardAPlus);
    const softBPlus = q('[data-slot="B"] .stepper button[aria-label="more soft errors"]')!;
    click(softBPlus);
    click(softBPlus);
    click(q('[data-testid="choose-B"]'));
    click(q('[data-testid="submit-button"]'));
    await settle();
    expect(world.recorded[0]).toMatchObject({
      trial_id: "t-0",
      choice: "B",
      hard_errors_a: 1,
      soft_errors_a: 0,
      hard_errors_b: 0,
      soft_errors_b: 2,
    });
  });

  it("skip records a missing response and advances", async () => {
    await startSession(world);
    click(q('[data-testid="skip-button"]'));
    await settle();
    expect(world.recorded[0].choice).toBe("missing");
    expect(q('[data-testid="progress"]')!.textContent).toContain("1 of 3");
    click(q('[data-testid="choose-A"]'));
    click(q('[data-testid="submit-button"]'));
    await settle();
    click(q('[data-testid="skip-button"]'));
    await settle();
    expect(q('[data-testid="done-accounting"]')!.textContent).toBe(
      "1 answered + 2 skipped = 3 trials",
    );
  });

  it("submit stays disabled until a choice is made", async () => {
    await startSession(world);
    expect(q('[data-testid="submit-button"]')!.hasAttribute("disabled")).toBe(true);
    click(q('[data-testid="choose-A"]'));
    expect(q('[data-testid="submit-button"]')!.hasAttribute("disabled")).toBe(false);
  });

  it("network failure retries transparently without double-recording", async () => {
    await startSession(world);
    world.failNextSubmits = 1;
    click(q('[data-testid="choose-A"]'));
    click(q('[data-testid="submit-button"]'));
    await settle();
    expect(world.recorded).toHaveLength(1);
    expect(q('[data-testid="progress"]')!.textContent).toContain("1 of 3");
  });

  it("shows an error card for undecodable clips and allows skipping", async () => {
    const ref = world.sampleRefs.get(world.trials[0].slot_a)!;
    world.midi.set(ref, new TextEncoder().encode("garbage"));
    await startSession(world);
    expect(q('[data-testid="clip-error-A"]')).not.toBeNull();
    expect(q('[data-testid="clip-error-A"]')!.textContent).toContain("skip");
    scanForTags();
    click(q('[data-testid="skip-button"]'));
    await settle();
    expect(world.recorded[0].choice).toBe("missing");
  });

  it("displays clip durations", async () => {
    await startSession(world);
    expect(q('[data-testid="duration-A"]')!.textContent).toMatch(/\d+\.\d s/);
    expect(q('[data-testid="duration-B"]')!.textContent).toMatch(/\d+\.\d s/);
  });
});
