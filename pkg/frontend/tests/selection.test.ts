import { describe, expect, it } from "vitest";

import {
  canRender,
  defaultSelection,
  selectGarment,
  selectionFromParams,
  selectionToParams,
  selectPreset,
} from "../src/selection.js";

describe("selection", () => {
  it("requires a body before rendering is enabled", () => {
    const sel = defaultSelection();
    expect(canRender(sel)).toBe(false);
    expect(canRender(selectGarment(sel, "lower", "skirt"))).toBe(false);
    expect(canRender(selectGarment(sel, "body", "body-7"))).toBe(true);
  });

  it("round-trips through URL query parameters", () => {
    let sel = defaultSelection();
    sel = selectGarment(sel, "body", "body-7");
    sel = selectGarment(sel, "lower", "tube-skirt-7");
    sel = { ...sel, preset: "sway", frame: 4, shape: [0.5, -0.25],
            azimuth: 90, correction: false };
    const params = selectionToParams(sel);
    const restored = selectionFromParams(params);
    expect(restored).toEqual(sel);
  });

  it("default selection produces an empty query string", () => {
    expect(selectionToParams(defaultSelection()).toString()).toBe("");
  });

  it("restores ids from a preselected URL", () => {
    const restored = selectionFromParams(
      new URLSearchParams("body=body-7&upper=shirt-shell-7&frame=2&preset=sway"),
    );
    expect(restored.bodyId).toBe("body-7");
    expect(restored.slots.upper).toBe("shirt-shell-7");
    expect(restored.slots.lower).toBeNull();
    expect(restored.preset).toBe("sway");
    expect(restored.frame).toBe(2);
  });

  it("preset switch resets the frame to canonical", () => {
    let sel = { ...defaultSelection(), preset: "sway", frame: 7 };
    sel = selectPreset(sel, "twist");
    expect(sel.preset).toBe("twist");
    expect(sel.frame).toBe(0);
  });

  it("selection updates are immutable", () => {
    const base = defaultSelection();
    const next = selectGarment(base, "upper", "shirt");
    expect(base.slots.upper).toBeNull();
    expect(next.slots.upper).toBe("shirt");
  });
});
