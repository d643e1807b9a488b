import { GARMENT_SLOTS, LayerName, OutfitSelection } from "./types.js";

export const SHAPE_SLIDER_COUNT = 2;

export function defaultSelection(): OutfitSelection {
  return {
    bodyId: null,
    slots: { upper: null, lower: null, outer: null },
    shape: new Array(SHAPE_SLIDER_COUNT).fill(0),
    preset: "canonical",
    frame: 0,
    azimuth: 20,
    elevation: 5,
    distance: 2.4,
    correction: true,
    imageSize: 256,
  };
}

// A render needs a body; garments are optional.
export function canRender(sel: OutfitSelection): boolean {
  return sel.bodyId !== null;
}

export function selectGarment(
  sel: OutfitSelection,
  slot: LayerName,
  id: string | null,
): OutfitSelection {
  if (slot === "body") {
    return { ...sel, bodyId: id };
  }
  return { ...sel, slots: { ...sel.slots, [slot]: id } };
}

export function selectPreset(sel: OutfitSelection, preset: string): OutfitSelection {
  return { ...sel, preset, frame: 0 }; // preset switch resets to canonical frame
}

/** Serialize the selection into URL query parameters (deep-linkable). */
export function selectionToParams(sel: OutfitSelection): URLSearchParams {
  const p = new URLSearchParams();
  if (sel.bodyId) p.set("body", sel.bodyId);
  for (const slot of GARMENT_SLOTS) {
    const id = sel.slots[slot as "upper" | "lower" | "outer"];
    if (id) p.set(slot, id);
  }
  if (sel.shape.some((v) => v !== 0)) p.set("shape", sel.shape.join(","));
  if (sel.preset !== "canonical") p.set("preset", sel.preset);
  if (sel.frame !== 0) p.set("frame", String(sel.frame));
  if (sel.azimuth !== 20) p.set("az", String(sel.azimuth));
  if (sel.elevation !== 5) p.set("el", String(sel.elevation));
  if (sel.distance !== 2.4) p.set("dist", String(sel.distance));
  if (!sel.correction) p.set("correction", "off");
  return p;
}

export function selectionFromParams(params: URLSearchParams): OutfitSelection {
  const sel = defaultSelection();
  sel.bodyId = params.get("body");
  for (const slot of GARMENT_SLOTS) {
    const id = params.get(slot);
    if (id) sel.slots[slot as "upper" | "lower" | "outer"] = id;
  }
  const shape = params.get("shape");
  if (shape) {
    sel.shape = shape.split(",").map((v) => Number(v) || 0);
  }
  sel.preset = params.get("preset") ?? "canonical";
  sel.frame = Number(params.get("frame") ?? 0) || 0;
  sel.azimuth = Number(params.get("az") ?? sel.azimuth);
  sel.elevation = Number(params.get("el") ?? sel.elevation);
  sel.distance = Number(params.get("dist") ?? sel.distance);
  sel.correction = params.get("correction") !== "off";
  return sel;
}
