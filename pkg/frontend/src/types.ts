export type LayerName = "body" | "upper" | "lower" | "outer";

export const GARMENT_SLOTS: LayerName[] = ["upper", "lower", "outer"];

export interface CatalogEntry {
  id: string;
  layer: LayerName;
  category: string;
  thumbnail_url: string | null;
}

export interface Preset {
  name: string;
  frames: number;
}

export interface PairDiagnostics {
  pair: string;
  regions: number;
  confirmed: number;
  corrected: number;
}

export interface RenderDiagnostics {
  pairs: number;
  confirmed: number;
  corrected: number;
}

export interface RenderResult {
  bytes: Uint8Array;
  diagnostics: RenderDiagnostics;
}

export interface OutfitSelection {
  bodyId: string | null;
  slots: { upper: string | null; lower: string | null; outer: string | null };
  shape: number[];
  preset: string;
  frame: number;
  azimuth: number;
  elevation: number;
  distance: number;
  correction: boolean;
  imageSize: number;
}
