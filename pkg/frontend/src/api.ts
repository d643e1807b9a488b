import {
  CatalogEntry,
  OutfitSelection,
  Preset,
  RenderDiagnostics,
  RenderResult,
} from "./types.js";

const DIAGNOSTICS_HEADER = "X-Penetration-Diagnostics";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly slot: string | null = null,
  ) {
    super(message);
  }
}

export function parseDiagnosticsHeader(value: string | null): RenderDiagnostics {
  const out = { pairs: 0, confirmed: 0, corrected: 0 };
  if (!value) return out;
  for (const part of value.split(";")) {
    const [key, num] = part.split("=");
    if (key in out) out[key as keyof RenderDiagnostics] = Number(num) || 0;
  }
  return out;
}

export function renderRequestBody(sel: OutfitSelection): object {
  return {
    body_asset_id: sel.bodyId,
    upper_asset_id: sel.slots.upper,
    lower_asset_id: sel.slots.lower,
    outer_asset_id: sel.slots.outer,
    shape: sel.shape,
    pose: { preset: sel.preset, frame: sel.frame },
    camera: {
      azimuth: sel.azimuth,
      elevation: sel.elevation,
      distance: sel.distance,
      kind: "perspective",
    },
    image_width: sel.imageSize,
    image_height: sel.imageSize,
    correction: sel.correction,
  };
}

/** Which slot mentions this asset id (to name the offender in errors). */
function slotOf(sel: OutfitSelection, detail: string): string | null {
  if (sel.bodyId && detail.includes(sel.bodyId)) return "body";
  for (const slot of ["upper", "lower", "outer"] as const) {
    const id = sel.slots[slot];
    if (id && detail.includes(id)) return slot;
  }
  return null;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    readonly fetchFn: typeof fetch = fetch,
  ) {}

  async getCatalog(): Promise<CatalogEntry[]> {
    const res = await this.fetchFn(this.baseUrl + "/catalog");
    if (!res.ok) throw new ApiError(`catalog request failed (${res.status})`, res.status);
    return (await res.json()) as CatalogEntry[];
  }

  async getPresets(): Promise<Preset[]> {
    const res = await this.fetchFn(this.baseUrl + "/presets");
    if (!res.ok) throw new ApiError(`presets request failed (${res.status})`, res.status);
    return (await res.json()) as Preset[];
  }

  thumbnailUrl(entry: CatalogEntry): string | null {
    return entry.thumbnail_url ? this.baseUrl + entry.thumbnail_url : null;
  }

  async render(sel: OutfitSelection, signal?: AbortSignal): Promise<RenderResult> {
    const res = await this.fetchFn(this.baseUrl + "/render", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(renderRequestBody(sel)),
      signal,
    });
    if (!res.ok) {
      let detail = `render failed (${res.status})`;
      try {
        const payload = (await res.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // non-JSON error body; keep the generic message
      }
      const slot = slotOf(sel, detail);
      const msg = slot ? `${slot}: ${detail}` : detail;
      throw new ApiError(msg, res.status, slot);
    }
    const bytes = new Uint8Array(await res.arrayBuffer());
    return {
      bytes,
      diagnostics: parseDiagnosticsHeader(res.headers.get(DIAGNOSTICS_HEADER)),
    };
  }
}
