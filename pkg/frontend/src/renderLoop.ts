import { ApiClient, ApiError } from "./api.js";
import { OutfitSelection, RenderResult } from "./types.js";

export interface DisplayedRender {
  selection: OutfitSelection;
  result: RenderResult;
  sequence: number;
}

export interface RenderLoopEvents {
  onLoading?: (selection: OutfitSelection) => void;
  onImage?: (displayed: DisplayedRender) => void;
  onError?: (error: ApiError | Error) => void;
}

/**
 * One in-flight render per selection change, latest wins. Superseded
 * requests are aborted, and responses that arrive after a newer request
 * was issued are dropped, so a stale image can never be displayed.
 */
export class RenderLoop {
  private sequence = 0;
  private displayedSequence = 0;
  private controller: AbortController | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly events: RenderLoopEvents = {},
  ) {}

  get requestsIssued(): number {
    return this.sequence;
  }

  async request(selection: OutfitSelection): Promise<DisplayedRender | null> {
    const seq = ++this.sequence;
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    this.events.onLoading?.(selection);
    let result: RenderResult;
    try {
      result = await this.api.render(selection, controller.signal);
    } catch (err) {
      if ((err as Error).name === "AbortError") return null; // superseded
      if (seq === this.sequence) this.events.onError?.(err as Error);
      return null;
    }
    if (seq !== this.sequence) return null; // a newer request exists: drop
    if (seq <= this.displayedSequence) return null;
    this.displayedSequence = seq;
    const displayed = { selection, result, sequence: seq };
    this.events.onImage?.(displayed);
    return displayed;
  }
}

/**
 * Rate limiter for slider scrubbing: at most one call per `delayMs`
 * (250 ms keeps render traffic at or below 4 requests per second). The
 * wrapped function reads current state when it fires, so the final call
 * always reflects the latest slider position.
 */
export function createDebouncedRender(
  requestRender: () => void,
  delayMs = 250,
): { request: () => void; flush: () => void; dispose: () => void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const request = () => {
    if (timer) return;
    timer = setTimeout(() => {
      timer = null;
      requestRender();
    }, delayMs);
  };
  const flush = () => {
    if (!timer) return;
    clearTimeout(timer);
    timer = null;
    requestRender();
  };
  const dispose = () => {
    if (timer) {
      clearTimeout(timer);
      timer = null;
    }
  };
  return { request, flush, dispose };
}
