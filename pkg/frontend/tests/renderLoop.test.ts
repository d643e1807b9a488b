import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { createDebouncedRender, RenderLoop } from "../src/renderLoop.js";
import { defaultSelection, selectGarment } from "../src/selection.js";
import { OutfitSelection } from "../src/types.js";

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

function pngResponse(bytes: Uint8Array, diagnostics = "pairs=2;confirmed=0;corrected=0") {
  return new Response(new Uint8Array(bytes).buffer as ArrayBuffer, {
    status: 200,
    headers: {
      "Content-Type": "image/png",
      "X-Penetration-Diagnostics": diagnostics,
    },
  });
}

interface MockCall {
  body: { correction: boolean; pose: { frame: number } };
}

/** fetch stub whose /render latency and payload are scriptable per call. */
function mockService(plan: Array<{ delayMs: number; bytes: Uint8Array; diag?: string }>) {
  const calls: MockCall[] = [];
  let renderIndex = 0;
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/render")) {
      const step = plan[Math.min(renderIndex, plan.length - 1)];
      renderIndex += 1;
      calls.push({ body: JSON.parse(String(init?.body)) });
      const signal = init?.signal as AbortSignal | undefined;
      await new Promise<void>((resolve, reject) => {
        const timer = setTimeout(resolve, step.delayMs);
        signal?.addEventListener("abort", () => {
          clearTimeout(timer);
          const err = new Error("aborted");
          err.name = "AbortError";
          reject(err);
        });
      });
      return pngResponse(step.bytes, step.diag);
    }
    throw new Error(`unexpected url ${url}`);
  }) as typeof fetch;
  return { fetchFn, calls };
}

function withBody(sel?: OutfitSelection): OutfitSelection {
  return { ...(sel ?? defaultSelection()), bodyId: "body-7" };
}

describe("RenderLoop", () => {
  it("issues exactly one request per selection change", async () => {
    const bytes = new Uint8Array([1, 2, 3]);
    const svc = mockService([{ delayMs: 1, bytes }]);
    const loop = new RenderLoop(new ApiClient("", svc.fetchFn));
    await loop.request(withBody());
    expect(svc.calls.length).toBe(1);
    await loop.request(selectGarment(withBody(), "lower", "skirt"));
    expect(svc.calls.length).toBe(2);
    expect(loop.requestsIssued).toBe(2);
  });

  it("displays exactly the bytes the service returned", async () => {
    const bytes = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10, 42]);
    const svc = mockService([{ delayMs: 1, bytes }]);
    const shown: Uint8Array[] = [];
    const loop = new RenderLoop(new ApiClient("", svc.fetchFn), {
      onImage: (d) => shown.push(d.result.bytes),
    });
    const displayed = await loop.request(withBody());
    expect(displayed).not.toBeNull();
    expect(shown.length).toBe(1);
    expect(Array.from(shown[0])).toEqual(Array.from(bytes));
  });

  it("never displays a stale response under rapid scrubbing (1 s delay)", async () => {
    const slow = new Uint8Array([1, 1, 1]);
    const fast = new Uint8Array([2, 2, 2]);
    const svc = mockService([
      { delayMs: 1000, bytes: slow }, // artificial 1 s service delay
      { delayMs: 10, bytes: fast },
    ]);
    const shown: Uint8Array[] = [];
    const loop = new RenderLoop(new ApiClient("", svc.fetchFn), {
      onImage: (d) => shown.push(d.result.bytes),
    });
    const first = loop.request(withBody());
    await sleep(5);
    const second = loop.request({ ...withBody(), frame: 1 });
    const [a, b] = await Promise.all([first, second]);
    await sleep(1100); // long enough for the slow response to have landed
    expect(a).toBeNull(); // superseded request never surfaces
    expect(b).not.toBeNull();
    expect(shown.length).toBe(1);
    expect(Array.from(shown[0])).toEqual(Array.from(fast));
  });

  it("drops late responses even without abort support", async () => {
    // A transport that ignores the signal: the sequence check alone must
    // prevent the stale (slow) image from being displayed.
    const slow = new Uint8Array([1]);
    const fast = new Uint8Array([2]);
    let index = 0;
    const fetchFn = (async (_url: RequestInfo | URL, _init?: RequestInit) => {
      const mine = index++;
      await sleep(mine === 0 ? 300 : 5);
      return pngResponse(mine === 0 ? slow : fast);
    }) as typeof fetch;
    const shown: Uint8Array[] = [];
    const loop = new RenderLoop(new ApiClient("", fetchFn), {
      onImage: (d) => shown.push(d.result.bytes),
    });
    const first = loop.request(withBody());
    await sleep(5);
    const second = loop.request({ ...withBody(), frame: 2 });
    await Promise.all([first, second]);
    await sleep(400);
    expect(shown.length).toBe(1);
    expect(Array.from(shown[0])).toEqual(Array.from(fast));
  });

  it("toggling correction re-renders and reports corrected counts", async () => {
    const corrected = new Uint8Array([9, 9, 9]);
    const raw = new Uint8Array([7, 7, 7]);
    const svc = mockService([
      { delayMs: 1, bytes: corrected, diag: "pairs=1;confirmed=42;corrected=42" },
      { delayMs: 1, bytes: raw, diag: "pairs=0;confirmed=0;corrected=0" },
    ]);
    const loop = new RenderLoop(new ApiClient("", svc.fetchFn));
    const sel = withBody();
    const withCorrection = await loop.request({ ...sel, correction: true });
    const without = await loop.request({ ...sel, correction: false });
    expect(withCorrection!.result.diagnostics.corrected).toBe(42);
    expect(without!.result.diagnostics.corrected).toBe(0);
    expect(Array.from(withCorrection!.result.bytes)).not.toEqual(
      Array.from(without!.result.bytes),
    );
    expect(svc.calls[0].body.correction).toBe(true);
    expect(svc.calls[1].body.correction).toBe(false);
  });

  it("reports errors only for the latest request", async () => {
    const errors: Error[] = [];
    const fetchFn = (async () => {
      return new Response(JSON.stringify({ detail: "unknown asset id 'ghost'" }), {
        status: 404,
        headers: { "Content-Type": "application/json" },
      });
    }) as typeof fetch;
    const loop = new RenderLoop(new ApiClient("", fetchFn), {
      onError: (e) => errors.push(e),
    });
    await loop.request({ ...withBody(), bodyId: "ghost" });
    expect(errors.length).toBe(1);
    expect(errors[0].message).toContain("body");
    expect(errors[0].message).toContain("ghost");
  });
});

describe("createDebouncedRender", () => {
  it("limits continuous scrubbing to at most one request per window", async () => {
    let fired = 0;
    const limiter = createDebouncedRender(() => {
      fired += 1;
    }, 50);
    const start = Date.now();
    while (Date.now() - start < 240) {
      limiter.request();
      await sleep(4);
    }
    await sleep(80);
    expect(fired).toBeGreaterThanOrEqual(3);
    expect(fired).toBeLessThanOrEqual(6); // ~one per 50 ms window
  });

  it("flush fires a pending request immediately", () => {
    let fired = 0;
    const limiter = createDebouncedRender(() => {
      fired += 1;
    }, 10_000);
    limiter.request();
    expect(fired).toBe(0);
    limiter.flush();
    expect(fired).toBe(1);
    limiter.dispose();
  });
});
