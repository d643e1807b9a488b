import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, parseDiagnosticsHeader, renderRequestBody } from "../src/api.js";
import { defaultSelection } from "../src/selection.js";

describe("parseDiagnosticsHeader", () => {
  it("parses the service header format", () => {
    expect(parseDiagnosticsHeader("pairs=2;confirmed=37;corrected=37")).toEqual({
      pairs: 2,
      confirmed: 37,
      corrected: 37,
    });
  });

  it("tolerates a missing header", () => {
    expect(parseDiagnosticsHeader(null)).toEqual({
      pairs: 0,
      confirmed: 0,
      corrected: 0,
    });
  });
});

describe("renderRequestBody", () => {
  it("mirrors the service request schema", () => {
    const sel = {
      ...defaultSelection(),
      bodyId: "body-7",
      slots: { upper: null, lower: "tube-skirt-7", outer: null },
      preset: "sway",
      frame: 3,
      correction: false,
    };
    const body = renderRequestBody(sel) as Record<string, unknown>;
    expect(body.body_asset_id).toBe("body-7");
    expect(body.lower_asset_id).toBe("tube-skirt-7");
    expect(body.upper_asset_id).toBeNull();
    expect(body.pose).toEqual({ preset: "sway", frame: 3 });
    expect(body.correction).toBe(false);
    expect(body.image_width).toBe(256);
  });
});

describe("ApiClient errors", () => {
  it("names the offending slot from the service detail", async () => {
    const fetchFn = (async () =>
      new Response(JSON.stringify({ detail: "unknown asset id 'tube-skirt-9'" }), {
        status: 404,
        headers: { "Content-Type": "application/json" },
      })) as typeof fetch;
    const client = new ApiClient("", fetchFn);
    const sel = {
      ...defaultSelection(),
      bodyId: "body-7",
      slots: { upper: null, lower: "tube-skirt-9", outer: null },
    };
    await expect(client.render(sel)).rejects.toThrowError(/lower: .*tube-skirt-9/);
    try {
      await client.render(sel);
    } catch (err) {
      expect((err as ApiError).status).toBe(404);
      expect((err as ApiError).slot).toBe("lower");
    }
  });

  it("incompatible composition surfaces the 422 detail", async () => {
    const fetchFn = (async () =>
      new Response(JSON.stringify({ detail: "joint count 6 != body 4" }), {
        status: 422,
        headers: { "Content-Type": "application/json" },
      })) as typeof fetch;
    const client = new ApiClient("", fetchFn);
    const sel = { ...defaultSelection(), bodyId: "body-7" };
    await expect(client.render(sel)).rejects.toThrowError(/joint count/);
  });

  it("catalog failures raise ApiError", async () => {
    const fetchFn = (async () => new Response("", { status: 500 })) as typeof fetch;
    await expect(new ApiClient("", fetchFn).getCatalog()).rejects.toBeInstanceOf(
      ApiError,
    );
  });
});
