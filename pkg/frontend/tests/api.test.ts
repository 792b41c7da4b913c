import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import type { QueryRequest } from "../src/types.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

const META = {
  request_id: "req-000001",
  gaussians: 40,
  levels: 2,
  L: 8,
  K: 2,
  D: 8,
  size_cap: 128,
  queries: ["class0", "class1"],
  default_camera: null,
};

describe("ApiClient", () => {
  it("fetches and parses /meta", async () => {
    const calls: string[] = [];
    const client = new ApiClient("http://host:1/", async (url) => {
      calls.push(String(url));
      return jsonResponse(200, META);
    });
    const meta = await client.meta();
    expect(calls).toEqual(["http://host:1/meta"]); // trailing slash stripped
    expect(meta.queries).toEqual(["class0", "class1"]);
    expect(meta.L).toBe(8);
  });

  it("posts the exact query wire format", async () => {
    let body: QueryRequest | null = null;
    const client = new ApiClient("http://host:1", async (_url, init) => {
      body = JSON.parse(String(init?.body));
      return jsonResponse(200, {
        request_id: "req-000002",
        query: "class0",
        level: 1,
        timings_ms: { render_ms: 1, decode_ms: 0.1, post_ms: 0.2 },
        point: [3, 4],
        score_stats: { min: 0, max: 1, mean: 0.5 },
        settings: {},
        overlay_png_base64: "aGk=",
      });
    });
    const request: QueryRequest = {
      camera: { position: [0, 0, -3], look_at: [0, 0, 0], up: [0, 1, 0], fov_y_deg: 42 },
      width: 64,
      height: 64,
      query: "class0",
      level: "auto",
      window: 3,
    };
    const response = await client.query(request);
    expect(body).toEqual(request);
    expect(response.level).toBe(1);
    expect(response.timings_ms.decode_ms).toBeCloseTo(0.1);
  });

  it("maps error payloads onto ApiError", async () => {
    const client = new ApiClient("http://host:1", async () =>
      jsonResponse(404, { error: "unknown query 'x'", available: ["class0"] })
    );
    const err = await client
      .query({
        camera: { position: [0, 0, -3], look_at: [0, 0, 0] },
        width: 8,
        height: 8,
        query: "x",
        level: "auto",
        window: 3,
      })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(err.message).toContain("unknown query");
    expect(err.available).toEqual(["class0"]);
  });

  it("surfaces size-cap rejections", async () => {
    const client = new ApiClient("http://host:1", async () =>
      jsonResponse(413, { error: "requested 4096x4096 exceeds the size cap of 512" })
    );
    const err = await client
      .render({ camera: { position: [0, 0, -3], look_at: [0, 0, 0] }, width: 4096, height: 4096 })
      .catch((e) => e);
    expect(err.status).toBe(413);
    expect(err.message).toContain("size cap");
  });
});
