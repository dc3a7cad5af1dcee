import { describe, expect, it, vi } from "vitest";

import { ApiError, RenderClient } from "../src/api.js";
import type { RenderRequest } from "../src/types.js";

function fakeFetch(handler: (url: string, init?: RequestInit) => Response) {
  return vi.fn(async (url: RequestInfo | URL, init?: RequestInit) =>
    handler(String(url), init));
}

describe("RenderClient", () => {
  it("fetches and types the prompt list", async () => {
    const body = [{ id: 0, text: "a blob in red", split: "seen" }];
    const fetchFn = fakeFetch(() => new Response(JSON.stringify(body)));
    const client = new RenderClient("http://svc", fetchFn as unknown as typeof fetch);
    const prompts = await client.prompts();
    expect(fetchFn).toHaveBeenCalledWith("http://svc/prompts");
    expect(prompts[0].split).toBe("seen");
  });

  it("posts the render request verbatim and returns bytes", async () => {
    let captured: { url: string; body: string } | null = null;
    const png = new Uint8Array([0x89, 0x50, 0x4e, 0x47]);
    const fetchFn = fakeFetch((url, init) => {
      captured = { url, body: String(init?.body) };
      return new Response(png, { headers: { "Content-Type": "image/png" } });
    });
    const client = new RenderClient("http://svc", fetchFn as unknown as typeof fetch);
    const request: RenderRequest = {
      pair: [0, 1], alpha: 0.25, azimuth_deg: 90, elevation_deg: 20,
      distance: 2.5, focal: 1, size: 64, samples: 32,
    };
    const blob = await client.render(request);
    expect(captured!.url).toBe("http://svc/render");
    expect(JSON.parse(captured!.body)).toEqual(request);
    expect(new Uint8Array(await blob.arrayBuffer())).toEqual(png);
  });

  it("surfaces service errors with status and message", async () => {
    const fetchFn = fakeFetch(() =>
      new Response(JSON.stringify({ error: "alpha is only valid with a prompt pair" }),
                   { status: 400 }));
    const client = new RenderClient("http://svc", fetchFn as unknown as typeof fetch);
    await expect(client.render({ prompt_id: 1, alpha: 0.5 } as never))
      .rejects.toMatchObject({ status: 400, message: "alpha is only valid with a prompt pair" });
    await expect(client.render({} as never)).rejects.toBeInstanceOf(ApiError);
  });

  it("health returns false when the service is unreachable", async () => {
    const fetchFn = vi.fn(async () => {
      throw new Error("connection refused");
    });
    const client = new RenderClient("http://svc", fetchFn as unknown as typeof fetch);
    expect(await client.health()).toBe(false);
  });
});
