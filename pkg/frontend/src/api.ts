import type { PromptInfo, RenderRequest, ServiceMeta } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function errorMessage(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    return body.error ?? resp.statusText;
  } catch {
    return resp.statusText;
  }
}

/** Thin read-only client over the render service; all rendering stays server-side. */
export class RenderClient {
  constructor(readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/health`);
      return resp.ok;
    } catch {
      return false;
    }
  }

  async prompts(): Promise<PromptInfo[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/prompts`);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorMessage(resp));
    }
    return (await resp.json()) as PromptInfo[];
  }

  async meta(): Promise<ServiceMeta> {
    const resp = await this.fetchFn(`${this.baseUrl}/meta`);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorMessage(resp));
    }
    return (await resp.json()) as ServiceMeta;
  }

  /** POST /render -> PNG bytes. */
  async render(request: RenderRequest): Promise<Blob> {
    const resp = await this.fetchFn(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorMessage(resp));
    }
    return await resp.blob();
  }
}
