import type { Meta, QueryRequest, QueryResponse, RenderRequest } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public available?: string[]
  ) {
    super(message);
  }
}

type Fetcher = typeof fetch;

async function errorFrom(response: Response): Promise<ApiError> {
  const body = await response.json().catch(() => null);
  return new ApiError(
    response.status,
    body?.error ?? `request failed with status ${response.status}`,
    body?.available
  );
}

/** Thin client for the serve-mode endpoints; fetch is injectable for tests. */
export class ApiClient {
  private base: string;

  constructor(baseUrl: string, private fetcher: Fetcher = fetch) {
    this.base = baseUrl.replace(/\/$/, "");
  }

  async meta(): Promise<Meta> {
    const response = await this.fetcher(`${this.base}/meta`);
    if (!response.ok) throw await errorFrom(response);
    return response.json();
  }

  async render(request: RenderRequest): Promise<Blob> {
    const response = await this.fetcher(`${this.base}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) throw await errorFrom(response);
    return response.blob();
  }

  async query(request: QueryRequest): Promise<QueryResponse> {
    const response = await this.fetcher(`${this.base}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) throw await errorFrom(response);
    return response.json();
  }
}
