// Thin typed wrapper over the asset service's HTTP API. Everything the
// viewer knows about the backend flows through these three calls; there is
// no other data path.

export interface MetaResponse {
  num_frames: number;
  num_views: number;
  point_counts: number[];
  content_hash: string;
  config: Record<string, unknown>;
}

export interface ScoreSummary {
  min: number;
  max: number;
  mean: number;
}

export interface QueryFrame {
  t: number;
  labels: string; // base64 little-endian u16
  scores: ScoreSummary;
}

export interface QueryResponse {
  classes: string[];
  no_label_index: number;
  no_label_name: string;
  frames: QueryFrame[];
  query_ms: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Server said no: carries the HTTP status plus the `detail` message. */
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const doc = await resp.json();
    if (doc && typeof doc.detail === "string") return doc.detail;
    return JSON.stringify(doc);
  } catch {
    return `${resp.status} ${resp.statusText}`;
  }
}

export class ApiClient {
  constructor(
    private baseUrl = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async getMeta(): Promise<MetaResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/meta`);
    if (!resp.ok) throw new ApiError(await errorDetail(resp), resp.status);
    return (await resp.json()) as MetaResponse;
  }

  /** Interleaved x,y,z,r,g,b float32 per point (6 floats, 24 bytes each). */
  async getFramePoints(t: number): Promise<Float32Array> {
    const resp = await this.fetchFn(`${this.baseUrl}/frame/${t}/points`);
    if (!resp.ok) throw new ApiError(await errorDetail(resp), resp.status);
    const buf = await resp.arrayBuffer();
    if (buf.byteLength % 24 !== 0) {
      throw new ApiError(
        `frame payload is not a whole number of points: ${buf.byteLength} bytes`,
        resp.status,
      );
    }
    // The wire format is little-endian; so is every platform a browser runs on.
    return new Float32Array(buf);
  }

  async postQuery(
    prompts: string[],
    tau: number | null,
    signal?: AbortSignal,
  ): Promise<QueryResponse> {
    const body = tau === null ? { prompts } : { prompts, tau };
    const resp = await this.fetchFn(`${this.baseUrl}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!resp.ok) throw new ApiError(await errorDetail(resp), resp.status);
    return (await resp.json()) as QueryResponse;
  }
}
