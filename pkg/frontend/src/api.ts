/**
 * Typed client for the chronicle inference service.
 *
 * Every number and token shown in the UI comes from these payloads; the
 * client never post-processes model output beyond JSON parsing. Forecast
 * calls share one AbortController so a timeline edit cancels whatever
 * request is still in flight.
 */

export interface Candidate {
  concept: string;
  name: string;
  type: string | null;
  probability: number;
  novelty: "new" | "recurring";
}

export interface ForecastRequest {
  items: string[];
  type?: string;
  novelty?: "new" | "recurring";
  k: number;
}

export interface ForecastResponse {
  candidates: Candidate[];
}

export interface GenerateRequest {
  items: string[];
  top_k: number;
  temperature?: number;
  seed: number;
  max_new_tokens: number;
}

export interface GeneratedItem {
  token: string;
  source: "prompt" | "generated";
  name?: string;
}

export interface GenerateResponse {
  items: GeneratedItem[];
  seed: number;
  top_k: number;
}

export interface SaliencyResponse {
  items: string[];
  target: string;
  scores: number[];
}

export interface VocabMatch {
  concept: string;
  name: string;
  type: string | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function readError(resp: Response): Promise<ApiError> {
  let code = "http_error";
  let detail = `${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: string; detail?: string };
    if (body.error) code = body.error;
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  return new ApiError(resp.status, code, detail);
}

export class Client {
  private forecastController: AbortController | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!resp.ok) throw await readError(resp);
    return (await resp.json()) as T;
  }

  /** Cancels any forecast still in flight before issuing the next one. */
  async forecast(req: ForecastRequest): Promise<ForecastResponse> {
    this.forecastController?.abort();
    const controller = new AbortController();
    this.forecastController = controller;
    try {
      return await this.post<ForecastResponse>("/v1/forecast", req, controller.signal);
    } finally {
      if (this.forecastController === controller) this.forecastController = null;
    }
  }

  cancelForecast(): void {
    this.forecastController?.abort();
    this.forecastController = null;
  }

  generate(req: GenerateRequest): Promise<GenerateResponse> {
    return this.post<GenerateResponse>("/v1/generate", req);
  }

  saliency(items: string[], target: string): Promise<SaliencyResponse> {
    return this.post<SaliencyResponse>("/v1/saliency", { items, target });
  }

  async vocab(query: string): Promise<VocabMatch[]> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/v1/vocab?query=${encodeURIComponent(query)}`,
    );
    if (!resp.ok) throw await readError(resp);
    const body = (await resp.json()) as { matches: VocabMatch[] };
    return body.matches;
  }

  async health(): Promise<{ status: string; model_version: string }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/v1/health`);
    if (!resp.ok) throw await readError(resp);
    return (await resp.json()) as { status: string; model_version: string };
  }
}
