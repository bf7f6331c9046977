/** Thin typed client for the sampling service. */

import type { SampleRequest, SampleResponse, SceneRecord, SceneSummary } from "./types.js";

export class ServiceError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public fieldPath?: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    const body = await resp.json();
    if (!resp.ok) {
      const err = body?.error ?? {};
      throw new ServiceError(resp.status, err.code ?? "unknown", err.message ?? resp.statusText, err.field_path);
    }
    return body as T;
  }

  health(): Promise<{ status: string; model_id: string }> {
    return this.request("/v1/health");
  }

  listScenes(): Promise<{ scenes: SceneSummary[] }> {
    return this.request("/v1/scenes");
  }

  getScene(id: string): Promise<SceneRecord> {
    return this.request(`/v1/scenes/${encodeURIComponent(id)}`);
  }

  sample(req: SampleRequest): Promise<SampleResponse> {
    return this.request("/v1/sample", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
