/** Typed client for the local picker service. Server messages surface verbatim. */

import { parsePly, type ParsedMesh } from "./ply.js";

export interface FragmentInfo {
  id: string;
  vertices: number;
  faces: number;
}

export interface RegisterResponse {
  source_id: string;
  target_id: string;
  transform: number[];
  coarse_rmse: number;
  rmse: number;
  iterations: number;
  converged: boolean;
  trace: number[];
  coarse_only: boolean;
  low_condition: boolean;
}

export interface PreviewResponse {
  source_id: string;
  target_id: string;
  transform: number[];
  rmse: number;
  iterations: number;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

async function failure(resp: Response): Promise<ApiError> {
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, message);
}

export class PickerApi {
  readonly base: string;
  private fetchImpl: typeof fetch;

  constructor(base = "", fetchImpl: typeof fetch = fetch) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.base + path);
    if (!resp.ok) throw await failure(resp);
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await failure(resp);
    return (await resp.json()) as T;
  }

  listFragments(): Promise<FragmentInfo[]> {
    return this.getJson<FragmentInfo[]>("/api/fragments");
  }

  async fetchMesh(fragmentId: string): Promise<ParsedMesh> {
    const resp = await this.fetchImpl(
      `${this.base}/api/fragments/${encodeURIComponent(fragmentId)}/mesh`,
    );
    if (!resp.ok) throw await failure(resp);
    return parsePly(await resp.arrayBuffer());
  }

  postCorrespondences(payload: {
    source_id: string;
    target_id: string;
    pairs: { src: number[]; dst: number[] }[];
  }): Promise<{ stored: string; pairs: number }> {
    return this.postJson("/api/correspondences", payload);
  }

  register(sourceId: string, targetId: string): Promise<RegisterResponse> {
    return this.postJson("/api/register", {
      source_id: sourceId,
      target_id: targetId,
    });
  }

  preview(): Promise<PreviewResponse> {
    return this.getJson<PreviewResponse>("/api/preview");
  }

  merge(): Promise<{ mesh_id: string }> {
    return this.postJson("/api/merge", {});
  }

  async fetchResult(meshId: string): Promise<ParsedMesh> {
    const resp = await this.fetchImpl(
      `${this.base}/api/result/${encodeURIComponent(meshId)}`,
    );
    if (!resp.ok) throw await failure(resp);
    return parsePly(await resp.arrayBuffer());
  }
}
