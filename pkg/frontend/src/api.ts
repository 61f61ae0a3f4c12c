import type { AnnotateResponse, DatasetInfo, LabelEntry, ProposalBatch, Status } from "./types";

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new Error(`GET ${url} failed: ${resp.status} ${await resp.text()}`);
  }
  return resp.json() as Promise<T>;
}

/** Thin typed client over the annotation service; base is "" when co-hosted. */
export class ApiClient {
  constructor(private base = "") {}

  getStatus(): Promise<Status> {
    return getJson(`${this.base}/api/status`);
  }

  getDataset(): Promise<DatasetInfo> {
    return getJson(`${this.base}/api/dataset`);
  }

  getProposals(imageId: string, stage?: number): Promise<ProposalBatch> {
    const suffix = stage === undefined ? "" : `?stage=${stage}`;
    return getJson(`${this.base}/api/images/${encodeURIComponent(imageId)}/proposals${suffix}`);
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}`;
  }

  async postAnnotations(imageId: string, labels: LabelEntry[]): Promise<AnnotateResponse> {
    const resp = await fetch(`${this.base}/api/annotations`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, labels }),
    });
    if (!resp.ok) {
      throw new Error(`POST /api/annotations failed: ${resp.status} ${await resp.text()}`);
    }
    return resp.json() as Promise<AnnotateResponse>;
  }

  async advanceStage(): Promise<{ status: string; stage: number }> {
    const resp = await fetch(`${this.base}/api/stage/advance`, { method: "POST" });
    if (resp.status === 409) {
      throw new Error("a stage is already running");
    }
    if (!resp.ok) {
      throw new Error(`POST /api/stage/advance failed: ${resp.status}`);
    }
    return resp.json() as Promise<{ status: string; stage: number }>;
  }
}
