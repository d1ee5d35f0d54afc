/** Thin typed client for the annotation service. */

import type {
  AnnotationRecordPayload,
  ApiError,
  BatchInfo,
  DiscrepancyInfo,
  TaskInfo,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: ApiError,
  ) {
    super(`${detail.type}: ${detail.message}`);
  }

  get isStaleAssignment(): boolean {
    return this.detail.type === "StaleAssignmentError";
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    const contentType = response.headers.get("content-type") ?? "";
    // Note: ndjson exports are line-delimited and must stay text.
    const isJson = /^application\/json\b/.test(contentType);
    if (!response.ok) {
      const detail: ApiError = isJson
        ? ((await response.json()).error ?? { type: "HttpError", message: response.statusText })
        : { type: "HttpError", message: await response.text() };
      throw new ServiceError(response.status, detail);
    }
    return (isJson ? await response.json() : await response.text()) as T;
  }

  async createBatch(
    objectIds: string[],
    validationFraction: number,
    batchId?: string,
  ): Promise<BatchInfo> {
    const body = JSON.stringify({
      object_ids: objectIds,
      validation_fraction: validationFraction,
      batch_id: batchId,
    });
    const payload = await this.request<{ batch: BatchInfo }>("/batches", {
      method: "POST",
      body,
    });
    return payload.batch;
  }

  async getBatch(batchId: string): Promise<BatchInfo> {
    const payload = await this.request<{ batch: BatchInfo }>(`/batches/${batchId}`);
    return payload.batch;
  }

  async nextTask(batchId: string, annotatorId: string): Promise<TaskInfo | null> {
    const payload = await this.request<{ task: TaskInfo | null }>(
      `/batches/${batchId}/tasks/next`,
      { method: "POST", body: JSON.stringify({ annotator_id: annotatorId }) },
    );
    return payload.task;
  }

  async submitAnnotation(assignmentId: number, record: AnnotationRecordPayload): Promise<void> {
    await this.request("/annotations", {
      method: "POST",
      body: JSON.stringify({ assignment_id: assignmentId, record }),
    });
  }

  async sampleValidation(batchId: string, seed: number): Promise<string[]> {
    const payload = await this.request<{ sampled_object_ids: string[] }>(
      `/batches/${batchId}/validate`,
      { method: "POST", body: JSON.stringify({ seed }) },
    );
    return payload.sampled_object_ids;
  }

  async discrepancies(batchId: string): Promise<DiscrepancyInfo[]> {
    const payload = await this.request<{ discrepancies: DiscrepancyInfo[] }>(
      `/batches/${batchId}/discrepancies`,
    );
    return payload.discrepancies;
  }

  async resolveDiscrepancy(discrepancyId: number, resolution: number | boolean): Promise<void> {
    await this.request(`/discrepancies/${discrepancyId}/resolve`, {
      method: "POST",
      body: JSON.stringify({ resolution }),
    });
  }

  async exportManifest(batchIds: string[]): Promise<string> {
    const query = batchIds.map((id) => `batch=${encodeURIComponent(id)}`).join("&");
    return this.request<string>(`/export?${query}`);
  }

  modelUrl(objectId: string): string {
    return `${this.baseUrl}/objects/${encodeURIComponent(objectId)}/model.glb`;
  }

  viewUrl(objectId: string, index: number, edges = false): string {
    const suffix = edges ? "?edges=true" : "";
    return `${this.baseUrl}/objects/${encodeURIComponent(objectId)}/views/${index}.png${suffix}`;
  }
}
