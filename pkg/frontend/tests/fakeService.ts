/** In-memory stand-in for the annotation service, exposed through a fake
 * fetch so tests exercise the real ApiClient request path. */

import type { AnnotationRecordPayload, TaskInfo } from "../src/types.js";

export interface SubmittedAnnotation {
  assignment_id: number;
  record: AnnotationRecordPayload;
}

export class FakeService {
  submissions: SubmittedAnnotation[] = [];
  failNextSubmitWith: "network" | "stale" | null = null;
  private queue: TaskInfo[] = [];
  private nextAssignmentId = 1;

  enqueueObjects(batchId: string, annotatorId: string, objectIds: string[]): void {
    for (const objectId of objectIds) {
      this.queue.push({
        assignment_id: this.nextAssignmentId++,
        batch_id: batchId,
        object_id: objectId,
        annotator_id: annotatorId,
        role: "PRIMARY",
        issued_at: "2026-08-09T10:00:00+00:00",
        expires_at: "2026-08-09T10:30:00+00:00",
        completed: false,
      });
    }
  }

  get fetch(): typeof fetch {
    return (async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      const method = init?.method ?? "GET";
      const json = (body: unknown, status = 200) =>
        new Response(JSON.stringify(body), {
          status,
          headers: { "content-type": "application/json" },
        });

      if (method === "POST" && /\/tasks\/next$/.test(url)) {
        const task = this.queue.shift() ?? null;
        return json({ schema_version: 1, task });
      }
      if (method === "POST" && url.endsWith("/annotations")) {
        if (this.failNextSubmitWith === "network") {
          this.failNextSubmitWith = null;
          throw new TypeError("fetch failed");
        }
        if (this.failNextSubmitWith === "stale") {
          this.failNextSubmitWith = null;
          return json(
            {
              schema_version: 1,
              error: { type: "StaleAssignmentError", message: "assignment was superseded" },
            },
            409,
          );
        }
        const body = JSON.parse(String(init?.body)) as SubmittedAnnotation;
        this.submissions.push(body);
        return json({ schema_version: 1, accepted: true, version: this.submissions.length });
      }
      return json(
        { schema_version: 1, error: { type: "HttpError", message: `no route for ${method} ${url}` } },
        404,
      );
    }) as typeof fetch;
  }
}
