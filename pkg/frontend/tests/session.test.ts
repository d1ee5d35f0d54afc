/** Session behavior: retry keeps local state, stale assignments reload. */

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotationSession } from "../src/session.js";
import { FakeService } from "./fakeService.js";

function makeSession(objectIds: string[]) {
  const service = new FakeService();
  service.enqueueObjects("b1", "alice", objectIds);
  const api = new ApiClient("", service.fetch);
  return { service, session: new AnnotationSession(api, "b1", "alice") };
}

function completeAnnotation(session: AnnotationSession, score: 0 | 1 | 2 | 3): void {
  session.setExpertScore(score);
  session.tags.set("is_scene", true);
  session.tags.confirmDefaults();
}

describe("AnnotationSession", () => {
  it("loads tasks and resets per-task state", async () => {
    const { session } = makeSession(["a", "b"]);
    const task = await session.loadNext();
    expect(task?.object_id).toBe("a");
    expect(session.flow.step).toBe("IDENTIFIABLE");
    expect(session.canSubmit).toBe(false);
  });

  it("submits and advances to the next task", async () => {
    const { service, session } = makeSession(["a", "b"]);
    await session.loadNext();
    completeAnnotation(session, 2);
    const next = await session.submitAndNext();
    expect(service.submissions).toHaveLength(1);
    expect(service.submissions[0].record.object_id).toBe("a");
    expect(service.submissions[0].record.tags.is_scene).toBe(true);
    expect(next?.object_id).toBe("b");
    expect(session.snapshot.submitted).toBe(1);
    // Per-task state was reset for the new object.
    expect(session.canSubmit).toBe(false);
  });

  it("finishes when the queue is exhausted", async () => {
    const { session } = makeSession(["a"]);
    await session.loadNext();
    completeAnnotation(session, 0);
    const next = await session.submitAndNext();
    expect(next).toBeNull();
    expect(session.snapshot.status).toBe("finished");
  });

  it("keeps local state and raises a retry banner on network failure", async () => {
    const { service, session } = makeSession(["a"]);
    await session.loadNext();
    completeAnnotation(session, 3);
    service.failNextSubmitWith = "network";
    await expect(session.submitAndNext()).rejects.toThrow();
    expect(session.snapshot.status).toBe("retry");
    expect(session.snapshot.banner).toContain("kept");
    // Nothing was lost; the retry goes through.
    expect(session.canSubmit).toBe(true);
    const next = await session.submitAndNext();
    expect(service.submissions).toHaveLength(1);
    expect(next).toBeNull();
  });

  it("discards state and loads the replacement on a stale assignment", async () => {
    const { service, session } = makeSession(["a", "b"]);
    await session.loadNext();
    completeAnnotation(session, 1);
    service.failNextSubmitWith = "stale";
    const replacement = await session.submitAndNext();
    expect(service.submissions).toHaveLength(0);
    expect(replacement?.object_id).toBe("b");
    expect(session.canSubmit).toBe(false); // local annotation discarded
  });

  it("refuses to build an incomplete record", async () => {
    const { session } = makeSession(["a"]);
    await session.loadNext();
    session.setExpertScore(2);
    expect(session.canSubmit).toBe(false); // tags untouched
    expect(() => session.buildRecord()).toThrow(/incomplete/);
  });
});
