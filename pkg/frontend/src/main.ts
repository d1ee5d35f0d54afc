/** Browser entry point: wires URL parameters to a live session. */

import { ApiClient } from "./api.js";
import { AnnotationApp } from "./app.js";
import { AnnotationSession } from "./session.js";
import { createViewer } from "./viewer3d.js";

function requireParam(params: URLSearchParams, name: string): string {
  const value = params.get(name);
  if (!value) {
    throw new Error(`missing ?${name}= query parameter`);
  }
  return value;
}

function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  let batchId: string;
  let annotatorId: string;
  try {
    batchId = requireParam(params, "batch");
    annotatorId = requireParam(params, "annotator");
  } catch (error) {
    root.textContent = `${String(error)} — open as /ui/?batch=<id>&annotator=<name>`;
    return;
  }

  const api = new ApiClient(params.get("api") ?? "");
  const session = new AnnotationSession(api, batchId, annotatorId);
  const canvas = document.createElement("canvas");
  canvas.width = 720;
  canvas.height = 540;
  const viewer = createViewer(canvas);

  const app = new AnnotationApp(root, {
    api,
    session,
    viewer,
    thumbnails: Number(params.get("thumbs") ?? "6"),
  });
  const pane = root.querySelector(".viewer-pane");
  pane?.prepend(canvas);
  void app.start();
}

bootstrap();
