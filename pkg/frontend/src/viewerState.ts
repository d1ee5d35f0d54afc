/** Pure viewer state: orbit parameters, edge-overlay flag, load status.
 *
 * The edge toggle never touches the camera; toggling while the model is
 * still loading queues the flip until it becomes ready.
 */

export type LoadStatus = "loading" | "ready" | "error";

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
}

export interface ViewerState {
  objectId: string | null;
  orbit: OrbitState;
  edgesVisible: boolean;
  loadStatus: LoadStatus;
  queuedEdgeToggles: number;
}

export const DEFAULT_ORBIT: OrbitState = { azimuthDeg: 45, elevationDeg: 25, distance: 3 };

const MIN_DISTANCE = 1e-3;
const MAX_ELEVATION = 89;

export function initialViewerState(objectId: string | null = null): ViewerState {
  return {
    objectId,
    orbit: { ...DEFAULT_ORBIT },
    edgesVisible: false,
    loadStatus: objectId === null ? "error" : "loading",
    queuedEdgeToggles: 0,
  };
}

/** Flip the wireframe overlay; camera state is untouched by construction. */
export function toggleEdges(state: ViewerState): ViewerState {
  if (state.loadStatus === "loading") {
    return { ...state, queuedEdgeToggles: state.queuedEdgeToggles + 1 };
  }
  return { ...state, edgesVisible: !state.edgesVisible };
}

/** Apply queued toggles once the asset finishes loading. */
export function markReady(state: ViewerState): ViewerState {
  const flips = state.queuedEdgeToggles % 2 === 1;
  return {
    ...state,
    loadStatus: "ready",
    edgesVisible: flips ? !state.edgesVisible : state.edgesVisible,
    queuedEdgeToggles: 0,
  };
}

export function markError(state: ViewerState): ViewerState {
  return { ...state, loadStatus: "error", queuedEdgeToggles: 0 };
}

export function rotateOrbit(state: ViewerState, deltaAzimuthDeg: number, deltaElevationDeg: number): ViewerState {
  const elevation = Math.max(
    -MAX_ELEVATION,
    Math.min(MAX_ELEVATION, state.orbit.elevationDeg + deltaElevationDeg),
  );
  const azimuth = (((state.orbit.azimuthDeg + deltaAzimuthDeg) % 360) + 360) % 360;
  return { ...state, orbit: { ...state.orbit, azimuthDeg: azimuth, elevationDeg: elevation } };
}

export function zoomOrbit(state: ViewerState, factor: number): ViewerState {
  const distance = Math.max(MIN_DISTANCE, state.orbit.distance * factor);
  return { ...state, orbit: { ...state.orbit, distance } };
}

/** Camera position on the orbit sphere around the origin. */
export function orbitToPosition(orbit: OrbitState): [number, number, number] {
  const azimuth = (orbit.azimuthDeg * Math.PI) / 180;
  const elevation = (orbit.elevationDeg * Math.PI) / 180;
  const horizontal = orbit.distance * Math.cos(elevation);
  return [
    horizontal * Math.cos(azimuth),
    orbit.distance * Math.sin(elevation),
    horizontal * Math.sin(azimuth),
  ];
}
